"""
Comparación de escenarios de fine-tuning con imágenes cifradas.
Entrena plain, proposed y without_da desde el mismo modelo fuente y exporta las curvas a CSV.
"""

import argparse
import os
import sys
from pathlib import Path

# Agregar el directorio actual al path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.blockcodec import EncryptionKeys
from src.config import PRECISIONS, TrainOptions, make_deterministic, setup_logging
from src.errors import CipherPatchError
from src.keyperm import derive_keys
from src.metrics import save_metrics_to_csv
from src.models import ViTConfig, get_model_info, load_params, save_params
from src.pipeline import SCENARIOS, compare_scenarios, pretrain_source


def train_scenarios(scenarios, keys: EncryptionKeys, cfg: ViTConfig, opts: TrainOptions,
                    output_dir: str, weights: str = None, save_models: bool = False):
    """
    Entrena los escenarios pedidos y guarda una curva por escenario.

    Args:
        scenarios: Escenarios a ejecutar
        keys: Claves de cifrado
        cfg: Configuración del ViT
        opts: Hiperparámetros
        output_dir: Directorio de salida
        weights: Modelo fuente (opcional; si no se pre-entrena uno)
        save_models: Guardar también los modelos finales

    Returns:
        Dict escenario → ExperimentResult
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    print(f"🚀 Iniciando comparación: {', '.join(scenarios)}")
    print(f"   📊 Epochs: {opts.epochs}, Batch size: {opts.batch_size}, Seed: {opts.seed}")
    print(f"   🎯 Learning rate: {opts.lr}, momentum: {opts.momentum}, weight decay: {opts.weight_decay}")
    print(f"   🔑 Claves: k1={keys.k1}, k2={keys.k2}, bloque={keys.p}")

    if weights:
        source = load_params(weights, cfg)
        print(f"📁 Modelo fuente: {weights}")
    else:
        source = pretrain_source(cfg, opts)
        save_params(source, out / "source.vitw")
        print(f"💾 Modelo fuente pre-entrenado guardado en {out / 'source.vitw'}")

    info = get_model_info(source)
    print(f"   🧠 Modelo: {info['name']}")
    print(f"   🔢 Parámetros: {info['parameters']:,}")

    results = compare_scenarios(keys, cfg, opts, source=source, scenarios=tuple(scenarios))

    for name, result in results.items():
        csv_path = out / f"{name}.csv"
        save_metrics_to_csv(result.records, csv_path)
        print(f"📝 Curvas de {name} guardadas en {csv_path}")
        if save_models:
            save_params(result.model, out / f"{name}.vitw")

    print("\n📈 Accuracy final en test:")
    for name, result in results.items():
        final = result.records[-1].test_acc if result.records else float('nan')
        print(f"   {name:<11} {final * 100:6.2f}%")

    return results


def main(argv=None) -> int:
    defaults = TrainOptions()
    parser = argparse.ArgumentParser(description='Fine-tuning de un ViT con imágenes cifradas por bloques')
    parser.add_argument('--scenario', choices=SCENARIOS + ('all',), default='all',
                        help='Escenario a entrenar (default: all)')
    parser.add_argument('--epochs', type=int, default=defaults.epochs,
                        help=f'Número de epochs (default: {defaults.epochs})')
    parser.add_argument('--batch_size', type=int, default=defaults.batch_size,
                        help=f'Tamaño del batch (default: {defaults.batch_size})')
    parser.add_argument('--lr', type=float, default=defaults.lr,
                        help=f'Learning rate (default: {defaults.lr})')
    parser.add_argument('--momentum', type=float, default=defaults.momentum)
    parser.add_argument('--weight_decay', type=float, default=defaults.weight_decay)
    parser.add_argument('--seed', type=int, default=defaults.seed,
                        help='Semilla de datos, inicialización y orden de batches')
    parser.add_argument('--key_seed', type=int, default=42,
                        help='Semilla para derivar k1 y k2 (default: 42)')
    parser.add_argument('--pretrain_epochs', type=int, default=defaults.pretrain_epochs)
    parser.add_argument('--precision', choices=sorted(PRECISIONS), default=defaults.precision,
                        help=f'Precisión del entrenamiento (default: {defaults.precision})')
    parser.add_argument('--weights', type=str, default=None,
                        help='Modelo fuente VITW (opcional)')
    parser.add_argument('--output_dir', type=str, default='results',
                        help='Directorio para CSV y modelos (default: results)')
    parser.add_argument('--save_models', action='store_true',
                        help='Guardar el modelo final de cada escenario')
    parser.add_argument('--verbose', '-v', action='store_true')
    args = parser.parse_args(argv)

    setup_logging(args.verbose)
    try:
        make_deterministic()
        cfg = ViTConfig()
        k1, k2 = derive_keys(args.key_seed)
        keys = EncryptionKeys(k1=k1, k2=k2, p=cfg.patch_size)
        opts = TrainOptions(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                            weight_decay=args.weight_decay, batch_size=args.batch_size,
                            seed=args.seed, pretrain_epochs=args.pretrain_epochs,
                            precision=args.precision, show_progress=True)
        scenarios = SCENARIOS if args.scenario == 'all' else (args.scenario,)
        train_scenarios(scenarios, keys, cfg, opts, args.output_dir,
                        weights=args.weights, save_models=args.save_models)
    except (CipherPatchError, OSError) as e:
        print(f"❌ Error: {e}")
        return 1

    print("🎉 ¡Entrenamiento completado exitosamente!")
    return 0


if __name__ == "__main__":
    exit(main())
