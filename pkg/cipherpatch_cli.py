#!/usr/bin/env python3
"""
CipherPatch por línea de comandos.
Cifrado por bloques, adaptación del ViT, inferencia, verificación de equivalencia y entrenamiento.

Subcomandos: keygen, init, gen-images, encrypt, decrypt, adapt, infer, verify, train.
"""

import argparse
import os
import sys
from typing import List, Optional

# Agregar el directorio actual al path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.adapt import adapt_model, load_adapted, save_adapted, verify_equivalence, write_report_rows
from src.blockcodec import ENCRYPTION_MODES, EncryptionKeys, decrypt_image, encrypt_image
from src.config import PRECISIONS, TrainOptions, make_deterministic, setup_logging
from src.dataset import gen_synthetic_dataset, load_image_dir, save_dataset_images
from src.errors import CipherPatchError
from src.keyperm import MASK64, derive_keys
from src.metrics import save_metrics_to_csv
from src.models import ViTConfig, init_params, load_params, predict_logits, save_params
from src.pipeline import SCENARIOS, run_experiment
from src.utils.imagen import load_image, save_image

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 2


def parse_key(value: str) -> int:
    """Clave de 64 bits sin signo, en decimal o hexadecimal con prefijo 0x."""
    text = value.strip()
    try:
        key = int(text[2:], 16) if text.lower().startswith('0x') else int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"clave no decimal ni hexadecimal: {value}")
    if key < 0 or key > MASK64:
        raise argparse.ArgumentTypeError(f"la clave debe estar en [0, 2^64): {value}")
    return key


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"se esperaba un entero >= 1: {value}")
    return number


def keys_from_args(args: argparse.Namespace) -> EncryptionKeys:
    """Construye las claves según --mode; exige las claves que el modo usa."""
    if args.mode in ('block', 'both') and args.k1 is None:
        raise CipherPatchError(f"--k1 es obligatoria en modo {args.mode}")
    if args.mode in ('pixel', 'both') and args.k2 is None:
        raise CipherPatchError(f"--k2 es obligatoria en modo {args.mode}")
    return EncryptionKeys.for_mode(args.mode, args.k1, args.k2, args.block)


def cmd_keygen(args: argparse.Namespace) -> int:
    k1, k2 = derive_keys(args.seed)
    print(f"k1={k1}")
    print(f"k2={k2}")
    return EXIT_OK


def cmd_encrypt(args: argparse.Namespace) -> int:
    keys = keys_from_args(args)
    image = load_image(args.input)
    save_image(encrypt_image(image, keys), args.output)
    print(f"🔒 Imagen cifrada guardada en: {args.output}")
    return EXIT_OK


def cmd_decrypt(args: argparse.Namespace) -> int:
    keys = keys_from_args(args)
    image = load_image(args.input)
    save_image(decrypt_image(image, keys), args.output)
    print(f"🔓 Imagen descifrada guardada en: {args.output}")
    return EXIT_OK


def cmd_adapt(args: argparse.Namespace) -> int:
    keys = keys_from_args(args)
    source = load_params(args.weights)
    sidecar = save_adapted(adapt_model(source, keys), args.output)
    print(f"🧩 Modelo adaptado guardado en: {args.output}")
    print(f"   📝 Procedencia: {sidecar}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    model = load_params(args.weights)
    logits = predict_logits(model, load_image(args.image))[0]
    print(" ".join(repr(float(v)) for v in logits))
    print(int(logits.argmax()))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    keys = keys_from_args(args)
    source = load_params(args.weights)
    adapted = load_adapted(args.adapted) if args.adapted else adapt_model(source, keys)
    names, images = load_image_dir(args.images, source.cfg)
    report = verify_equivalence(source, adapted, images, keys, tol=args.tol)

    if args.output:
        report.to_csv(args.output, names)
    else:
        write_report_rows(sys.stdout, report, names)

    status = "✅" if report.all_passed else "❌"
    print(f"{status} {len(names) - report.num_failed}/{len(names)} imágenes dentro de la tolerancia "
          f"(máx. {report.aggregate_max:.3e})", file=sys.stderr)
    return EXIT_OK if report.all_passed else EXIT_VERIFY_FAILED


def cmd_train(args: argparse.Namespace) -> int:
    source = load_params(args.weights) if args.weights else None
    cfg = source.cfg if source is not None else ViTConfig()
    block = args.block if args.block is not None else cfg.patch_size
    if args.scenario == 'plain':
        keys = EncryptionKeys.identity_keys(block)
    else:
        args.block = block
        keys = keys_from_args(args)

    opts = TrainOptions(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                        weight_decay=args.weight_decay, batch_size=args.batch, seed=args.seed,
                        pretrain_epochs=args.pretrain_epochs, precision=args.precision,
                        show_progress=True)
    result = run_experiment(args.scenario, keys, cfg, opts, source=source)
    save_metrics_to_csv(result.records, args.output)
    print(f"📊 Curvas de entrenamiento guardadas en: {args.output}")
    if args.save_model:
        save_params(result.model, args.save_model)
        print(f"💾 Modelo guardado en: {args.save_model}")
    return EXIT_OK


def cmd_init(args: argparse.Namespace) -> int:
    cfg = ViTConfig(patch_size=args.patch, num_classes=args.classes)
    save_params(init_params(cfg, args.seed), args.output)
    print(f"💾 Modelo inicializado guardado en: {args.output}")
    return EXIT_OK


def cmd_gen_images(args: argparse.Namespace) -> int:
    cfg = ViTConfig(patch_size=args.patch, num_classes=args.classes)
    dataset = gen_synthetic_dataset(args.seed, args.per_class, cfg.num_classes, cfg, split='test')
    paths = save_dataset_images(dataset, args.output, suffix=args.format)
    print(f"🖼️ {len(paths)} imágenes sintéticas guardadas en: {args.output}")
    return EXIT_OK


def _add_key_args(parser: argparse.ArgumentParser, block_required: bool = True) -> None:
    parser.add_argument('--k1', type=parse_key, default=None, help='Clave de block scrambling (u64)')
    parser.add_argument('--k2', type=parse_key, default=None, help='Clave de pixel shuffling (u64)')
    parser.add_argument('--block', type=positive_int, required=block_required, default=None,
                        help='Tamaño de bloque en píxeles')
    parser.add_argument('--mode', choices=ENCRYPTION_MODES, default='both',
                        help='Pasos de cifrado a aplicar (default: both)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='CipherPatch - cifrado por bloques y ViT adaptado a imágenes cifradas')
    parser.add_argument('--verbose', '-v', action='store_true', help='Logging en modo DEBUG')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('keygen', help='Deriva un par de claves a partir de una semilla')
    p.add_argument('--seed', type=parse_key, required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser('init', help='Crea un modelo con inicialización determinista')
    p.add_argument('--out', dest='output', required=True, help='Pesos de salida (VITW)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--patch', type=positive_int, default=ViTConfig.patch_size)
    p.add_argument('--classes', type=positive_int, default=ViTConfig.num_classes)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser('gen-images', help='Escribe imágenes sintéticas de prueba en un directorio')
    p.add_argument('--out', dest='output', required=True, help='Directorio de salida')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--per-class', dest='per_class', type=positive_int, default=1)
    p.add_argument('--patch', type=positive_int, default=ViTConfig.patch_size)
    p.add_argument('--classes', type=positive_int, default=ViTConfig.num_classes)
    p.add_argument('--format', choices=('.imgt', '.ppm'), default='.imgt')
    p.set_defaults(func=cmd_gen_images)

    for name, func, text in (('encrypt', cmd_encrypt, 'Cifra una imagen'),
                             ('decrypt', cmd_decrypt, 'Descifra una imagen')):
        p = sub.add_parser(name, help=text)
        p.add_argument('--in', dest='input', required=True, help='Imagen de entrada (.ppm/.pgm/.imgt)')
        p.add_argument('--out', dest='output', required=True, help='Imagen de salida')
        _add_key_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser('adapt', help='Adapta los embeddings de un modelo a las claves')
    p.add_argument('--weights', required=True, help='Pesos fuente (VITW)')
    p.add_argument('--out', dest='output', required=True, help='Pesos adaptados (VITW)')
    _add_key_args(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser('infer', help='Logits y clase predicha para una imagen')
    p.add_argument('--weights', required=True)
    p.add_argument('--image', required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('verify', help='Verifica la equivalencia plano/cifrado')
    p.add_argument('--weights', required=True, help='Pesos fuente (VITW)')
    p.add_argument('--adapted', default=None,
                   help='Pesos adaptados con procedencia (por defecto se adaptan con las claves dadas)')
    p.add_argument('--images', required=True, help='Directorio con imágenes planas')
    p.add_argument('--tol', type=float, default=1e-4, help='Tolerancia sobre los logits (default: 1e-4)')
    p.add_argument('--out', dest='output', default=None, help='CSV del reporte (default: stdout)')
    _add_key_args(p)
    p.set_defaults(func=cmd_verify)

    defaults = TrainOptions()
    p = sub.add_parser('train', help='Fine-tuning en un escenario y exportación de curvas')
    p.add_argument('--scenario', choices=SCENARIOS, required=True)
    p.add_argument('--epochs', type=int, default=defaults.epochs)
    p.add_argument('--lr', type=float, default=defaults.lr)
    p.add_argument('--momentum', type=float, default=defaults.momentum)
    p.add_argument('--weight-decay', dest='weight_decay', type=float, default=defaults.weight_decay)
    p.add_argument('--batch', type=positive_int, default=defaults.batch_size)
    p.add_argument('--seed', type=int, default=defaults.seed)
    p.add_argument('--pretrain-epochs', dest='pretrain_epochs', type=int, default=defaults.pretrain_epochs)
    p.add_argument('--precision', choices=sorted(PRECISIONS), default=defaults.precision)
    p.add_argument('--weights', default=None, help='Modelo fuente (por defecto se pre-entrena uno)')
    p.add_argument('--save-model', dest='save_model', default=None, help='Guardar el modelo final (VITW)')
    p.add_argument('--out', dest='output', required=True, help='CSV de curvas')
    _add_key_args(p, block_required=False)
    p.set_defaults(func=cmd_train)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    try:
        make_deterministic()
        return args.func(args)
    except (CipherPatchError, OSError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    exit(main())
