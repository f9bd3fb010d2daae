"""
Pipeline de fine-tuning con imágenes cifradas.

Escenarios:
    plain       modelo fuente entrenado y evaluado con imágenes planas
    proposed    modelo fuente adaptado con las claves, entrenado y evaluado con imágenes cifradas
    without_da  modelo fuente sin adaptar, entrenado y evaluado con imágenes cifradas

plain y proposed comparten semillas, así que sus curvas solo difieren por deriva numérica.
"""

import copy
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from .adapt import adapt_model, check_patch_size
from .blockcodec import EncryptionKeys
from .config import TrainOptions
from .dataset import ImageClassificationDataset, encrypt_dataset, gen_synthetic_dataset
from .errors import ConfigurationError, NumericError
from .metrics import TrainRecord, accuracy, backward_grads, cross_entropy, log_training_metrics, sgd_step
from .models import ViTConfig, VisionTransformer, init_params

logger = logging.getLogger(__name__)

SCENARIOS = ('plain', 'proposed', 'without_da')

# Desplazamientos de semilla para que cada conjunto tenga ruido independiente
TRAIN_SEED_OFFSET = 1
TEST_SEED_OFFSET = 2
PRETRAIN_SEED_OFFSET = 1000
EVAL_BATCH_SIZE = 256


@dataclass
class ExperimentResult:
    scenario: str
    model: VisionTransformer
    records: List[TrainRecord]


def _model_dtype(model: VisionTransformer) -> torch.dtype:
    return next(model.parameters()).dtype


def evaluate(model: VisionTransformer, dataset: ImageClassificationDataset,
             batch_size: int = EVAL_BATCH_SIZE) -> Tuple[float, float]:
    """
    Evalúa el modelo.

    Args:
        model: Modelo
        dataset: Dataset de evaluación

    Returns:
        (cross-entropy media, accuracy por argmax)
    """
    model.eval()
    dtype = _model_dtype(model)
    total_loss = 0.0
    images, labels = dataset.tensors()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = images[start:start + batch_size].to(dtype)
            target = labels[start:start + batch_size]
            logits = model(batch)
            total_loss += cross_entropy(logits, target).item() * len(target)
            outputs.append(logits)
    return total_loss / len(dataset), accuracy(torch.cat(outputs), labels)


def train(model: VisionTransformer, train_set: ImageClassificationDataset,
          test_set: ImageClassificationDataset,
          opts: TrainOptions) -> Tuple[VisionTransformer, List[TrainRecord]]:
    """
    Entrena con SGD (momentum + weight decay) y cross-entropy.

    El orden de los batches depende solo de opts.seed. Se registra un TrainRecord por época
    (pérdida y accuracy de entrenamiento acumuladas durante la época, y evaluación en test).

    Args:
        model: Modelo (se entrena en el lugar)
        train_set: Datos de entrenamiento
        test_set: Datos de test
        opts: Hiperparámetros

    Returns:
        (modelo, registros por época)
    """
    opts.validate()
    generator = torch.Generator().manual_seed(opts.seed)
    train_loader = DataLoader(train_set, batch_size=opts.batch_size, shuffle=True,
                              generator=generator, num_workers=0)
    momentum_state = None
    dtype = _model_dtype(model)
    records: List[TrainRecord] = []

    for epoch in range(opts.epochs):
        model.train()
        running_loss, correct, seen = 0.0, 0, 0

        pbar = tqdm(train_loader, desc=f"Epoch {epoch + 1:2d}/{opts.epochs} [Train]",
                    disable=not opts.show_progress)
        for batch_index, (images, labels) in enumerate(pbar):
            images = images.to(dtype)
            try:
                logits = model(images)
                loss = cross_entropy(logits, labels)
            except NumericError as e:
                raise NumericError(f"Divergencia en la época {epoch + 1}, batch {batch_index}: {e}",
                                   layer=e.layer, epoch=epoch + 1, batch=batch_index) from e
            grads = backward_grads(model, loss)
            momentum_state = sgd_step(model, grads, lr=opts.lr, momentum=opts.momentum,
                                      weight_decay=opts.weight_decay, state=momentum_state)

            running_loss += loss.item() * len(labels)
            correct += int((logits.detach().argmax(dim=-1) == labels).sum())
            seen += len(labels)
            pbar.set_postfix({'loss': f"{loss.item():.4f}"})

        test_loss, test_acc = evaluate(model, test_set)
        record = TrainRecord(epoch=epoch + 1, train_loss=running_loss / seen, train_acc=correct / seen,
                             test_loss=test_loss, test_acc=test_acc)
        records.append(record)
        log_training_metrics(record, opts.epochs)

    return model, records


def make_datasets(cfg: ViTConfig, opts: TrainOptions) -> Tuple[ImageClassificationDataset, ImageClassificationDataset]:
    """Datasets sintéticos de fine-tuning (train y test comparten los patrones de clase)."""
    train_set = gen_synthetic_dataset(opts.seed + TRAIN_SEED_OFFSET, opts.n_per_class,
                                      cfg.num_classes, cfg, split='train')
    test_set = gen_synthetic_dataset(opts.seed + TEST_SEED_OFFSET, opts.n_test_per_class,
                                     cfg.num_classes, cfg, split='test')
    return train_set, test_set


def pretrain_source(cfg: ViTConfig, opts: TrainOptions) -> VisionTransformer:
    """
    Pre-entrena un modelo en dominio plano (sustituye al checkpoint pre-entrenado).

    Usa un conjunto sintético con ruido distinto al del fine-tuning.
    """
    opts.validate()
    model = init_params(cfg, opts.seed).to(opts.dtype)
    if opts.pretrain_epochs == 0:
        return model
    pretrain_set = gen_synthetic_dataset(opts.seed + PRETRAIN_SEED_OFFSET, opts.n_per_class,
                                         cfg.num_classes, cfg, split='train')
    pretrain_test = gen_synthetic_dataset(opts.seed + PRETRAIN_SEED_OFFSET + 1, opts.n_test_per_class,
                                          cfg.num_classes, cfg, split='test')
    pretrain_opts = replace(opts, epochs=opts.pretrain_epochs, lr=opts.pretrain_lr)
    logger.info("🧠 Pre-entrenando modelo fuente (%d épocas)", opts.pretrain_epochs)
    model, _ = train(model, pretrain_set, pretrain_test, pretrain_opts)
    return model


def run_experiment(scenario: str, keys: EncryptionKeys, cfg: ViTConfig, opts: TrainOptions,
                   source: Optional[VisionTransformer] = None) -> ExperimentResult:
    """
    Ejecuta un escenario de fine-tuning.

    Args:
        scenario: 'plain', 'proposed' o 'without_da'
        keys: Claves de cifrado (ignoradas en 'plain')
        cfg: Configuración del modelo
        opts: Hiperparámetros
        source: Modelo fuente pre-entrenado; si es None se pre-entrena uno

    Returns:
        ExperimentResult con el modelo final y un TrainRecord por época
    """
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"Escenario desconocido: {scenario} (válidos: {', '.join(SCENARIOS)})")
    opts.validate()
    if source is None:
        source = pretrain_source(cfg, opts)
    elif source.cfg != cfg:
        raise ConfigurationError(f"El modelo fuente tiene configuración {source.cfg}, se esperaba {cfg}")

    train_set, test_set = make_datasets(cfg, opts)
    if scenario == 'plain':
        model = copy.deepcopy(source)
    else:
        check_patch_size(keys, cfg)
        train_set = encrypt_dataset(train_set, keys)
        test_set = encrypt_dataset(test_set, keys)
        model = adapt_model(source, keys).model if scenario == 'proposed' else copy.deepcopy(source)
    model = model.to(opts.dtype)

    logger.info("🚀 Escenario %s: %d épocas, batch %d, lr %g", scenario, opts.epochs, opts.batch_size, opts.lr)
    model, records = train(model, train_set, test_set, opts)
    return ExperimentResult(scenario=scenario, model=model, records=records)


def compare_scenarios(keys: EncryptionKeys, cfg: ViTConfig, opts: TrainOptions,
                      source: Optional[VisionTransformer] = None,
                      scenarios: Tuple[str, ...] = SCENARIOS) -> Dict[str, ExperimentResult]:
    """Ejecuta varios escenarios desde el mismo modelo fuente y las mismas semillas."""
    if source is None:
        source = pretrain_source(cfg, opts)
    return {name: run_experiment(name, keys, cfg, opts, source=source) for name in scenarios}
