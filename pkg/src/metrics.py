"""
Pérdida, gradientes, paso SGD y métricas de entrenamiento.
Cross-entropy, accuracy con TorchMetrics y exportación de curvas a CSV.
"""

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torchmetrics.classification import MulticlassAccuracy

from .errors import LabelError, NumericError
from .models import VisionTransformer

logger = logging.getLogger(__name__)


@dataclass
class TrainRecord:
    """Métricas de una época (accuracies en [0, 1])."""
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


def check_labels(labels: torch.Tensor, num_classes: int) -> None:
    if labels.numel() == 0:
        raise LabelError("El batch está vacío")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelError(f"Etiquetas fuera de rango [0, {num_classes}): "
                         f"min {int(labels.min())}, max {int(labels.max())}")


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy media del batch. Valida etiquetas y finitud."""
    check_labels(labels, logits.shape[-1])
    loss = F.cross_entropy(logits, labels)
    if not torch.isfinite(loss):
        raise NumericError("Pérdida no finita")
    return loss


def accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    """Accuracy por argmax."""
    metric = MulticlassAccuracy(num_classes=logits.shape[-1], average='micro')
    return float(metric(logits.detach(), labels))


def loss_and_grads(model: VisionTransformer, images: torch.Tensor,
                   labels: torch.Tensor) -> Tuple[float, Dict[str, torch.Tensor]]:
    """
    Pérdida y gradientes de todos los parámetros para un batch.

    Args:
        model: Modelo
        images: Tensor (B, h, w, c)
        labels: Tensor (B,) de enteros

    Returns:
        (pérdida media, dict nombre → gradiente)
    """
    loss = cross_entropy(model(images), labels)
    return loss.item(), backward_grads(model, loss)


def backward_grads(model: VisionTransformer, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Gradientes de `loss` respecto a cada parámetro del modelo, por nombre."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    return {name: param.grad.detach().clone() for name, param in model.named_parameters()}


def sgd_step(model: VisionTransformer, grads: Dict[str, torch.Tensor], lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0,
             state: Optional[Dict[str, torch.Tensor]] = None) -> Dict[str, torch.Tensor]:
    """
    Un paso SGD con momentum y weight decay, con la misma semántica que torch.optim.SGD:
    g ← g + wd·θ; v ← μ·v + g (v = g en el primer paso); θ ← θ − lr·v.

    Args:
        model: Modelo (se actualiza en el lugar)
        grads: Gradientes por nombre de parámetro
        lr: Learning rate
        momentum: Momentum
        weight_decay: Weight decay
        state: Buffers de momentum del paso anterior

    Returns:
        Nuevo estado de buffers de momentum
    """
    state = {} if state is None else state
    new_state = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            d_p = grads[name]
            if weight_decay != 0:
                d_p = d_p + weight_decay * param
            if momentum != 0:
                buf = state.get(name)
                buf = d_p.clone() if buf is None else buf * momentum + d_p
                new_state[name] = buf
                d_p = buf
            param.add_(d_p, alpha=-lr)
    return new_state


def log_training_metrics(record: TrainRecord, total_epochs: int) -> None:
    """Registra las métricas de una época."""
    logger.info("📈 Epoch %2d/%d - train loss %.4f acc %.4f | test loss %.4f acc %.4f",
                record.epoch, total_epochs, record.train_loss, record.train_acc,
                record.test_loss, record.test_acc)


def create_metrics_header() -> List[str]:
    """Columnas del CSV de curvas de entrenamiento."""
    return [f.name for f in fields(TrainRecord)]


def save_metrics_to_csv(records: List[TrainRecord], filepath: Union[str, Path]) -> None:
    """
    Guarda las curvas de entrenamiento en CSV.

    Los floats se escriben con repr para que dos ejecuciones idénticas den archivos idénticos.

    Args:
        records: Una fila por época
        filepath: Path del archivo
    """
    with open(filepath, 'w', newline='') as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=create_metrics_header(), lineterminator='\n')
        writer.writeheader()
        for record in records:
            writer.writerow({k: repr(v) for k, v in asdict(record).items()})

    logger.info("Métricas guardadas en: %s", filepath)


def load_metrics_from_csv(filepath: Union[str, Path]) -> List[TrainRecord]:
    """Lee un CSV escrito por save_metrics_to_csv."""
    with open(filepath, newline='') as csvfile:
        reader = csv.DictReader(csvfile)
        return [
            TrainRecord(epoch=int(row['epoch']), train_loss=float(row['train_loss']),
                        train_acc=float(row['train_acc']), test_loss=float(row['test_loss']),
                        test_acc=float(row['test_acc']))
            for row in reader
        ]
