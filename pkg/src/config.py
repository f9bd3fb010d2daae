"""
Configuración global: hilos, determinismo, logging e hiperparámetros por defecto.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

import torch

from .errors import ConfigurationError

THREADS_ENV_VAR = "CIPHERPATCH_THREADS"
PRECISIONS = {'float32': torch.float32, 'float64': torch.float64}
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


@dataclass
class TrainOptions:
    """
    Hiperparámetros de entrenamiento.

    Los valores por defecto replican la receta de fine-tuning original:
    batch 32, lr 0.001, momentum 0.9, weight decay 0.0005 y 15 épocas.
    """
    epochs: int = 15
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    seed: int = 0
    # Pre-entrenamiento en dominio plano (solo si no se pasan pesos fuente)
    pretrain_epochs: int = 3
    pretrain_lr: float = 0.01
    n_per_class: int = 40
    n_test_per_class: int = 10
    # Precisión de pre-entrenamiento y fine-tuning (float32 o float64)
    precision: str = 'float64'
    show_progress: bool = False

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    def validate(self) -> None:
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigurationError("El número de épocas no puede ser negativo")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size debe ser >= 1, recibido {self.batch_size}")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("lr, momentum y weight_decay deben ser >= 0")
        if self.n_per_class < 1 or self.n_test_per_class < 1:
            raise ConfigurationError("Se necesita al menos una imagen por clase")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"Precisión desconocida: {self.precision} (válidas: {', '.join(PRECISIONS)})")


def get_thread_limit() -> Optional[int]:
    """
    Lee CIPHERPATCH_THREADS.

    Returns:
        Número de hilos o None si la variable no está definida
    """
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return None
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV_VAR} debe ser un entero, recibido '{raw}'")
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV_VAR} debe ser >= 1, recibido {threads}")
    return threads


def make_deterministic() -> None:
    """
    Fija algoritmos deterministas en torch y aplica el límite de hilos.

    Los resultados son bit-idénticos entre ejecuciones con el mismo número de hilos;
    cambiar CIPHERPATCH_THREADS puede cambiar el orden de las reducciones.
    """
    torch.use_deterministic_algorithms(True)
    threads = get_thread_limit()
    if threads is not None:
        torch.set_num_threads(threads)
        logger.debug("torch limitado a %d hilos", threads)


def setup_logging(verbose: bool = False) -> None:
    """Configura logging para los scripts de línea de comandos."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
