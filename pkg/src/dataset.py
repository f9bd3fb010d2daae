"""
Datasets de clasificación para el fine-tuning.
Generador sintético determinista, cifrado/descifrado de datasets completos y carga desde directorio.
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from .blockcodec import EncryptionKeys, decrypt_image, encrypt_image
from .errors import ConfigurationError, DimensionError, LabelError
from .models import ViTConfig
from .utils.imagen import load_image, save_image, verify_image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.imgt', '.ppm', '.pgm')

# Parámetros del generador sintético
NOISE_STD = 0.08
BRIGHTNESS_JITTER = 0.05
COLOR_RANGE = (0.1, 0.9)


class ImageClassificationDataset(Dataset):
    """
    Dataset de pares (imagen, etiqueta).

    Las imágenes se guardan como un único array float32 (M, h, w, c) con valores en [0, 1].
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray, num_classes: int, split: str = 'train'):
        """
        Inicializa el dataset.

        Args:
            images: Array (M, h, w, c)
            labels: Array (M,) de enteros en [0, num_classes)
            num_classes: Número de clases
            split: 'train' o 'test'
        """
        if len(images) == 0:
            raise DimensionError("El dataset no puede estar vacío")
        if len(images) != len(labels):
            raise DimensionError(f"{len(images)} imágenes y {len(labels)} etiquetas")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= num_classes:
            raise LabelError(f"Etiquetas fuera de rango [0, {num_classes})")

        self.images = np.ascontiguousarray(images, dtype=np.float32)
        self.labels = labels
        self.num_classes = num_classes
        self.split = split

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx: int) -> Tuple[torch.Tensor, int]:
        return torch.from_numpy(self.images[idx]), int(self.labels[idx])

    def tensors(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Todo el dataset como (imágenes, etiquetas)."""
        return torch.from_numpy(self.images), torch.from_numpy(self.labels)

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def map_images(self, fn, split: Optional[str] = None) -> 'ImageClassificationDataset':
        """Nuevo dataset aplicando `fn` a cada imagen; etiquetas y orden se conservan."""
        images = np.stack([fn(image) for image in self.images])
        return ImageClassificationDataset(images, self.labels.copy(), self.num_classes,
                                          split or self.split)


def make_class_templates(cfg: ViTConfig, classes: int, task_seed: int) -> np.ndarray:
    """
    Un patrón de color por clase: rejilla de celdas de p/2 píxeles con colores aleatorios.

    Returns:
        Array (classes, h, w, c)
    """
    rng = np.random.default_rng(task_seed)
    cell = max(cfg.patch_size // 2, 1)
    grid_h = -(-cfg.image_h // cell)
    grid_w = -(-cfg.image_w // cell)
    low, high = COLOR_RANGE
    coarse = rng.uniform(low, high, size=(classes, grid_h, grid_w, cfg.channels))
    templates = np.repeat(np.repeat(coarse, cell, axis=1), cell, axis=2)
    return templates[:, :cfg.image_h, :cfg.image_w, :]


def gen_synthetic_dataset(seed: int, n_per_class: int, classes: int, cfg: ViTConfig,
                          split: str = 'train', task_seed: int = 0) -> ImageClassificationDataset:
    """
    Genera un dataset sintético separable.

    Cada clase tiene un patrón de colores fijo (determinado por `task_seed`, compartido
    entre train y test); cada muestra añade ruido gaussiano y un cambio de brillo
    determinados por `seed`. Las etiquetas quedan exactamente balanceadas.

    Args:
        seed: Semilla de las muestras
        n_per_class: Imágenes por clase
        classes: Número de clases
        cfg: Configuración (forma de las imágenes)
        split: 'train' o 'test'
        task_seed: Semilla de los patrones de clase

    Returns:
        Dataset con n_per_class·classes imágenes
    """
    if n_per_class < 1:
        raise ConfigurationError(f"n_per_class debe ser >= 1, recibido {n_per_class}")
    if classes < 1:
        raise ConfigurationError(f"classes debe ser >= 1, recibido {classes}")

    templates = make_class_templates(cfg, classes, task_seed)
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(classes, dtype=np.int64), n_per_class)
    noise = rng.normal(0.0, NOISE_STD, size=(len(labels),) + cfg.image_shape)
    shift = rng.uniform(-BRIGHTNESS_JITTER, BRIGHTNESS_JITTER, size=(len(labels), 1, 1, 1))
    images = np.clip(templates[labels] + noise + shift, 0.0, 1.0).astype(np.float32)

    logger.debug("Dataset sintético %s: %d imágenes, %d clases (seed=%d)",
                 split, len(labels), classes, seed)
    return ImageClassificationDataset(images, labels, classes, split)


def encrypt_dataset(dataset: ImageClassificationDataset, keys: EncryptionKeys) -> ImageClassificationDataset:
    """Cifra todas las imágenes con las mismas claves; etiquetas sin cambios."""
    return dataset.map_images(lambda image: encrypt_image(image, keys))


def decrypt_dataset(dataset: ImageClassificationDataset, keys: EncryptionKeys) -> ImageClassificationDataset:
    return dataset.map_images(lambda image: decrypt_image(image, keys))


def list_image_files(directory: str) -> List[Path]:
    """Archivos de imagen soportados del directorio, ordenados por nombre."""
    path = Path(directory)
    if not path.is_dir():
        raise FileNotFoundError(f"Directorio no encontrado: {directory}")
    return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image_dir(directory: str, cfg: Optional[ViTConfig] = None) -> Tuple[List[str], List[np.ndarray]]:
    """
    Carga todas las imágenes .imgt/.ppm/.pgm de un directorio.

    Returns:
        (nombres de archivo, imágenes)
    """
    names, images = [], []
    for file in list_image_files(directory):
        image = load_image(file)
        verify_image(image)
        if cfg is not None and image.shape != cfg.image_shape:
            raise DimensionError(f"{file.name}: forma {image.shape}, se esperaba {cfg.image_shape}")
        names.append(file.name)
        images.append(image)
    if not images:
        raise DimensionError(f"No hay imágenes {IMAGE_SUFFIXES} en {directory}")
    return names, images


def save_dataset_images(dataset: ImageClassificationDataset, directory: str, suffix: str = '.imgt') -> List[Path]:
    """Escribe cada imagen como `<índice>_<etiqueta><suffix>`."""
    output = Path(directory)
    output.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
        path = output / f"{index:05d}_{int(label)}{suffix}"
        save_image(image, path)
        paths.append(path)
    return paths
