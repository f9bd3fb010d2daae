"""
Adaptación de dominio del ViT a imágenes cifradas.

Las filas del position embedding se permutan con la permutación de bloques extendida
(posición 0 fija para el class token) y las filas del patch embedding con la permutación
de píxeles:

    Ê_pos = E_bs' · E_pos        Ê = E_ps · E

Como las permutaciones son ortogonales, (E_ps bᵀ)ᵀ · Ê = b · E para cada patch, y la
secuencia embebida de la imagen cifrada es una permutación de filas de la secuencia
original. El encoder es equivariante a permutaciones de tokens y el class token queda
fijo, por lo que los logits coinciden.
"""

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
import torch

from .blockcodec import EncryptionKeys, encrypt_image
from .errors import ConfigurationError, DimensionError
from .keyperm import extend_for_class_token, gen_permutation, inverse, permute_rows
from .models import ViTConfig, VisionTransformer, load_params, predict_logits, save_params

logger = logging.getLogger(__name__)

PROVENANCE_SUFFIX = ".provenance.json"


@dataclass
class AdaptedModel:
    """Modelo adaptado y las claves (k1, k2, p) que lo generaron."""
    model: VisionTransformer
    keys: EncryptionKeys


@dataclass
class EquivalenceReport:
    """Diferencia máxima de logits por imagen entre el camino plano y el cifrado."""
    tolerance: float
    max_abs_diff: List[float] = field(default_factory=list)
    passed: List[bool] = field(default_factory=list)

    @property
    def aggregate_max(self) -> float:
        return max(self.max_abs_diff, default=0.0)

    @property
    def all_passed(self) -> bool:
        return all(self.passed)

    @property
    def num_failed(self) -> int:
        return sum(1 for ok in self.passed if not ok)

    def add(self, diff: float) -> None:
        self.max_abs_diff.append(diff)
        self.passed.append(diff <= self.tolerance)

    def to_csv(self, filepath: Union[str, Path], image_ids: Optional[List[str]] = None) -> None:
        """Escribe image_id, max_abs_diff, pass."""
        ids = image_ids if image_ids is not None else [str(i) for i in range(len(self.passed))]
        with open(filepath, 'w', newline='') as csvfile:
            write_report_rows(csvfile, self, ids)


def write_report_rows(stream, report: EquivalenceReport, image_ids: List[str]) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(['image_id', 'max_abs_diff', 'pass'])
    for image_id, diff, ok in zip(image_ids, report.max_abs_diff, report.passed):
        writer.writerow([image_id, repr(diff), 'true' if ok else 'false'])


def adapt_pos_embedding(pos_embedding: torch.Tensor, k1: Optional[int]) -> torch.Tensor:
    """
    Adapta E_pos a la permutación de bloques.

    Args:
        pos_embedding: Tensor (N+1, D)
        k1: Clave de bloques (None = identidad)

    Returns:
        Ê_pos (N+1, D) con la fila 0 sin cambios
    """
    if k1 is None:
        return pos_embedding.clone()
    perm = extend_for_class_token(gen_permutation(k1, pos_embedding.shape[0] - 1))
    return permute_rows(perm, pos_embedding).clone()


def adapt_patch_embedding(patch_embedding: torch.Tensor, k2: Optional[int]) -> torch.Tensor:
    """
    Adapta E a la permutación de píxeles: fila j de Ê = fila map[j] de E.

    Args:
        patch_embedding: Tensor (L, D)
        k2: Clave de píxeles (None = identidad)
    """
    if k2 is None:
        return patch_embedding.clone()
    return permute_rows(gen_permutation(k2, patch_embedding.shape[0]), patch_embedding).clone()


def check_patch_size(keys: EncryptionKeys, cfg: ViTConfig) -> None:
    """El tamaño de bloque de las claves debe ser el tamaño de patch del ViT."""
    if keys.p != cfg.patch_size:
        raise ConfigurationError(
            f"El tamaño de bloque ({keys.p}) debe coincidir con el patch del ViT ({cfg.patch_size})")


def adapt_model(model: VisionTransformer, keys: EncryptionKeys) -> AdaptedModel:
    """
    Transforma f_θ en f̂_θ sustituyendo E y E_pos por sus versiones adaptadas.

    El modelo fuente no se modifica; el resto de pesos se copia sin cambios.

    Args:
        model: Modelo fuente (pre-entrenado en dominio plano)
        keys: Claves de cifrado; keys.p debe ser el tamaño de patch

    Returns:
        AdaptedModel con la copia adaptada y su procedencia
    """
    check_patch_size(keys, model.cfg)
    adapted = copy.deepcopy(model)
    with torch.no_grad():
        adapted.pos_embedding.copy_(adapt_pos_embedding(model.pos_embedding, keys.k1))
        adapted.patch_embedding.copy_(adapt_patch_embedding(model.patch_embedding, keys.k2))
    logger.info("Modelo adaptado (k1=%s, k2=%s, p=%d)", keys.k1, keys.k2, keys.p)
    return AdaptedModel(model=adapted, keys=keys)


def revert_adaptation(adapted: AdaptedModel) -> VisionTransformer:
    """Recupera el modelo en dominio plano aplicando las permutaciones inversas."""
    model = copy.deepcopy(adapted.model)
    keys = adapted.keys
    cfg = model.cfg
    with torch.no_grad():
        if keys.k1 is not None:
            perm = inverse(extend_for_class_token(gen_permutation(keys.k1, cfg.n_patches)))
            model.pos_embedding.copy_(permute_rows(perm, adapted.model.pos_embedding))
        if keys.k2 is not None:
            perm = inverse(gen_permutation(keys.k2, cfg.patch_dim))
            model.patch_embedding.copy_(permute_rows(perm, adapted.model.patch_embedding))
    return model


def verify_equivalence(source: VisionTransformer, adapted: AdaptedModel,
                       images: Iterable[np.ndarray], keys: EncryptionKeys,
                       tol: float = 1e-4) -> EquivalenceReport:
    """
    Compara forward(x, fuente) con forward(cifrar(x, keys), adaptado) para cada imagen.

    `keys` son las claves del usuario para cifrar las imágenes de test; si difieren de
    las usadas en la adaptación el reporte falla.

    Args:
        source: Modelo fuente
        adapted: Modelo adaptado
        images: Imágenes (h, w, c) en dominio plano
        keys: Claves para cifrar las imágenes
        tol: Tolerancia sobre la diferencia absoluta máxima de logits

    Returns:
        EquivalenceReport
    """
    if tol <= 0:
        raise ConfigurationError(f"La tolerancia debe ser > 0, recibida {tol}")
    if source.cfg != adapted.model.cfg:
        raise DimensionError(f"Configuraciones distintas: {source.cfg} vs {adapted.model.cfg}")
    check_patch_size(keys, source.cfg)

    report = EquivalenceReport(tolerance=tol)
    for image in images:
        plain_logits = predict_logits(source, image)
        encrypted_logits = predict_logits(adapted.model, encrypt_image(image, keys))
        diff = (plain_logits - encrypted_logits).abs().max().item()
        report.add(diff)

    logger.info("Equivalencia: %d/%d imágenes OK, diferencia máxima %.3e",
                len(report.passed) - report.num_failed, len(report.passed), report.aggregate_max)
    return report


def _key_to_str(key: Optional[int]) -> Optional[str]:
    return None if key is None else str(key)


def save_adapted(adapted: AdaptedModel, filepath: Union[str, Path]) -> Path:
    """
    Guarda los pesos adaptados (VITW) y el sidecar de procedencia JSON.

    Returns:
        Path del sidecar
    """
    save_params(adapted.model, filepath)
    sidecar = Path(str(filepath) + PROVENANCE_SUFFIX)
    record = {
        'k1': _key_to_str(adapted.keys.k1),
        'k2': _key_to_str(adapted.keys.k2),
        'p': str(adapted.keys.p),
    }
    sidecar.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_adapted(filepath: Union[str, Path]) -> AdaptedModel:
    """Carga pesos adaptados junto con su procedencia."""
    sidecar = Path(str(filepath) + PROVENANCE_SUFFIX)
    if not sidecar.exists():
        raise FileNotFoundError(f"Procedencia no encontrada: {sidecar}")
    record = json.loads(sidecar.read_text())
    keys = EncryptionKeys(
        k1=None if record.get('k1') is None else int(record['k1']),
        k2=None if record.get('k2') is None else int(record['k2']),
        p=int(record['p']),
    )
    return AdaptedModel(model=load_params(filepath), keys=keys)
