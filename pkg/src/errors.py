"""
Jerarquía de errores del proyecto.
Todos derivan de ValueError para que el código que ya captura ValueError siga funcionando.
"""

from typing import Optional


class CipherPatchError(ValueError):
    """Error base de CipherPatch."""


class InvalidSizeError(CipherPatchError):
    """Tamaño de permutación o clave fuera de rango."""


class DimensionError(CipherPatchError):
    """Dimensiones incompatibles entre permutaciones, tensores o modelos."""


class BlockSizeError(CipherPatchError):
    """El tamaño de bloque no divide las dimensiones de la imagen."""


class ConfigurationError(CipherPatchError):
    """Configuración inválida (bloque != patch, escenario desconocido, etc.)."""


class LabelError(CipherPatchError):
    """Etiqueta fuera del rango [0, clases)."""


class NumericError(CipherPatchError):
    """
    Valor no finito durante el cómputo.

    Guarda la capa (forward) o la época/batch (entrenamiento) donde apareció.
    """

    def __init__(self, message: str, layer: Optional[int] = None,
                 epoch: Optional[int] = None, batch: Optional[int] = None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.batch = batch


class FormatError(CipherPatchError):
    """Archivo corrupto o con formato desconocido. `offset` es la posición en bytes."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset
