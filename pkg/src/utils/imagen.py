"""
Utilidades básicas para imágenes.
Validación de ImageTensor (h×w×c en [0, 1]), cuantización a 8 bits y E/S de archivos PPM/PGM e IMGT.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..errors import DimensionError, FormatError

IMGT_MAGIC = b"IMGT"
IMGT_VERSION = 1
_IMGT_HEADER = struct.Struct("<4sIIII")

PathLike = Union[str, Path]


def verify_image(image: np.ndarray) -> None:
    """
    Valida que la imagen sea un ImageTensor válido.

    Args:
        image: Array numpy (h, w, c)

    Raises:
        DimensionError: Si la forma o los valores no son válidos
    """
    if not isinstance(image, np.ndarray):
        raise DimensionError("La imagen debe ser un array numpy")

    if image.ndim != 3:
        raise DimensionError(f"La imagen debe tener 3 dimensiones (h, w, c), tiene {image.ndim}")

    if image.size == 0:
        raise DimensionError("La imagen no puede estar vacía")

    if not np.all(np.isfinite(image)):
        raise DimensionError("La imagen contiene valores no finitos")

    if image.min() < 0.0 or image.max() > 1.0:
        raise DimensionError("Los valores de la imagen deben estar en [0, 1]")


def to_float_image(image: np.ndarray) -> np.ndarray:
    """
    Convierte una imagen uint8 (h, w) o (h, w, c) a float32 en [0, 1] con forma (h, w, c).

    El byte b se convierte en b/255.
    """
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    if image.dtype == np.uint8:
        return image.astype(np.float32) / np.float32(255.0)
    return image.astype(np.float32)


def quantize_image(image: np.ndarray) -> np.ndarray:
    """
    Cuantiza a uint8: round(v·255) recortado a [0, 255].

    Args:
        image: Imagen float en [0, 1]

    Returns:
        Imagen uint8 con la misma forma
    """
    scaled = np.rint(image.astype(np.float64) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def read_pnm(path: PathLike) -> np.ndarray:
    """
    Lee un PPM (P6) o PGM (P5) con maxval 255.

    Returns:
        ImageTensor float32 (h, w, 3) o (h, w, 1)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Imagen no encontrada: {path}")
    try:
        with Image.open(path) as img:
            if img.format not in ('PPM',):
                raise FormatError(f"{path} no es un archivo PPM/PGM")
            if img.mode not in ('RGB', 'L'):
                raise FormatError(f"Modo PNM no soportado: {img.mode}")
            array = np.asarray(img, dtype=np.uint8)
    except FormatError:
        raise
    except (OSError, SyntaxError) as e:
        raise FormatError(f"No se pudo leer {path}: {e}")
    return to_float_image(array)


def write_pnm(image: np.ndarray, path: PathLike) -> None:
    """
    Escribe la imagen como PPM (c=3) o PGM (c=1), maxval 255.

    Args:
        image: ImageTensor (h, w, c)
        path: Archivo de salida
    """
    verify_image(image)
    data = quantize_image(image)
    channels = data.shape[2]
    if channels == 3:
        img = Image.fromarray(data)
    elif channels == 1:
        img = Image.fromarray(data[:, :, 0])
    else:
        raise DimensionError(f"PNM solo admite 1 o 3 canales, la imagen tiene {channels}")
    img.save(Path(path), format='PPM')


def write_imgt(image: np.ndarray, path: PathLike) -> None:
    """
    Escribe un tensor sin pérdida: "IMGT", u32 versión, u32 h, w, c y h·w·c float32 little-endian.
    """
    if image.ndim != 3:
        raise DimensionError(f"Se esperaba una imagen (h, w, c), forma {image.shape}")
    h, w, c = image.shape
    header = _IMGT_HEADER.pack(IMGT_MAGIC, IMGT_VERSION, h, w, c)
    payload = np.ascontiguousarray(image, dtype='<f4').tobytes()
    Path(path).write_bytes(header + payload)


def read_imgt(path: PathLike) -> np.ndarray:
    """Lee un archivo IMGT. Errores de formato incluyen el offset del problema."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Tensor no encontrado: {path}")
    raw = path.read_bytes()
    if len(raw) < _IMGT_HEADER.size:
        raise FormatError("Cabecera IMGT incompleta", offset=len(raw))
    magic, version, h, w, c = _IMGT_HEADER.unpack_from(raw, 0)
    if magic != IMGT_MAGIC:
        raise FormatError(f"Magic inválido {magic!r}, se esperaba {IMGT_MAGIC!r}", offset=0)
    if version != IMGT_VERSION:
        raise FormatError(f"Versión IMGT no soportada: {version}", offset=4)
    expected = h * w * c * 4
    available = len(raw) - _IMGT_HEADER.size
    if available != expected:
        raise FormatError(f"Se esperaban {expected} bytes de datos, hay {available}",
                          offset=_IMGT_HEADER.size + min(available, expected))
    data = np.frombuffer(raw, dtype='<f4', offset=_IMGT_HEADER.size)
    return data.reshape(h, w, c).astype(np.float32)


def load_image(path: PathLike) -> np.ndarray:
    """Carga .imgt sin pérdida o .ppm/.pgm cuantizado según la extensión."""
    suffix = Path(path).suffix.lower()
    if suffix == '.imgt':
        return read_imgt(path)
    if suffix in ('.ppm', '.pgm', '.pnm'):
        return read_pnm(path)
    raise FormatError(f"Extensión no soportada: {suffix}")


def save_image(image: np.ndarray, path: PathLike) -> None:
    """Guarda según la extensión (.imgt sin pérdida, .ppm/.pgm con cuantización)."""
    suffix = Path(path).suffix.lower()
    if suffix == '.imgt':
        write_imgt(image, path)
    elif suffix in ('.ppm', '.pgm', '.pnm'):
        write_pnm(image, path)
    else:
        raise FormatError(f"Extensión no soportada: {suffix}")

