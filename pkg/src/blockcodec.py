"""
Cifrado por bloques de imágenes: block scrambling + pixel shuffling.

Procedimiento de cifrado:
    (a) dividir la imagen en bloques p×p (orden raster)
    (b) permutar los bloques con la clave k1
    (c) aplanar cada bloque a un vector de longitud L = p·p·c (píxel mayor, canal menor)
    (d) permutar los L valores de cada bloque con la clave k2 (misma permutación para todos)
    (e) concatenar los bloques cifrados en una imagen del mismo tamaño

El orden de aplanado coincide con el de los patches del ViT (`models.extract_patches`).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BlockSizeError, ConfigurationError, DimensionError
from .keyperm import Permutation, check_key, gen_permutation, identity, inverse

ENCRYPTION_MODES = ('block', 'pixel', 'both')


@dataclass(frozen=True)
class EncryptionKeys:
    """
    Claves secretas del cifrado.

    k1 permuta bloques y k2 permuta píxeles dentro de cada bloque.
    None es el centinela de identidad: ese paso no se aplica.
    Se permite k1 == k2.
    """
    k1: Optional[int]
    k2: Optional[int]
    p: int

    def __post_init__(self):
        if self.p < 1:
            raise BlockSizeError(f"El tamaño de bloque debe ser >= 1, recibido {self.p}")
        if self.k1 is not None:
            check_key(self.k1)
        if self.k2 is not None:
            check_key(self.k2)

    @classmethod
    def for_mode(cls, mode: str, k1: Optional[int], k2: Optional[int], p: int) -> 'EncryptionKeys':
        """
        Construye las claves para un modo de cifrado.

        Args:
            mode: 'block' (solo k1), 'pixel' (solo k2) o 'both'
            k1: Clave de bloques
            k2: Clave de píxeles
            p: Tamaño de bloque
        """
        if mode not in ENCRYPTION_MODES:
            raise ConfigurationError(f"Modo de cifrado desconocido: {mode}")
        return cls(
            k1=k1 if mode in ('block', 'both') else None,
            k2=k2 if mode in ('pixel', 'both') else None,
            p=p,
        )

    @classmethod
    def identity_keys(cls, p: int) -> 'EncryptionKeys':
        return cls(k1=None, k2=None, p=p)

    @property
    def is_identity(self) -> bool:
        return self.k1 is None and self.k2 is None

    def block_permutation(self, n_blocks: int) -> Permutation:
        """Permutación de bloques (identidad si k1 es None)."""
        return identity(n_blocks) if self.k1 is None else gen_permutation(self.k1, n_blocks)

    def pixel_permutation(self, length: int) -> Permutation:
        """Permutación de píxeles dentro del bloque (identidad si k2 es None)."""
        return identity(length) if self.k2 is None else gen_permutation(self.k2, length)


@dataclass
class BlockGrid:
    """
    Imagen dividida en N = hw/p² bloques de p²×c, en orden raster.

    `blocks` tiene forma (N, p², c); `grid_h` y `grid_w` son el número de bloques por columna y fila.
    """
    blocks: np.ndarray
    block_size: int
    grid_h: int
    grid_w: int

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def channels(self) -> int:
        return self.blocks.shape[2]


def check_block_size(h: int, w: int, p: int) -> None:
    if p < 1:
        raise BlockSizeError(f"El tamaño de bloque debe ser >= 1, recibido {p}")
    if h % p != 0 or w % p != 0:
        raise BlockSizeError(f"El bloque {p} no divide la imagen {h}×{w}")


def split_blocks(x: np.ndarray, p: int) -> BlockGrid:
    """
    Divide la imagen en bloques p×p no solapados.

    Args:
        x: ImageTensor (h, w, c)
        p: Tamaño de bloque

    Returns:
        BlockGrid con los bloques en orden raster (izquierda a derecha, arriba a abajo)
    """
    if x.ndim != 3:
        raise DimensionError(f"Se esperaba una imagen (h, w, c), forma {x.shape}")
    h, w, c = x.shape
    check_block_size(h, w, p)
    gh, gw = h // p, w // p
    blocks = x.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p, c)
    return BlockGrid(blocks=np.ascontiguousarray(blocks), block_size=p, grid_h=gh, grid_w=gw)


def concatenate_blocks(grid: BlockGrid) -> np.ndarray:
    """Inversa exacta de split_blocks."""
    p, gh, gw, c = grid.block_size, grid.grid_h, grid.grid_w, grid.channels
    image = grid.blocks.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * p, gw * p, c)
    return np.ascontiguousarray(image)


def scramble_blocks(grid: BlockGrid, k1: Optional[int]) -> BlockGrid:
    """
    Permuta los bloques: bloque cifrado i = bloque original map[i].

    Args:
        grid: Bloques de la imagen
        k1: Clave de bloques (None = identidad)
    """
    if k1 is None:
        return grid
    perm = gen_permutation(k1, grid.n_blocks)
    return BlockGrid(blocks=grid.blocks[perm.indices], block_size=grid.block_size,
                     grid_h=grid.grid_h, grid_w=grid.grid_w)


def flatten_block(block: np.ndarray) -> np.ndarray:
    """Aplana un bloque p²×c a longitud L (píxel mayor, canal menor)."""
    return block.reshape(-1)


def unflatten_block(vector: np.ndarray, channels: int) -> np.ndarray:
    if vector.size % channels != 0:
        raise DimensionError(f"Longitud {vector.size} no divisible entre {channels} canales")
    return vector.reshape(-1, channels)


def shuffle_pixels(b: np.ndarray, k2: Optional[int]) -> np.ndarray:
    """
    Permuta los valores de uno o varios bloques aplanados con la misma permutación.

    Args:
        b: Vector de longitud L, o matriz (N, L) con un bloque por fila
        k2: Clave de píxeles (None = identidad)

    Returns:
        b' con b'[j] = b[map[j]]
    """
    if k2 is None:
        return b
    perm = gen_permutation(k2, b.shape[-1])
    return b[..., perm.indices]


def _permute_image(x: np.ndarray, block_perm: Permutation, pixel_perm: Permutation,
                   p: int) -> np.ndarray:
    grid = split_blocks(x, p)
    # Bloques y píxeles se permutan en ejes distintos, el orden no altera el resultado.
    flat = grid.blocks.reshape(grid.n_blocks, -1)
    flat = flat[block_perm.indices][:, pixel_perm.indices]
    permuted = BlockGrid(blocks=flat.reshape(grid.blocks.shape), block_size=p,
                         grid_h=grid.grid_h, grid_w=grid.grid_w)
    return concatenate_blocks(permuted)


def encrypt_image(x: np.ndarray, keys: EncryptionKeys) -> np.ndarray:
    """
    Cifra una imagen con block scrambling (k1) y pixel shuffling (k2).

    Args:
        x: ImageTensor (h, w, c)
        keys: Claves y tamaño de bloque

    Returns:
        Imagen cifrada con la misma forma y el mismo multiconjunto de valores
    """
    grid = scramble_blocks(split_blocks(x, keys.p), keys.k1)
    flat = np.stack([flatten_block(block) for block in grid.blocks])
    flat = shuffle_pixels(flat, keys.k2)
    blocks = np.stack([unflatten_block(vector, grid.channels) for vector in flat])
    return concatenate_blocks(BlockGrid(blocks=blocks, block_size=keys.p,
                                        grid_h=grid.grid_h, grid_w=grid.grid_w))


def decrypt_image(x_enc: np.ndarray, keys: EncryptionKeys) -> np.ndarray:
    """
    Descifra una imagen cifrada con las mismas claves (inverso exacto de encrypt_image).
    """
    h, w, c = x_enc.shape
    check_block_size(h, w, keys.p)
    if keys.is_identity:
        return x_enc.copy()
    n_blocks = (h // keys.p) * (w // keys.p)
    length = keys.p * keys.p * c
    return _permute_image(x_enc, inverse(keys.block_permutation(n_blocks)),
                          inverse(keys.pixel_permutation(length)), keys.p)
