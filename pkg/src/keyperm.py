"""
Permutaciones generadas con clave secreta.
Generador SplitMix64, Fisher-Yates determinista, forma matricial y álgebra de permutaciones.

Los índices son 0-based.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple, TypeVar

import numpy as np

from .errors import DimensionError, InvalidSizeError

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL1 = 0xBF58476D1CE4E5B9
MIX_MUL2 = 0x94D049BB133111EB

T = TypeVar('T')


@dataclass(frozen=True)
class KeyedRngState:
    """Estado de 64 bits de SplitMix64. Se avanza por valor, nunca se comparte mutable."""
    state: int


@dataclass(frozen=True)
class Permutation:
    """
    Permutación biyectiva sobre n posiciones.

    `map[i]` es la fila de entrada que termina en la posición i
    (fila i de la matriz tiene un 1 en la columna map[i]).
    """
    map: Tuple[int, ...]

    def __post_init__(self):
        n = len(self.map)
        if n < 1:
            raise InvalidSizeError("Una permutación necesita al menos una posición")
        if sorted(self.map) != list(range(n)):
            raise InvalidSizeError(f"El vector {list(self.map)} no es una biyección de [0, {n - 1}]")

    @property
    def n(self) -> int:
        return len(self.map)

    @property
    def indices(self) -> np.ndarray:
        """Vector de índices como array numpy (para indexado vectorizado)."""
        return np.asarray(self.map, dtype=np.int64)

    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.map))


def check_key(key: int) -> int:
    """Valida que la clave sea un entero sin signo de 64 bits."""
    if isinstance(key, bool) or not isinstance(key, (int, np.integer)):
        raise InvalidSizeError(f"La clave debe ser un entero, recibido {type(key).__name__}")
    key = int(key)
    if key < 0 or key > MASK64:
        raise InvalidSizeError(f"La clave debe estar en [0, 2^64), recibido {key}")
    return key


def rng_next(state: KeyedRngState) -> Tuple[int, KeyedRngState]:
    """
    Un paso de SplitMix64.

    Args:
        state: Estado actual

    Returns:
        (palabra de 64 bits, nuevo estado)
    """
    s = (state.state + GOLDEN_GAMMA) & MASK64
    z = s
    z = ((z ^ (z >> 30)) * MIX_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL2) & MASK64
    return z ^ (z >> 31), KeyedRngState(s)


def gen_permutation(key: int, n: int) -> Permutation:
    """
    Genera una permutación de n posiciones a partir de una clave.

    Fisher-Yates descendente: para i = n-1 .. 1, j = rng_next() mod (i+1), intercambiar i y j.
    El sesgo del módulo es despreciable para n <= 2^20 y queda congelado por reproducibilidad.

    Args:
        key: Clave secreta de 64 bits
        n: Número de posiciones

    Returns:
        Permutación determinista para el par (key, n)
    """
    if n < 1:
        raise InvalidSizeError(f"n debe ser >= 1, recibido {n}")
    state = KeyedRngState(check_key(key))
    slots = list(range(n))
    for i in range(n - 1, 0, -1):
        word, state = rng_next(state)
        j = word % (i + 1)
        slots[i], slots[j] = slots[j], slots[i]
    return Permutation(tuple(slots))


def identity(n: int) -> Permutation:
    if n < 1:
        raise InvalidSizeError(f"n debe ser >= 1, recibido {n}")
    return Permutation(tuple(range(n)))


def as_matrix(p: Permutation) -> np.ndarray:
    """
    Forma densa n×n de la permutación (k_(i,j) = 1 sii j = map[i]).

    Solo para tests y para documentar la correspondencia con la forma matricial;
    el código de producción trabaja con vectores de índices.
    """
    matrix = np.zeros((p.n, p.n), dtype=np.int64)
    matrix[np.arange(p.n), p.indices] = 1
    return matrix


def extend_for_class_token(p: Permutation) -> Permutation:
    """
    Extiende la permutación con la posición 0 fija para el class token.

    La matriz resultante tiene un 1 en (0, 0) y la matriz original en el bloque inferior derecho.
    """
    return Permutation((0,) + tuple(j + 1 for j in p.map))


def apply_rows(p: Permutation, rows: Sequence[T]) -> list:
    """
    Reordena filas: salida[i] = entrada[map[i]].

    Equivale a multiplicar por la izquierda con as_matrix(p).
    """
    if len(rows) != p.n:
        raise DimensionError(f"Se esperaban {p.n} filas, recibidas {len(rows)}")
    return [rows[j] for j in p.map]


def permute_rows(p: Permutation, array: np.ndarray) -> np.ndarray:
    """Versión vectorizada de apply_rows sobre el primer eje de un array (o tensor)."""
    if array.shape[0] != p.n:
        raise DimensionError(f"Se esperaban {p.n} filas, recibidas {array.shape[0]}")
    return array[p.indices]


def inverse(p: Permutation) -> Permutation:
    inv = [0] * p.n
    for i, j in enumerate(p.map):
        inv[j] = i
    return Permutation(tuple(inv))


def compose(p: Permutation, q: Permutation) -> Permutation:
    """
    Composición "aplicar q, luego p".

    as_matrix(compose(p, q)) == as_matrix(p) @ as_matrix(q)
    """
    if p.n != q.n:
        raise DimensionError(f"No se pueden componer permutaciones de tamaño {p.n} y {q.n}")
    return Permutation(tuple(q.map[j] for j in p.map))


def derive_keys(seed: int) -> Tuple[int, int]:
    """Deriva el par (k1, k2) como las dos primeras palabras SplitMix64 de la semilla."""
    state = KeyedRngState(check_key(seed))
    k1, state = rng_next(state)
    k2, _ = rng_next(state)
    return k1, k2
