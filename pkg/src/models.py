"""
Vision Transformer mínimo y determinista.
Embedding de patches, encoder pre-LN (MSA + MLP con GELU) y cabeza de clasificación,
más la E/S de pesos en formato VITW.
"""

import logging
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError, FormatError, NumericError

logger = logging.getLogger(__name__)

VITW_MAGIC = b"VITW"
VITW_VERSION = 1
CONFIG_TENSOR = "__config__"
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    """
    Hiperparámetros de la arquitectura.

    Por defecto: imágenes 32×32×3, patches de 8 (N=16), D=64, 4 cabezas,
    2 capas, MLP de 128 y 10 clases.
    """
    image_h: int = 32
    image_w: int = 32
    channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    mlp_dim: int = 128
    num_classes: int = 10

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            minimum = 0 if f.name == 'num_layers' else 1
            if not isinstance(value, int) or value < minimum:
                raise ConfigurationError(f"{f.name} debe ser un entero >= {minimum}, recibido {value!r}")
        if self.image_h % self.patch_size != 0 or self.image_w % self.patch_size != 0:
            raise ConfigurationError(
                f"El patch {self.patch_size} no divide la imagen {self.image_h}×{self.image_w}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim ({self.embed_dim}) debe ser divisible por num_heads ({self.num_heads})")

    @property
    def n_patches(self) -> int:
        """N = hw/p²."""
        return (self.image_h * self.image_w) // (self.patch_size ** 2)

    @property
    def patch_dim(self) -> int:
        """L = p²c."""
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def image_shape(self) -> tuple:
        return (self.image_h, self.image_w, self.channels)

    def to_vector(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_vector(cls, values) -> 'ViTConfig':
        names = [f.name for f in fields(cls)]
        if len(values) != len(names):
            raise ConfigurationError(f"Vector de configuración con {len(values)} valores, se esperaban {len(names)}")
        return cls(**{name: int(v) for name, v in zip(names, values)})


class MultiHeadSelfAttention(nn.Module):
    """softmax(QKᵀ/√(D/heads))V por cabeza, con proyección de salida."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split_heads(self, t: torch.Tensor) -> torch.Tensor:
        b, n, _ = t.shape
        return t.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        q = self._split_heads(self.query(x))
        k = self._split_heads(self.key(x))
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        attn = self.attention_weights(x)
        v = self._split_heads(self.value(x))
        out = torch.matmul(attn, v).transpose(1, 2).reshape(b, n, d)
        return self.out(out)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Capa pre-LN: z ← z + MSA(LN(z)); z ← z + MLP(LN(z))."""

    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_dim)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = z + self.attn(self.norm1(z))
        z = z + self.mlp(self.norm2(z))
        return z


def extract_patches(images: torch.Tensor, cfg: ViTConfig) -> torch.Tensor:
    """
    Divide imágenes en patches aplanados.

    Args:
        images: Tensor (B, h, w, c) o (h, w, c)
        cfg: Configuración del modelo

    Returns:
        Tensor (B, N, L) o (N, L); fila i = patch i en orden raster, píxel mayor y canal menor
    """
    single = images.dim() == 3
    if single:
        images = images.unsqueeze(0)
    if images.dim() != 4 or tuple(images.shape[1:]) != cfg.image_shape:
        raise DimensionError(f"Forma de imagen {tuple(images.shape)} incompatible con {cfg.image_shape}")
    b, h, w, c = images.shape
    p = cfg.patch_size
    patches = images.reshape(b, h // p, p, w // p, p, c).permute(0, 1, 3, 2, 4, 5)
    patches = patches.reshape(b, cfg.n_patches, cfg.patch_dim)
    return patches[0] if single else patches


class VisionTransformer(nn.Module):
    """
    ViT para clasificación.

    Los pesos del embedding se guardan como matrices explícitas:
    patch_embedding E (L×D), pos_embedding E_pos ((N+1)×D) y class_token x_class (D).
    """

    def __init__(self, cfg: ViTConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embedding = nn.Parameter(torch.zeros(cfg.patch_dim, cfg.embed_dim))
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.n_patches + 1, cfg.embed_dim))
        self.class_token = nn.Parameter(torch.zeros(cfg.embed_dim))
        self.layers = nn.ModuleList([
            EncoderLayer(cfg.embed_dim, cfg.num_heads, cfg.mlp_dim) for _ in range(cfg.num_layers)
        ])
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.num_classes)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """
        Secuencia de patches embebidos: z_0 = [x_class; x_p^1 E; ...; x_p^N E] + E_pos.

        Args:
            images: Tensor (B, h, w, c)

        Returns:
            Tensor (B, N+1, D); la fila 0 es el class token
        """
        if images.dim() == 3:
            images = images.unsqueeze(0)
        patches = extract_patches(images, self.cfg)
        tokens = torch.matmul(patches, self.patch_embedding)
        cls = self.class_token.expand(tokens.shape[0], 1, -1)
        return torch.cat([cls, tokens], dim=1) + self.pos_embedding

    def encoder_forward(self, z: torch.Tensor) -> torch.Tensor:
        """Aplica las capas del encoder. Falla con NumericError si aparece un valor no finito."""
        if z.shape[-2:] != (self.cfg.n_patches + 1, self.cfg.embed_dim):
            raise DimensionError(
                f"Secuencia {tuple(z.shape)} incompatible con ({self.cfg.n_patches + 1}, {self.cfg.embed_dim})")
        single = z.dim() == 2
        if single:
            z = z.unsqueeze(0)
        for index, layer in enumerate(self.layers):
            z = layer(z)
            if not torch.isfinite(z).all():
                raise NumericError(f"Valor no finito en la capa {index} del encoder", layer=index)
        return z[0] if single else z

    def classify(self, z_out: torch.Tensor) -> torch.Tensor:
        """Logits a partir del class token de salida (LN final + cabeza lineal)."""
        return self.head(self.norm(z_out[..., 0, :]))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """
        Forward completo.

        Args:
            images: Tensor (B, h, w, c) con valores en [0, 1]

        Returns:
            Logits (B, clases)
        """
        return self.classify(self.encoder_forward(self.embed(images)))

    def get_num_params(self) -> int:
        """Retorna número de parámetros del modelo."""
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def init_params(cfg: ViTConfig, seed: int = 0) -> VisionTransformer:
    """
    Crea un modelo con inicialización gaussiana determinista.

    Matrices con N(0, 0.02²) en orden fijo de parámetros; sesgos y class token a cero;
    ganancias de LayerNorm a uno.

    Args:
        cfg: Configuración
        seed: Semilla

    Returns:
        Modelo inicializado
    """
    model = VisionTransformer(cfg)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name == 'class_token' or name.endswith('.bias'):
                param.zero_()
            elif 'norm' in name:
                param.fill_(1.0)
            else:
                param.copy_(torch.randn(param.shape, generator=generator) * INIT_STD)
    return model


def to_image_batch(images: Union[np.ndarray, torch.Tensor], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Convierte una imagen (h, w, c) o un lote (B, h, w, c) de numpy a tensor (B, h, w, c)."""
    tensor = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    return tensor.to(dtype)


def predict_logits(model: VisionTransformer, images: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Logits sin gradiente para una imagen o un lote."""
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model(to_image_batch(images, dtype))


def create_model(cfg: Optional[ViTConfig] = None, seed: int = 0,
                 weights: Optional[str] = None) -> VisionTransformer:
    """
    Factory: carga pesos si se indican, si no inicializa con la semilla.
    """
    if weights is not None:
        return load_params(weights, cfg)
    return init_params(cfg or ViTConfig(), seed)


def save_params(model: VisionTransformer, filepath: Union[str, Path]) -> None:
    """
    Guarda los pesos en formato VITW.

    Cabecera "VITW", u32 versión, u32 número de tensores; por tensor: u16 longitud del nombre,
    nombre UTF-8, u8 rango, u32 dimensiones y datos float32 little-endian.
    El primer tensor (__config__) guarda la ViTConfig.
    """
    tensors = [(CONFIG_TENSOR, np.asarray(model.cfg.to_vector(), dtype=np.float32))]
    for name, value in model.state_dict().items():
        tensors.append((name, value.detach().cpu().numpy()))

    chunks = [VITW_MAGIC, struct.pack("<II", VITW_VERSION, len(tensors))]
    for name, array in tensors:
        encoded = name.encode('utf-8')
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype='<f4').tobytes())

    Path(filepath).write_bytes(b"".join(chunks))
    logger.info("Pesos guardados: %s (%d tensores)", filepath, len(tensors))


class _Reader:
    """Cursor sobre los bytes del archivo; los errores incluyen el offset."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.raw):
            raise FormatError(f"Archivo truncado leyendo {what}", offset=self.offset)
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_vitw(filepath: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Lee todos los tensores de un archivo VITW en orden."""
    path = Path(filepath)
    if not path.exists():
        raise FileNotFoundError(f"Pesos no encontrados: {filepath}")
    reader = _Reader(path.read_bytes())

    if reader.take(4, "magic") != VITW_MAGIC:
        raise FormatError("Magic inválido, se esperaba VITW", offset=0)
    version, count = reader.unpack("<II", "cabecera")
    if version != VITW_VERSION:
        raise FormatError(f"Versión VITW no soportada: {version}", offset=4)

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "longitud del nombre")
        start = reader.offset
        try:
            name = reader.take(name_len, "nombre").decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError("Nombre de tensor no es UTF-8", offset=start)
        (rank,) = reader.unpack("<B", "rango")
        shape = reader.unpack(f"<{rank}I", "dimensiones")
        size = int(np.prod(shape, dtype=np.int64)) * 4
        data = np.frombuffer(reader.take(size, f"datos de {name}"), dtype='<f4')
        tensors[name] = data.reshape(shape).astype(np.float32)

    if reader.offset != len(reader.raw):
        raise FormatError("Bytes sobrantes al final del archivo", offset=reader.offset)
    return tensors


def load_params(filepath: Union[str, Path], cfg: Optional[ViTConfig] = None) -> VisionTransformer:
    """
    Carga un modelo desde un archivo VITW.

    Args:
        filepath: Archivo de pesos
        cfg: Configuración esperada (opcional si el archivo incluye __config__)

    Returns:
        Modelo con los pesos cargados
    """
    tensors = read_vitw(filepath)
    stored = tensors.pop(CONFIG_TENSOR, None)
    if stored is not None:
        stored_cfg = ViTConfig.from_vector(stored.tolist())
        if cfg is not None and cfg != stored_cfg:
            raise ConfigurationError(f"La configuración del archivo {stored_cfg} no coincide con {cfg}")
        cfg = stored_cfg
    if cfg is None:
        raise ConfigurationError(f"{filepath} no incluye configuración y no se indicó ninguna")

    model = VisionTransformer(cfg)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError(f"Tensores incompatibles (faltan {missing}, sobran {extra})")
    state = {}
    for name, ref in expected.items():
        if tuple(ref.shape) != tensors[name].shape:
            raise DimensionError(f"{name}: forma {tensors[name].shape}, se esperaba {tuple(ref.shape)}")
        state[name] = torch.from_numpy(tensors[name].copy())
    model.load_state_dict(state)
    model.eval()
    return model


def get_model_info(model: VisionTransformer) -> Dict[str, Any]:
    """
    Obtiene información del modelo.

    Args:
        model: Modelo

    Returns:
        Dict con información
    """
    return {
        'name': model.__class__.__name__,
        'parameters': model.get_num_params(),
        'config': asdict(model.cfg),
    }
