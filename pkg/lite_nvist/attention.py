"""
Patch embedding, multi-head attention, (adaptive) layer normalization and the
conditioning MLP that regresses per-site scale/shift/gate triples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor, concat, matmul, silu
from .camera import COND_DIM
from .common import ConfigError, DimensionError
from .layers import LayerNorm, Linear, Mlp, Module, layer_norm, zeros_init


# =========================
# Patches
# =========================

def patchify(image: np.ndarray, p: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """(H, W, C) image -> (H/p * W/p, p*p*C) patches in row-major patch order."""
    image = np.asarray(image)
    h, w, c = image.shape
    if p <= 0 or h % p or w % p:
        raise ConfigError(f"patch size {p} must divide image size {h}x{w}")
    gh, gw = h // p, w // p
    x = image.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * gw, p * p * c), (gh, gw)


def unpatchify(patches: np.ndarray, p: int, grid: Tuple[int, int], channels: int = 3) -> np.ndarray:
    gh, gw = grid
    x = np.asarray(patches).reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * p, gw * p, channels)


class PatchEmbed(Module):
    """Flattened patches through one learned linear map to width e."""

    def __init__(self, patch_size: int, embed_dim: int, rng: np.random.Generator, channels: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = Linear(patch_size * patch_size * channels, embed_dim, rng)

    def forward(self, image: np.ndarray) -> Tuple[Tensor, Tuple[int, int]]:
        patches, grid = patchify(image, self.patch_size)
        return self.proj(as_tensor(patches)), grid


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, grid: Tuple[int, int]) -> np.ndarray:
    """Fixed 2-D sine-cosine positional embeddings, (gh*gw, dim)."""
    if dim % 4:
        raise ConfigError(f"sin-cos positional embedding needs width divisible by 4, got {dim}")
    gh, gw = grid
    rows, cols = np.meshgrid(np.arange(gh, dtype=np.float64), np.arange(gw, dtype=np.float64), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, rows), sincos_1d(dim // 2, cols)], axis=1)


# =========================
# Adaptive layer norm
# =========================

@dataclass
class AdaLNParams:
    alpha: Tensor   # scale
    delta: Tensor   # shift
    gamma: Tensor   # residual gate


def adaptive_layer_norm(x: Tensor, p: AdaLNParams, eps: float = 1e-5) -> Tensor:
    if p.alpha.shape[-1] != x.shape[-1]:
        raise DimensionError(f"AdaLN width {p.alpha.shape[-1]} does not match tokens {x.shape}")
    return p.delta + p.alpha * layer_norm(x, eps)


class AdaLNMLP(Module):
    """
    Conditioning vector -> (alpha, delta, gamma) for every normalization site.
    The last layer starts at zero weights with bias alpha=1, delta=0, gamma=0.
    """

    def __init__(self, embed_dim: int, sites: int, hidden: int, rng: np.random.Generator,
                 cond_dim: int = COND_DIM):
        super().__init__()
        self.embed_dim = embed_dim
        self.sites = sites
        self.fc1 = Linear(cond_dim, hidden, rng)
        self.fc2 = Linear(hidden, 3 * embed_dim * sites, rng, weight_init=zeros_init)
        if not isinstance(self.fc2.bias, Tensor):
            return
        bias = np.zeros((sites, 3, embed_dim))
        bias[:, 0, :] = 1.0
        self.fc2.bias.data = bias.reshape(-1).astype(self.fc2.bias.dtype)

    def forward(self, cond: np.ndarray) -> List[AdaLNParams]:
        c = as_tensor(np.asarray(cond).reshape(1, -1))
        out = self.fc2(silu(self.fc1(c))).reshape(self.sites, 3, self.embed_dim)
        return [AdaLNParams(alpha=out[s, 0], delta=out[s, 1], gamma=out[s, 2]) for s in range(self.sites)]


# =========================
# Attention
# =========================

class MultiHeadAttention(Module):
    def __init__(self, embed_dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads <= 0 or embed_dim % heads:
            raise ConfigError(f"embedding width {embed_dim} is not divisible by {heads} heads")
        self.embed_dim = embed_dim
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.q = Linear(embed_dim, embed_dim, rng)
        self.k = Linear(embed_dim, embed_dim, rng)
        self.v = Linear(embed_dim, embed_dim, rng)
        self.proj = Linear(embed_dim, embed_dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)

    def forward(self, queries: Tensor, keys_values: Tensor, return_weights: bool = False):
        n = queries.shape[0]
        q = self._split(self.q(queries))                      # (h, n, d)
        k = self._split(self.k(keys_values))                  # (h, m, d)
        v = self._split(self.v(keys_values))                  # (h, m, d)
        scores = matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(self.head_dim))
        weights = scores.softmax(axis=-1)
        out = matmul(weights, v).transpose(1, 0, 2).reshape(n, self.embed_dim)
        out = self.proj(out)
        return (out, weights) if return_weights else out


# =========================
# Transformer block
# =========================

class TransformerBlock(Module):
    """
    Pre-norm block: x += g1 * Attn(norm1(x), norm_ctx(context) or norm1(x));
    x += g2 * MLP(norm2(x)). Adaptive blocks take two AdaLNParams and use
    parameter-free norms; otherwise norms carry their own affine parameters and g = 1.
    """

    def __init__(self, embed_dim: int, heads: int, rng: np.random.Generator, cross: bool = False,
                 adaptive: bool = False, mlp_ratio: int = 4):
        super().__init__()
        self.cross = cross
        self.adaptive = adaptive
        self.norm1 = LayerNorm(embed_dim, rng, affine=not adaptive)
        self.norm_ctx = LayerNorm(embed_dim, rng) if cross else None
        self.attn = MultiHeadAttention(embed_dim, heads, rng)
        self.norm2 = LayerNorm(embed_dim, rng, affine=not adaptive)
        self.mlp = Mlp(embed_dim, mlp_ratio * embed_dim, rng)

    def forward(self, x: Tensor, context: Optional[Tensor] = None,
                params: Optional[Sequence[AdaLNParams]] = None) -> Tensor:
        if self.cross and context is None:
            raise DimensionError("cross-attention block called without context tokens")
        if params is not None and len(params) != 2:
            raise DimensionError(f"transformer block takes 2 AdaLN sites, got {len(params)}")
        h = adaptive_layer_norm(x, params[0]) if params else self.norm1(x)
        kv = self.norm_ctx(context) if self.cross else h
        a = self.attn(h, kv)
        x = x + (params[0].gamma * a if params else a)
        h = adaptive_layer_norm(x, params[1]) if params else self.norm2(x)
        m = self.mlp(h)
        return x + (params[1].gamma * m if params else m)


class SelfAttentionSublayer(Module):
    """x += gamma * Attn(AdaLN(x)) with one AdaLN site; plain LN and unit gate without params."""

    def __init__(self, embed_dim: int, heads: int, rng: np.random.Generator, adaptive: bool = True):
        super().__init__()
        self.norm = LayerNorm(embed_dim, rng, affine=not adaptive)
        self.attn = MultiHeadAttention(embed_dim, heads, rng)

    def forward(self, x: Tensor, params: Optional[AdaLNParams] = None) -> Tensor:
        h = adaptive_layer_norm(x, params) if params is not None else self.norm(x)
        a = self.attn(h, h)
        return x + (params.gamma * a if params is not None else a)


def cat_tokens(*sequences: Tensor) -> Tensor:
    return concat(list(sequences), axis=0)
