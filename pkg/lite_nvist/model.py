"""
Encoder (feature + class tokens), masked-autoencoder pretraining, the
camera-conditioned decoder and the reshaping of output tokens into a VM field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .attention import (AdaLNMLP, AdaLNParams, PatchEmbed, SelfAttentionSublayer, TransformerBlock,
                        patchify, sincos_2d, unpatchify)
from .autodiff import Tensor, as_tensor, concat, gather, no_grad
from .camera import COND_DIM
from .common import ConfigError, ContractError, DimensionError, ValidationError, log_warn
from .layers import LayerNorm, Linear, Module, normal_init, shape_only
from .renderer import RendererMLP, VMRepresentation

CONDITIONING_MODES = ("adaln", "concat", "none")
ATTENTION_MODES = ("cross", "self")


# =========================
# Configs
# =========================

@dataclass(frozen=True)
class EncoderConfig:
    image_size: Tuple[int, int] = (64, 64)    # (H, W)
    patch_size: int = 4
    depth: int = 4
    heads: int = 4
    embed_dim: int = 128
    mask_ratio: float = 0.75
    mae_decoder_dim: int = 64
    mae_decoder_depth: int = 1
    mae_decoder_heads: int = 4

    @property
    def grid(self) -> Tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def num_tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def validate(self) -> "EncoderConfig":
        h, w = self.image_size
        if self.patch_size <= 0 or h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"encoder patch size {self.patch_size} must divide image size {h}x{w}")
        if self.heads <= 0 or self.embed_dim % self.heads:
            raise ConfigError(f"encoder width {self.embed_dim} not divisible by {self.heads} heads")
        if self.embed_dim % 4 or self.mae_decoder_dim % 4:
            raise ConfigError("encoder and MAE decoder widths must be divisible by 4")
        if self.mae_decoder_dim % self.mae_decoder_heads:
            raise ConfigError("MAE decoder width must be divisible by its heads")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        return self


@dataclass(frozen=True)
class DecoderConfig:
    vm_resolution: int = 24
    vm_channels: int = 16
    decoder_patch: int = 3
    depth: int = 4
    heads: int = 4
    embed_dim: int = 128
    adaln_hidden: int = 64
    conditioning: str = "adaln"
    attention: str = "cross"

    @property
    def grid(self) -> int:
        return self.vm_resolution // self.decoder_patch

    @property
    def num_matrix_tokens(self) -> int:
        return 3 * self.grid ** 2

    @property
    def num_vector_tokens(self) -> int:
        return 3 * self.grid

    @property
    def num_output_tokens(self) -> int:
        return self.num_matrix_tokens + self.num_vector_tokens

    @property
    def matrix_head_width(self) -> int:
        return self.decoder_patch ** 2 * self.vm_channels

    @property
    def vector_head_width(self) -> int:
        return self.decoder_patch * self.vm_channels

    @property
    def sites_per_block(self) -> int:
        return 3

    def validate(self) -> "DecoderConfig":
        if self.decoder_patch <= 0 or self.vm_resolution % self.decoder_patch:
            raise ConfigError(f"decoder patch {self.decoder_patch} must divide VM resolution {self.vm_resolution}")
        if self.vm_resolution < 2:
            raise ConfigError("VM resolution must be at least 2")
        if self.heads <= 0 or self.embed_dim % self.heads:
            raise ConfigError(f"decoder width {self.embed_dim} not divisible by {self.heads} heads")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(f"conditioning must be one of {CONDITIONING_MODES}, got '{self.conditioning}'")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}, got '{self.attention}'")
        return self


@dataclass(frozen=True)
class RendererConfig:
    hidden: int = 64
    n_samples: int = 48
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)


# =========================
# Encoder
# =========================

class Encoder(Module):
    """ViT encoder: patch embedding + fixed sin-cos positions + class token + plain blocks."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg.validate()
        e = cfg.embed_dim
        self.patch_embed = PatchEmbed(cfg.patch_size, e, rng)
        self.cls_token = self.param(rng, (1, e), normal_init(0.02))
        self.pos_embed = sincos_2d(e, cfg.grid)
        self.blocks = [TransformerBlock(e, cfg.heads, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(e, rng)

    def _check(self, image: np.ndarray) -> None:
        h, w = self.cfg.image_size
        if np.shape(image) != (h, w, 3):
            raise ConfigError(f"encoder expects images of shape {(h, w, 3)}, got {np.shape(image)}")

    def _run(self, tokens: Tensor) -> Tensor:
        x = concat([self.cls_token, tokens], axis=0)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def forward(self, image: np.ndarray) -> Tuple[Tensor, Tensor]:
        """image (H, W, 3) -> (F (N, e), C (1, e))"""
        self._check(image)
        tokens, _ = self.patch_embed(image)
        x = self._run(tokens + self.pos_embed.astype(tokens.dtype))
        return x[1:], x[0:1]

    def forward_visible(self, image: np.ndarray, keep: np.ndarray) -> Tensor:
        """Encode only the patches listed in `keep`; returns (1 + len(keep), e) with the class token first."""
        self._check(image)
        tokens, _ = self.patch_embed(image)
        tokens = tokens + self.pos_embed.astype(tokens.dtype)
        return self._run(gather(tokens, keep))


# =========================
# Masked autoencoder
# =========================

def num_masked(n_patches: int, mask_ratio: float) -> int:
    if not 0.0 <= mask_ratio < 1.0:
        raise ValidationError(f"mask_ratio must be in [0, 1), got {mask_ratio}")
    return int(math.ceil(round(mask_ratio * n_patches, 9)))


class MaskedAutoencoder(Module):
    """Shared encoder plus a light decoder that inpaints masked patches."""

    def __init__(self, encoder: Encoder, rng: np.random.Generator):
        super().__init__()
        cfg = encoder.cfg
        d = cfg.mae_decoder_dim
        self.encoder = encoder
        self.decoder_embed = Linear(cfg.embed_dim, d, rng)
        self.mask_token = self.param(rng, (1, d), normal_init(0.02))
        self.decoder_pos = sincos_2d(d, cfg.grid)
        self.decoder_blocks = [TransformerBlock(d, cfg.mae_decoder_heads, rng) for _ in range(cfg.mae_decoder_depth)]
        self.decoder_norm = LayerNorm(d, rng)
        self.decoder_pred = Linear(d, cfg.patch_size ** 2 * 3, rng)

    def loss(self, image: np.ndarray, mask_ratio: float, rng: np.random.Generator) -> Tuple[Tensor, np.ndarray]:
        """L2 reconstruction loss on masked patches only, and the boolean patch mask."""
        n = self.encoder.cfg.num_tokens
        n_mask = num_masked(n, mask_ratio)
        mask = np.zeros(n, dtype=bool)
        if n_mask == 0:
            return Tensor(0.0), mask
        perm = rng.permutation(n)
        mask[perm[:n_mask]] = True
        keep = np.flatnonzero(~mask)
        latent = self.decoder_embed(self.encoder.forward_visible(image, keep))
        # every position picks either its visible token or the shared mask token (last row)
        rank = np.full(n, len(keep), dtype=np.int64)
        rank[keep] = np.arange(len(keep))
        seq = gather(concat([latent[1:], self.mask_token], axis=0), rank)
        seq = seq + self.decoder_pos.astype(seq.dtype)
        x = concat([latent[0:1], seq], axis=0)
        for blk in self.decoder_blocks:
            x = blk(x)
        pred = self.decoder_pred(self.decoder_norm(x))[1:]
        target, _ = patchify(image, self.encoder.cfg.patch_size)
        diff = pred - target.astype(pred.dtype)
        per_patch = (diff * diff).mean(axis=-1)
        loss = (per_patch * mask.astype(pred.dtype)).sum() * (1.0 / n_mask)
        return loss, mask

    def reconstruct(self, image: np.ndarray, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
        n = self.encoder.cfg.num_tokens
        with no_grad():
            mask = np.zeros(n, dtype=bool)
            mask[rng.permutation(n)[:num_masked(n, mask_ratio)]] = True
            keep = np.flatnonzero(~mask)
            latent = self.decoder_embed(self.encoder.forward_visible(image, keep))
            rank = np.full(n, len(keep), dtype=np.int64)
            rank[keep] = np.arange(len(keep))
            seq = gather(concat([latent[1:], self.mask_token], axis=0), rank) + self.decoder_pos
            x = concat([latent[0:1], seq], axis=0)
            for blk in self.decoder_blocks:
                x = blk(x)
            pred = self.decoder_pred(self.decoder_norm(x))[1:].data
        return unpatchify(pred, self.encoder.cfg.patch_size, self.encoder.cfg.grid)


def mae_pretrain_step(mae: MaskedAutoencoder, image: np.ndarray, mask_ratio: float, optimizer,
                      rng: np.random.Generator, lr_scale: float = 1.0) -> float:
    """One masked-inpainting update; returns the reconstruction loss before the update."""
    mae.zero_grad()
    loss, _ = mae.loss(image, mask_ratio, rng)
    if loss.requires_grad:
        loss.backward()
        optimizer.step(lr_scale)
    return loss.item()


# =========================
# Decoder
# =========================

class DecoderBlock(Module):
    """AdaLN self-attention over output tokens, then a cross-attention transformer block."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        super().__init__()
        adaptive = cfg.conditioning == "adaln"
        self.self_attn = SelfAttentionSublayer(cfg.embed_dim, cfg.heads, rng, adaptive=adaptive)
        self.block = TransformerBlock(cfg.embed_dim, cfg.heads, rng, cross=cfg.attention == "cross",
                                      adaptive=adaptive)

    def forward(self, x: Tensor, context: Optional[Tensor], params: Optional[List[AdaLNParams]]) -> Tensor:
        x = self.self_attn(x, params[0] if params else None)
        return self.block(x, context, params[1:3] if params else None)


def reshape_to_vm(tokens: Tensor, cfg: DecoderConfig,
                  matrix_head: Callable[[Tensor], Tensor],
                  vector_head: Callable[[Tensor], Tensor]) -> VMRepresentation:
    """
    Matrix tokens (first 3*G^2, plane-major yz, zx, xy, row-major inside a plane) and
    vector tokens (last 3*G, axis-major x, y, z) -> VM factors at resolution R = G*q.
    """
    g, q, k, r = cfg.grid, cfg.decoder_patch, cfg.vm_channels, cfg.vm_resolution
    if tokens.shape[0] != cfg.num_output_tokens:
        raise ContractError(f"expected {cfg.num_output_tokens} output tokens, got {tokens.shape[0]}")
    mt = matrix_head(tokens[: cfg.num_matrix_tokens])
    vt = vector_head(tokens[cfg.num_matrix_tokens:])
    if mt.shape[-1] != q * q * k or vt.shape[-1] != q * k:
        raise DimensionError(f"head widths {mt.shape[-1]}/{vt.shape[-1]} do not match {q * q * k}/{q * k}")
    planes = mt.reshape(3, g, g, q, q, k).transpose(0, 1, 3, 2, 4, 5).reshape(3, r, r, k)
    lines = vt.reshape(3, r, k)
    return VMRepresentation(vectors=[lines[a] for a in range(3)], matrices=[planes[a] for a in range(3)])


def vm_to_tokens(vm: VMRepresentation, q: int) -> np.ndarray:
    """Inverse of reshape_to_vm with identity heads (token rows of width q*q*k / q*k, zero padded)."""
    r, k = vm.resolution, vm.channels
    g = r // q
    planes = np.stack([m.data for m in vm.matrices]).reshape(3, g, q, g, q, k).transpose(0, 1, 3, 2, 4, 5)
    planes = planes.reshape(3 * g * g, q * q * k)
    lines = np.stack([v.data for v in vm.vectors]).reshape(3 * g, q * k)
    out = np.zeros((planes.shape[0] + lines.shape[0], q * q * k))
    out[: planes.shape[0]] = planes
    out[planes.shape[0]:, : q * k] = lines
    return out


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg.validate()
        e = cfg.embed_dim
        n = cfg.num_output_tokens
        self.output_tokens = self.param(rng, (n, e), normal_init(0.02))
        # row 0 is the class-token slot
        self.pos_embed = self.param(rng, (n + 1, e), normal_init(0.02))
        self.adaln = (AdaLNMLP(e, cfg.sites_per_block * cfg.depth, cfg.adaln_hidden, rng)
                      if cfg.conditioning == "adaln" else None)
        self.cond_proj = Linear(COND_DIM, e, rng) if cfg.conditioning == "concat" else None
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(e, rng)
        self.matrix_head = Linear(e, cfg.matrix_head_width, rng)
        self.vector_head = Linear(e, cfg.vector_head_width, rng)

    def forward(self, features: Tensor, cls: Tensor, cond: np.ndarray) -> VMRepresentation:
        cfg = self.cfg
        if features.shape[-1] != cfg.embed_dim or cls.shape != (1, cfg.embed_dim):
            raise ConfigError(f"decoder width {cfg.embed_dim} does not match encoder tokens {features.shape}")
        o = concat([cls, self.output_tokens], axis=0) + self.pos_embed
        if self.cond_proj is not None:
            c = as_tensor(np.asarray(cond).reshape(1, -1).astype(o.dtype))
            o = concat([o, self.cond_proj(c)], axis=0)
        n_o = o.shape[0]
        params = self.adaln(cond) if self.adaln is not None else None
        cross = cfg.attention == "cross"
        x = o if cross else concat([o, features], axis=0)
        for i, blk in enumerate(self.blocks):
            site = params[3 * i: 3 * i + 3] if params is not None else None
            x = blk(x, features if cross else None, site)
        x = self.norm(x[:n_o])
        return reshape_to_vm(x[1: 1 + cfg.num_output_tokens], cfg, self.matrix_head, self.vector_head)


# =========================
# Full model
# =========================

class NViST(Module):
    def __init__(self, enc: EncoderConfig, dec: DecoderConfig, rend: RendererConfig,
                 rng: np.random.Generator):
        super().__init__()
        if enc.embed_dim != dec.embed_dim:
            raise ConfigError(f"encoder width {enc.embed_dim} != decoder width {dec.embed_dim}")
        self.encoder = Encoder(enc, rng)
        self.decoder = Decoder(dec, rng)
        self.renderer = RendererMLP(dec.vm_channels, rend.hidden, rng)
        self.rend_cfg = rend

    def forward(self, image: np.ndarray, cond: np.ndarray) -> VMRepresentation:
        f, c = self.encoder(image)
        return self.decoder(f, c, cond)

    def param_groups(self) -> Dict[str, List[Tuple[str, Tensor]]]:
        groups: Dict[str, List[Tuple[str, Tensor]]] = {"encoder": [], "decoder_renderer": []}
        for name, p in self.named_parameters():
            groups["encoder" if name.startswith("encoder.") else "decoder_renderer"].append((name, p))
        return groups


def init_decoder_from_mae(model: NViST) -> int:
    """
    Copy encoder attention/MLP weights into every decoder block (cycling through the
    encoder blocks). Output-token embeddings and reshaping heads keep their own init.
    Returns the number of tensors copied.
    """
    enc_blocks = model.encoder.blocks
    copied = 0
    for i, blk in enumerate(model.decoder.blocks):
        src = enc_blocks[i % len(enc_blocks)]
        pairs = [(src.attn, blk.self_attn.attn), (src.attn, blk.block.attn), (src.mlp, blk.block.mlp)]
        for s, d in pairs:
            for (_, ps), (name, pd) in zip(s.named_parameters(), d.named_parameters()):
                if ps.shape != pd.shape:
                    log_warn(f"decoder block {i}: skipping {name}, shape {ps.shape} vs {pd.shape}")
                    continue
                pd.data = ps.data.copy()
                copied += 1
    return copied


def count_parameters(enc: EncoderConfig, dec: DecoderConfig, rend: RendererConfig,
                     include_mae: bool = False) -> Dict[str, int]:
    """Per-component parameter counts from declared shapes; nothing is allocated."""
    rng = np.random.default_rng(0)
    with shape_only():
        model = NViST(enc, dec, rend, rng)
        counts = {
            "encoder": model.encoder.num_parameters(),
            "decoder": model.decoder.num_parameters(),
            "renderer": model.renderer.num_parameters(),
        }
        if include_mae:
            mae = MaskedAutoencoder(model.encoder, rng)
            counts["mae_decoder"] = mae.num_parameters() - counts["encoder"]
    counts["total"] = counts["encoder"] + counts["decoder"] + counts["renderer"]
    return counts


def token_report(enc: EncoderConfig, dec: DecoderConfig) -> Dict[str, int]:
    return {
        "feature_tokens": enc.num_tokens,
        "output_tokens": dec.num_output_tokens,
        "matrix_head_width": dec.matrix_head_width,
        "vector_head_width": dec.vector_head_width,
    }
