"""
Training losses (photometric L2, distortion regularizer, pluggable perceptual term)
and image metrics (PSNR, SSIM).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Tuple, Union

import numpy as np
from scipy import signal

from .autodiff import Tensor, as_tensor
from .common import ConfigError, ContractError, MetricError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

TensorLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    lambda_lpips: float = 0.1
    beta_dist: float = 0.01

    def validate(self) -> "LossWeights":
        if self.lambda_lpips < 0 or self.beta_dist < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self}")
        return self


# =========================
# Losses
# =========================

def _as(x: TensorLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return as_tensor(np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x))


def l2_loss(pred: TensorLike, target: TensorLike) -> Tensor:
    """Mean squared error over every element."""
    p = _as(pred)
    t = _as(target, p.dtype)
    if p.shape != t.shape:
        raise ContractError(f"l2_loss shape mismatch: {p.shape} vs {t.shape}")
    d = p - t
    return (d * d).mean()


def distortion_loss(weights: TensorLike, edges: np.ndarray) -> Tensor:
    """
    weights (P, N) >= 0 and per-ray normalized interval edges (P, N+1) ->
    mean over rays of sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 ds_i,
    with s the interval midpoints and ds the interval widths.
    """
    w = _as(weights)
    e = np.asarray(edges, dtype=np.float64)
    if w.ndim == 1:
        w = w.reshape(1, -1)
        e = e.reshape(1, -1)
    p, n = w.shape
    if e.shape != (p, n + 1):
        raise ContractError(f"distortion_loss expects edges {(p, n + 1)}, got {e.shape}")
    mid = 0.5 * (e[:, 1:] + e[:, :-1])
    width = (e[:, 1:] - e[:, :-1]).astype(w.dtype)
    gaps = np.abs(mid[:, :, None] - mid[:, None, :]).astype(w.dtype)
    pair = (w.reshape(p, n, 1) * w.reshape(p, 1, n) * gaps).sum(axis=-1).sum(axis=-1)
    self_term = (w * w * width).sum(axis=-1) * (1.0 / 3.0)
    return (pair + self_term).mean()


class PerceptualLoss(Protocol):
    def __call__(self, pred: Tensor, target: np.ndarray) -> Tensor:
        ...


class ZeroPerceptual:
    """Placeholder perceptual term; contributes nothing until a real one is plugged in."""

    def __call__(self, pred: Tensor, target: np.ndarray) -> Tensor:
        return Tensor(0.0, dtype=pred.dtype)


def total_loss(pred: Tensor, target: np.ndarray, weights: TensorLike, edges: np.ndarray,
               loss_weights: LossWeights, perceptual: Optional[PerceptualLoss] = None
               ) -> Tuple[Tensor, Dict[str, float]]:
    """L2 + lambda * perceptual + beta * distortion, plus the detached parts."""
    perceptual = perceptual or ZeroPerceptual()
    l2 = l2_loss(pred, target)
    loss = l2
    parts = {"l2": l2.item(), "perceptual": 0.0, "dist": 0.0}
    if loss_weights.lambda_lpips > 0 and not isinstance(perceptual, ZeroPerceptual):
        lp = perceptual(pred, target)
        loss = loss + lp * loss_weights.lambda_lpips
        parts["perceptual"] = lp.item()
    if loss_weights.beta_dist > 0:
        dist = distortion_loss(weights, edges)
        loss = loss + dist * loss_weights.beta_dist
        parts["dist"] = dist.item()
    parts["loss"] = loss.item()
    return loss, parts


# =========================
# Metrics
# =========================

def mse_to_psnr(mse: float) -> float:
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    return mse_to_psnr(float(np.mean((a - b) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise MetricError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()

    def filt(x: np.ndarray) -> np.ndarray:
        return signal.convolve2d(x, win, mode="valid")

    scores = []
    for c in range(a.shape[-1]):
        x, y = a[..., c], b[..., c]
        mx, my = filt(x), filt(y)
        vx = filt(x * x) - mx * mx
        vy = filt(y * y) - my * my
        cxy = filt(x * y) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
