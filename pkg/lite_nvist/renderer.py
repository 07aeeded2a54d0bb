"""
Vector-matrix radiance field, density/color decoding, ray sampling and
volumetric compositing.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor, concat, gather, matmul, no_grad
from .camera import CameraPose, Ray, RayBundle, bound_rays, generate_rays, pixel_grid
from .common import ConfigError, ContractError, DimensionError, chunks
from .layers import Linear, Module

BOUNDS_LO = (-1.0, -1.0, -1.0)
BOUNDS_HI = (1.0, 1.0, 1.0)
BOUNDS_TOL = 1e-6

# (vector axis, matrix row axis, matrix column axis) for the three rank terms
VM_AXES = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


# =========================
# Types
# =========================

@dataclass
class VMRepresentation:
    """Three R x k axis vectors (x, y, z) and three R x R x k plane matrices (yz, zx, xy)."""

    vectors: List[Tensor]
    matrices: List[Tensor]
    lo: Tuple[float, float, float] = BOUNDS_LO
    hi: Tuple[float, float, float] = BOUNDS_HI

    def __post_init__(self) -> None:
        if len(self.vectors) != 3 or len(self.matrices) != 3:
            raise DimensionError("VM needs exactly three vectors and three matrices")
        r, k = self.vectors[0].shape
        for v in self.vectors:
            if v.shape != (r, k):
                raise DimensionError(f"VM vectors disagree: {[t.shape for t in self.vectors]}")
        for m in self.matrices:
            if m.shape != (r, r, k):
                raise DimensionError(f"VM matrices must be {(r, r, k)}, got {m.shape}")
        if r < 2:
            raise ConfigError(f"VM resolution must be at least 2, got {r}")

    @property
    def resolution(self) -> int:
        return self.vectors[0].shape[0]

    @property
    def channels(self) -> int:
        return self.vectors[0].shape[1]

    @classmethod
    def from_arrays(cls, vectors: Sequence[np.ndarray], matrices: Sequence[np.ndarray],
                    requires_grad: bool = False) -> "VMRepresentation":
        return cls([Tensor(v, requires_grad=requires_grad) for v in vectors],
                   [Tensor(m, requires_grad=requires_grad) for m in matrices])

    def tensors(self) -> List[Tensor]:
        return list(self.vectors) + list(self.matrices)


@dataclass
class RaySampleBatch:
    t: np.ndarray           # (P, N) strictly increasing
    deltas: np.ndarray      # (P, N) interval widths, last one reaches t_far
    positions: np.ndarray   # (P, N, 3)
    directions: np.ndarray  # (P, 3)
    t_near: np.ndarray      # (P,)
    t_far: np.ndarray       # (P,)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Interval boundaries (P, N+1): t_1..t_N then t_far."""
        return np.concatenate([self.t, self.t_far[:, None]], axis=1)


@dataclass
class RenderOptions:
    n_samples: int = 48
    stratified: bool = False
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    chunk: int = 4096
    depth_eps: float = 1e-10


@dataclass
class RayRender:
    rgb: Tensor                 # (P, 3)
    weights: Tensor             # (P, N)
    transmittance: Tensor       # (P, N)
    accumulation: np.ndarray    # (P,)
    depth: np.ndarray           # (P,)
    edges: np.ndarray           # (P, N+1) normalized to [0, 1] per ray


@dataclass
class ImageRender:
    rgb: np.ndarray             # (H, W, 3)
    depth: np.ndarray           # (H, W)
    accumulation: np.ndarray    # (H, W)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)


# =========================
# Field queries
# =========================

def grid_coords(vm: VMRepresentation, points: np.ndarray) -> np.ndarray:
    lo = np.asarray(vm.lo, dtype=np.float64)
    hi = np.asarray(vm.hi, dtype=np.float64)
    c = (points - lo) / (hi - lo) * (vm.resolution - 1)
    return np.clip(c, 0.0, vm.resolution - 1)


def _lerp_index(c: np.ndarray, r: int) -> Tuple[np.ndarray, np.ndarray]:
    i0 = np.clip(np.floor(c).astype(np.int64), 0, r - 2)
    return i0, c - i0


def _line(v: Tensor, c: np.ndarray, r: int) -> Tensor:
    i0, f = _lerp_index(c, r)
    f = f[:, None].astype(v.dtype)
    return gather(v, i0) * (1.0 - f) + gather(v, i0 + 1) * f


def _plane(m: Tensor, cr: np.ndarray, cc: np.ndarray, r: int) -> Tensor:
    i0, fi = _lerp_index(cr, r)
    j0, fj = _lerp_index(cc, r)
    flat = m.reshape(r * r, m.shape[-1])
    fi = fi[:, None].astype(m.dtype)
    fj = fj[:, None].astype(m.dtype)
    return (gather(flat, i0 * r + j0) * ((1.0 - fi) * (1.0 - fj))
            + gather(flat, i0 * r + j0 + 1) * ((1.0 - fi) * fj)
            + gather(flat, (i0 + 1) * r + j0) * (fi * (1.0 - fj))
            + gather(flat, (i0 + 1) * r + j0 + 1) * (fi * fj))


def interpolate_features(vm: VMRepresentation, points: np.ndarray) -> Tensor:
    """Features at (P, 3) points; coordinates outside the bounds are clamped."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    coords = grid_coords(vm, pts)
    r = vm.resolution
    feature = None
    for (va, ra, ca), vec, mat in zip(VM_AXES, vm.vectors, vm.matrices):
        term = _line(vec, coords[:, va], r) * _plane(mat, coords[:, ra], coords[:, ca], r)
        feature = term if feature is None else feature + term
    return feature


def query_vm(vm: VMRepresentation, x: np.ndarray) -> Tensor:
    """k-channel feature at a 3-vector, or (P, k) at (P, 3) points; points must lie in the bounds."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    lo = np.asarray(vm.lo) - BOUNDS_TOL
    hi = np.asarray(vm.hi) + BOUNDS_TOL
    if np.any(pts < lo) or np.any(pts > hi):
        raise ContractError("query_vm: point outside the field bounds")
    feat = interpolate_features(vm, pts)
    return feat.reshape(vm.channels) if single else feat


def dense_grid(vm: VMRepresentation) -> np.ndarray:
    """Materialize the full (R, R, R, k) feature grid."""
    vx, vy, vz = (v.data.astype(np.float64) for v in vm.vectors)
    myz, mzx, mxy = (m.data.astype(np.float64) for m in vm.matrices)
    return (np.einsum("ir,jlr->ijlr", vx, myz)
            + np.einsum("jr,lir->ijlr", vy, mzx)
            + np.einsum("lr,ijr->ijlr", vz, mxy))


def trilinear(grid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of an (R, R, R, k) grid at continuous grid coordinates (P, 3)."""
    r = grid.shape[0]
    out = np.zeros((coords.shape[0], grid.shape[-1]))
    idx, frac = zip(*(_lerp_index(coords[:, a], r) for a in range(3)))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((frac[0] if dx else 1 - frac[0]) * (frac[1] if dy else 1 - frac[1])
                     * (frac[2] if dz else 1 - frac[2]))
                out += w[:, None] * grid[idx[0] + dx, idx[1] + dy, idx[2] + dz]
    return out


# =========================
# Density and color
# =========================

def density(feature: Tensor) -> Tensor:
    """sigma = relu(sum over channels)"""
    return feature.sum(axis=-1).relu()


class RendererMLP(Module):
    """(feature, unit view direction) -> rgb in (0, 1)"""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.fc1 = Linear(channels + 3, hidden, rng)
        self.fc2 = Linear(hidden, 3, rng)

    def forward(self, feature: Tensor, directions: np.ndarray) -> Tensor:
        return color(feature, directions, self)


def color(feature: Tensor, directions: np.ndarray, mlp: RendererMLP) -> Tensor:
    d = directions.data if isinstance(directions, Tensor) else np.asarray(directions)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > 1e-5):
        raise ContractError("view directions must be unit vectors")
    d = as_tensor(d.astype(feature.dtype))
    x = concat([feature, d], axis=-1)
    return mlp.fc2(mlp.fc1(x).relu()).sigmoid()


# =========================
# Sampling and compositing
# =========================

def sample_intervals(t_near: np.ndarray, t_far: np.ndarray, n: int, stratified: bool = False,
                     rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-ray sample parameters (P, N) and interval widths (P, N), one sample per equal bin."""
    if n <= 0:
        raise ConfigError(f"sample count must be positive, got {n}")
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    width = (t_far - t_near)[:, None] / n
    starts = t_near[:, None] + width * np.arange(n)[None, :]
    if stratified:
        rng = rng if rng is not None else np.random.default_rng(0)
        t = starts + width * rng.uniform(size=starts.shape)
    else:
        t = starts + 0.5 * width
    deltas = np.concatenate([t[:, 1:] - t[:, :-1], t_far[:, None] - t[:, -1:]], axis=1)
    return t, deltas


def sample_ray(ray: Ray, n: int, stratified: bool = False, seed: int = 0,
               lo: Sequence[float] = BOUNDS_LO, hi: Sequence[float] = BOUNDS_HI) -> Optional[RaySampleBatch]:
    """Samples between the ray's bounds intersection; None when the ray misses the box."""
    rays = bound_rays(RayBundle(ray.origin[None].astype(np.float64), ray.direction[None].astype(np.float64)), lo, hi)
    if not rays.hit[0]:
        return None
    return sample_bundle(rays, n, stratified, np.random.default_rng(seed))


def sample_bundle(rays: RayBundle, n: int, stratified: bool = False,
                  rng: Optional[np.random.Generator] = None) -> RaySampleBatch:
    # misses get a dummy unit interval; callers mask them out via rays.hit
    t_near = np.where(rays.hit, rays.t_near, 0.0)
    t_far = np.where(rays.hit, rays.t_far, 1.0)
    t, deltas = sample_intervals(t_near, t_far, n, stratified, rng)
    positions = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    return RaySampleBatch(t=t, deltas=deltas, positions=positions, directions=rays.directions,
                          t_near=t_near, t_far=t_far)


def exclusive_cumsum_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """U with U[j, i] = 1 for j < i, so (x @ U)[i] = sum_{j<i} x[j]."""
    return np.triu(np.ones((n, n), dtype=dtype), k=1)


def composite(sigma: Tensor, rgb: Tensor, deltas: np.ndarray) -> Tuple[Tensor, Tensor, Tensor]:
    """
    sigma (..., N), rgb (..., N, 3), deltas (..., N) ->
    (pixel rgb (..., 3), weights (..., N), transmittance (..., N)).
    """
    sigma = as_tensor(sigma)
    rgb = as_tensor(rgb)
    d = np.asarray(deltas).astype(sigma.dtype)
    if np.any(d <= 0):
        raise ContractError("composite needs positive interval widths")
    n = sigma.shape[-1]
    tau = sigma * d
    alpha = 1.0 - (-tau).exp()
    trans = (-matmul(tau.reshape(-1, n), as_tensor(exclusive_cumsum_matrix(n, sigma.dtype)))).exp()
    trans = trans.reshape(sigma.shape)
    weights = trans * alpha
    lead = sigma.shape[:-1]
    w = weights.reshape(lead + (n, 1))
    pixel = (w * rgb).sum(axis=-2)
    return pixel, weights, trans


# =========================
# Rendering
# =========================

def render_rays(vm: VMRepresentation, mlp: RendererMLP, rays: RayBundle, options: RenderOptions,
                rng: Optional[np.random.Generator] = None) -> RayRender:
    """Render bounded rays (see camera.bound_rays) through the field; differentiable in vm and mlp."""
    if rays.hit is None:
        rays = bound_rays(rays, vm.lo, vm.hi)
    batch = sample_bundle(rays, options.n_samples, options.stratified, rng)
    p, n = batch.t.shape
    pos = batch.positions.reshape(-1, 3)
    lo = np.asarray(vm.lo) - BOUNDS_TOL
    hi = np.asarray(vm.hi) + BOUNDS_TOL
    # out-of-bounds samples are culled, not clamped
    inside = np.all((pos >= lo) & (pos <= hi), axis=1) & np.repeat(rays.hit, n)
    feature = interpolate_features(vm, pos)
    dtype = feature.dtype
    sigma = density(feature) * inside.astype(dtype)
    dirs = np.repeat(batch.directions, n, axis=0)
    rgb = color(feature, dirs, mlp)
    pixel, weights, trans = composite(sigma.reshape(p, n), rgb.reshape(p, n, 3), batch.deltas)
    acc = weights.data.sum(axis=-1)
    bg = np.asarray(options.background, dtype=dtype)
    # background fills the unoccupied fraction of each ray
    pixel = pixel + (1.0 - weights.sum(axis=-1)).reshape(p, 1) * as_tensor(bg)
    depth = (weights.data * batch.t).sum(axis=-1) / np.maximum(acc, options.depth_eps)
    span = (batch.t_far - batch.t_near)[:, None]
    edges = (batch.edges - batch.t_near[:, None]) / span
    return RayRender(rgb=pixel, weights=weights, transmittance=trans, accumulation=acc,
                     depth=depth, edges=edges)


def render_image(vm: VMRepresentation, mlp: RendererMLP, pose: CameraPose,
                 options: Optional[RenderOptions] = None) -> ImageRender:
    """Full-image render with gradients disabled; unstratified samples."""
    options = options or RenderOptions()
    w, h = pose.width, pose.height
    pixels = pixel_grid(w, h)
    rgb = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    acc = np.zeros(h * w)
    with no_grad():
        for idx in chunks(range(h * w), options.chunk):
            sel = np.asarray(idx)
            rays = bound_rays(generate_rays(pose, pixels[sel]), vm.lo, vm.hi)
            out = render_rays(vm, mlp, rays, replace(options, stratified=False))
            rgb[sel] = out.rgb.data
            depth[sel] = out.depth
            acc[sel] = out.accumulation
    return ImageRender(rgb=rgb.reshape(h, w, 3), depth=depth.reshape(h, w), accumulation=acc.reshape(h, w))
