"""
Property suites behind `litenvist verify`. Every suite runs in float64 and reports
its worst error against a tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import autodiff as ad
from .attention import AdaLNParams, MultiHeadAttention, adaptive_layer_norm
from .autodiff import Tensor, gradcheck, gradcheck_tensors, precision
from .camera import (CameraPose, bound_rays, conditioned_center, encode_conditioning, generate_rays, look_at,
                     pixel_grid, relativize_pose)
from .common import UsageError, log_info
from .layers import Linear, layer_norm
from .losses import LossWeights, distortion_loss, psnr, ssim, total_loss
from .model import NViST, count_parameters, token_report
from .renderer import (RenderOptions, VMRepresentation, composite, dense_grid, grid_coords, query_vm, render_rays,
                       trilinear)
from .scenes import Primitive, ToyScene, generate_scene, raytrace_oracle, surface_distance
from .trainer import load_run_config

GRAD_TOL = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""


SuiteFn = Callable[[np.random.Generator], Tuple[float, float, str]]


# =========================
# Gradients
# =========================

def _op_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[Tensor], Tensor], np.ndarray]]:
    x = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    w = Tensor(rng.normal(size=(4, 5)))
    other = Tensor(rng.normal(size=(3, 4)))
    idx = np.array([2, 0, 2, 1])
    # keep ReLU inputs away from the kink
    off_kink = np.where(np.abs(x) < 0.1, 0.5, x)
    return {
        "add": (lambda t: (t + other).sum(), x),
        "sub": (lambda t: (other - t * 2.0).sum(), x),
        "mul": (lambda t: (t * other * t).sum(), x),
        "div": (lambda t: (other / t).sum(), pos),
        "pow": (lambda t: (t ** 3).sum(), x),
        "matmul": (lambda t: ad.matmul(t, w).sin().sum(), x),
        "exp": (lambda t: t.exp().sum(), x),
        "log": (lambda t: t.log().sum(), pos),
        "sqrt": (lambda t: t.sqrt().sum(), pos),
        "sin_cos": (lambda t: (t.sin() * t.cos()).sum(), x),
        "sigmoid": (lambda t: t.sigmoid().sum(), x),
        "relu": (lambda t: (t.relu() * other).sum(), off_kink),
        "softmax": (lambda t: (t.softmax(axis=-1) * other).sum(), x),
        "mean": (lambda t: (t.mean(axis=0) * t.mean(axis=0)).sum(), x),
        "reshape_transpose": (lambda t: (t.reshape(4, 3).T * other).sum(), x),
        "concat_slice": (lambda t: (ad.concat([t, t * 2.0], axis=0)[1:5] * other[0]).sum(), x),
        "gather": (lambda t: (ad.gather(t, idx[:3]) * other).sum(), x),
        "layer_norm": (lambda t: (layer_norm(t) * other).sum(), x),
    }


def suite_ops(rng: np.random.Generator) -> Tuple[float, float, str]:
    worst, worst_name = 0.0, ""
    for name, (f, x) in _op_cases(rng).items():
        err = gradcheck(f, x)
        if err > worst:
            worst, worst_name = err, name
    # parameterized layers, checked through their parameters
    lin = Linear(4, 3, rng)
    attn = MultiHeadAttention(4, 2, rng)
    tokens = Tensor(rng.normal(size=(5, 4)))
    ctx = Tensor(rng.normal(size=(3, 4)))
    ada = AdaLNParams(alpha=Tensor(rng.normal(size=4), requires_grad=True),
                      delta=Tensor(rng.normal(size=4), requires_grad=True),
                      gamma=Tensor(rng.normal(size=4), requires_grad=True))
    layer_cases = {
        "linear": (lambda: lin(tokens).sin().sum(), lin.parameters()),
        "attention": (lambda: (attn(tokens, ctx) * tokens).sum(), attn.parameters()),
        "adaln": (lambda: (adaptive_layer_norm(tokens, ada) * ada.gamma).sin().sum(),
                  [ada.alpha, ada.delta, ada.gamma]),
    }
    for name, (fn, params) in layer_cases.items():
        err = max(gradcheck_tensors(fn, params))
        if err > worst:
            worst, worst_name = err, name
    return worst, GRAD_TOL, f"worst op: {worst_name or '-'}"


def tiny_model(rng: np.random.Generator) -> NViST:
    cfg = load_run_config("tiny")
    model = NViST(cfg.encoder, cfg.decoder, cfg.renderer, rng)
    # open the zero-initialized gates so gradients reach every decoder sublayer
    if model.decoder.adaln is not None:
        w = model.decoder.adaln.fc2.weight
        w.data = rng.normal(0.0, 0.1, size=w.shape)
    return model


def pipeline_loss(model: NViST, image: np.ndarray, cond: np.ndarray, pose: CameraPose,
                  pixels: np.ndarray, target: np.ndarray, weights: LossWeights) -> Callable[[], Tensor]:
    options = RenderOptions(n_samples=8, stratified=False)

    def loss() -> Tensor:
        vm = model(image, cond)
        rays = bound_rays(generate_rays(pose, pixels), vm.lo, vm.hi)
        out = render_rays(vm, model.renderer, rays, options)
        return total_loss(out.rgb, target, out.weights, out.edges, weights)[0]
    return loss


def suite_pipeline(rng: np.random.Generator, coords_per_tensor: Optional[int] = None) -> Tuple[float, float, str]:
    model = tiny_model(rng)
    h, w = model.encoder.cfg.image_size
    image = rng.uniform(size=(h, w, 3))
    z = 2.0
    center = np.array([0.6, -0.3, -1.9])
    target_pose = CameraPose(rotation=look_at(center), center=center, focal=1.0,
                             principal_point=(w / 2.0, h / 2.0), image_size=(w, h))
    pixels = pixel_grid(w, h)[rng.choice(h * w, size=6, replace=False)]
    target = rng.uniform(size=(6, 3))
    fn = pipeline_loss(model, image, encode_conditioning(1.0, z), target_pose, pixels, target, LossWeights())
    errors = gradcheck_tensors(fn, model.parameters(), coords_per_tensor=coords_per_tensor, floor=1e-6, rng=rng)
    names = [n for n, _ in model.named_parameters()]
    i = int(np.argmax(errors))
    return float(errors[i]), GRAD_TOL, f"{len(errors)} tensors, worst: {names[i]}"


# =========================
# Field / rendering
# =========================

def suite_vm(rng: np.random.Generator) -> Tuple[float, float, str]:
    worst = 0.0
    for r in (2, 4, 8):
        for k in (1, 2, 4):
            vm = VMRepresentation.from_arrays([rng.normal(size=(r, k)) for _ in range(3)],
                                              [rng.normal(size=(r, r, k)) for _ in range(3)])
            pts = rng.uniform(-1.0, 1.0, size=(100, 3))
            fast = query_vm(vm, pts).data
            slow = trilinear(dense_grid(vm), grid_coords(vm, pts))
            worst = max(worst, float(np.max(np.abs(fast - slow))))
    return worst, 1e-5, "R in {2,4,8}, k in {1,2,4}, 100 points each"


def suite_render(rng: np.random.Generator) -> Tuple[float, float, str]:
    worst = 0.0
    for n in (2, 48, 96):
        sigma, c, length = 1.7, np.array([0.2, 0.5, 0.9]), 1.3
        deltas = np.full((1, n), length / n)
        pixel, _, _ = composite(Tensor(np.full((1, n), sigma)), Tensor(np.tile(c, (1, n, 1))), deltas)
        expected = c * (1.0 - np.exp(-sigma * length))
        worst = max(worst, float(np.max(np.abs(pixel.data[0] - expected))))
    sig = rng.uniform(0.0, 5.0, size=(64, 32))
    deltas = rng.uniform(0.01, 0.1, size=(64, 32))
    _, weights, _ = composite(Tensor(sig), Tensor(rng.uniform(size=(64, 32, 3))), deltas)
    identity = 1.0 - np.exp(-(sig * deltas).sum(axis=-1))
    worst = max(worst, float(np.max(np.abs(weights.data.sum(axis=-1) - identity))))
    return worst, 1e-6, "homogeneous medium N in {2,48,96} + weight-sum identity"


# =========================
# Geometry / data
# =========================

def _random_pose(rng: np.random.Generator) -> CameraPose:
    rot = Rotation.random(random_state=rng).as_matrix()
    return CameraPose(rotation=rot, center=rng.normal(size=3) * 2.0, focal=1.0, principal_point=(16.0, 16.0),
                      image_size=(32, 32))


def suite_pose(rng: np.random.Generator, trials: int = 1000) -> Tuple[float, float, str]:
    worst = 0.0
    for _ in range(trials):
        a, b = _random_pose(rng), _random_pose(rng)
        z = float(rng.uniform(0.5, 3.0))
        g = Rotation.random(random_state=rng).as_matrix()
        t = rng.normal(size=3)
        moved = [CameraPose(rotation=g @ p.rotation, center=g @ p.center + t, focal=p.focal,
                            principal_point=p.principal_point, image_size=p.image_size) for p in (a, b)]
        r1 = relativize_pose(a, b, z)
        r2 = relativize_pose(*moved, z)
        worst = max(worst, float(np.max(np.abs(r1.rotation - r2.rotation))),
                    float(np.max(np.abs(r1.center - r2.center))))
    same = relativize_pose(a, a, 1.5)
    exact = np.array_equal(same.rotation, np.eye(3)) and np.array_equal(same.center, conditioned_center(1.5))
    return (worst if exact else np.inf), 1e-6, f"{trials} random rigid transforms; identity exact: {exact}"


def suite_oracle(rng: np.random.Generator) -> Tuple[float, float, str]:
    sphere = ToyScene(primitives=(Primitive("sphere", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.5, 0.5, 0.5)),))
    pose = CameraPose(rotation=np.eye(3), center=np.array([0.0, 0.0, -2.0]), focal=1.0,
                      principal_point=(16.5, 16.5), image_size=(33, 33))
    _, depth = raytrace_oracle(sphere, pose)
    worst = abs(float(depth[16, 16]) - 1.0)
    scene = generate_scene(int(rng.integers(1 << 30)))
    lo, hi = scene.bounds()
    target = (lo + hi) / 2.0
    cam = target + np.array([0.4, 0.9, -1.8])
    view = CameraPose(rotation=look_at(cam, target), center=cam, focal=0.9, principal_point=(16.0, 16.0),
                      image_size=(32, 32))
    _, depth = raytrace_oracle(scene, view)
    rays = generate_rays(view, pixel_grid(32, 32))
    d = depth.reshape(-1)
    hit = np.isfinite(d)
    if hit.any():
        pts = rays.origins[hit] + d[hit, None] * rays.directions[hit]
        worst = max(worst, float(np.max(surface_distance(scene, pts))))
    return worst, 1e-4, "sphere center depth + surface reprojection"


# =========================
# Losses / metrics
# =========================

def suite_losses(rng: np.random.Generator) -> Tuple[float, float, str]:
    a = rng.uniform(size=(24, 24, 3))
    b = rng.uniform(size=(24, 24, 3))
    worst = abs(ssim(a, a) - 1.0)
    worst = max(worst, abs(psnr(a, b) - psnr(b, a)))
    edges = np.linspace(0.0, 1.0, 9)[None]
    spread = np.zeros((1, 8))
    spread[0, [0, 7]] = 0.5
    tight = np.zeros((1, 8))
    tight[0, 3] = 1.0
    if not distortion_loss(tight, edges).item() < distortion_loss(spread, edges).item():
        worst = np.inf
    return worst, 1e-12, "ssim identity, psnr symmetry, distortion compaction"


# =========================
# Token / parameter arithmetic
# =========================

def suite_tokens(rng: np.random.Generator) -> Tuple[float, float, str]:
    cfg = load_run_config("full")
    report = token_report(cfg.encoder, cfg.decoder)
    expected = {"feature_tokens": 576, "output_tokens": 816, "matrix_head_width": 288, "vector_head_width": 96}
    mismatches = [k for k, v in expected.items() if report[k] != v]
    counts = count_parameters(cfg.encoder, cfg.decoder, cfg.renderer)
    rel = max(abs(counts["encoder"] - 85e6) / 85e6, abs(counts["decoder"] - 131e6) / 131e6)
    worst = np.inf if mismatches else rel
    detail = (f"encoder {counts['encoder']:,} decoder {counts['decoder']:,} renderer {counts['renderer']:,}"
              + (f"; token mismatches: {mismatches}" if mismatches else ""))
    return worst, 0.10, detail


SUITES: Dict[str, SuiteFn] = {
    "ops": suite_ops,
    "pipeline": suite_pipeline,
    "vm": suite_vm,
    "render": suite_render,
    "pose": suite_pose,
    "oracle": suite_oracle,
    "losses": suite_losses,
    "tokens": suite_tokens,
}


def run_suites(names: Optional[Sequence[str]] = None, seed: int = 0) -> List[SuiteResult]:
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"Unknown suite(s) {unknown}. Choose from {list(SUITES)}")
    results = []
    for name in names:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        with precision(np.float64):
            err, tol, detail = SUITES[name](rng)
        res = SuiteResult(name=name, passed=bool(err <= tol), max_error=float(err), tolerance=tol, detail=detail)
        log_info(f"{'PASS' if res.passed else 'FAIL'} {name:<9} max error {res.max_error:.3e} "
                 f"(tol {tol:.0e}) {detail}")
        results.append(res)
    return results
