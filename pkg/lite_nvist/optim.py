"""
Adam with per-group learning rates and the half-cycle cosine schedule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .common import ConfigError, DimensionError


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    betas: Tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8


def lr_schedule(step: int, total: int, lr0: float) -> float:
    """Half-cycle cosine decay from lr0 at step 0 to 0 at step == total."""
    if total <= 0:
        raise ConfigError(f"total steps must be positive, got {total}")
    step = min(max(step, 0), total)
    if step == total:
        return 0.0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


def adam_step(names: Sequence[str], params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: OptimizerState, lrs: Sequence[float]) -> None:
    """
    One bias-corrected Adam update in place. `state.step` is advanced once for the
    whole call; moments are created lazily per parameter name.
    """
    if not len(names) == len(params) == len(grads) == len(lrs):
        raise DimensionError("adam_step: names, params, grads and lrs must have equal length")
    state.step += 1
    b1, b2 = state.betas
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p, g, lr in zip(names, params, grads, lrs):
        if g.shape != p.shape:
            raise DimensionError(f"gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


class Adam:
    """Parameter groups share moments bookkeeping but carry their own base learning rate."""

    def __init__(self, groups: Mapping[str, Tuple[float, List[Tuple[str, Tensor]]]],
                 betas: Tuple[float, float] = (0.9, 0.95), eps: float = 1e-8):
        for gname, (lr, _) in groups.items():
            if not lr > 0:
                raise ConfigError(f"learning rate for group '{gname}' must be positive, got {lr}")
        self.groups = dict(groups)
        self.state = OptimizerState(betas=tuple(betas), eps=eps)

    def base_lr(self, group: str) -> float:
        return self.groups[group][0]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [item for _, items in self.groups.values() for item in items]

    def step(self, lr_scale: float = 1.0) -> None:
        names, params, grads, lrs = [], [], [], []
        for lr, items in self.groups.values():
            for name, p in items:
                if not p.requires_grad:
                    continue
                names.append(name)
                params.append(p)
                grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
                lrs.append(lr * lr_scale)
        adam_step(names, params, grads, self.state, lrs)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, arr in self.state.m.items():
            out[f"adam_m/{name}"] = arr
        for name, arr in self.state.v.items():
            out[f"adam_v/{name}"] = arr
        out["meta/opt_step"] = np.asarray(self.state.step, dtype=np.int64)
        return out

    def check_state_arrays(self, arrays: Mapping[str, np.ndarray]
                           ) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        """Validate checkpointed moments against the parameters; returns (m, v) without assigning."""
        known = dict(self.named_parameters())
        m, v = {}, {}
        for key, arr in arrays.items():
            for prefix, dest in (("adam_m/", m), ("adam_v/", v)):
                if key.startswith(prefix):
                    name = key[len(prefix):]
                    if name not in known:
                        raise DimensionError(f"optimizer state for unknown parameter '{name}'")
                    if tuple(arr.shape) != known[name].shape:
                        raise DimensionError(f"optimizer moment '{key}' has shape {arr.shape}, "
                                             f"expected {known[name].shape}")
                    dest[name] = np.array(arr)
        return m, v

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        m, v = self.check_state_arrays(arrays)
        self.state.m = m
        self.state.v = v
        self.state.step = int(arrays.get("meta/opt_step", np.asarray(0)))
