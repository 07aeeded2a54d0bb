"""
Parameter containers shared by the encoder, decoder and renderer.
"""
from __future__ import annotations

import contextlib
import math
from typing import Any, Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, gelu, get_default_dtype, matmul, parameter
from .common import DimensionError

# =========================
# Shape-only construction
# =========================

_SHAPE_ONLY = False


class ShapeOnly:
    """Stand-in for a parameter when a model is built only to enumerate its shapes."""

    requires_grad = True

    def __init__(self, shape: Tuple[int, ...]):
        self.shape = tuple(shape)
        self.size = int(np.prod(self.shape)) if self.shape else 1


@contextlib.contextmanager
def shape_only() -> Iterator[None]:
    global _SHAPE_ONLY
    prev = _SHAPE_ONLY
    _SHAPE_ONLY = True
    try:
        yield
    finally:
        _SHAPE_ONLY = prev


Init = Callable[[np.random.Generator, Tuple[int, ...]], np.ndarray]


def zeros_init(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape)


def ones_init(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.ones(shape)


def normal_init(std: float) -> Init:
    return lambda rng, shape: rng.normal(0.0, std, size=shape)


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# =========================
# Module
# =========================

class Module:
    """Tree of named parameters; attribute assignment registers parameters and children."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, (Tensor, ShapeOnly)) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def param(self, rng: np.random.Generator, shape: Sequence[int], init: Init) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if _SHAPE_ONLY:
            return ShapeOnly(shape)  # type: ignore[return-value]
        return parameter(init(rng, shape), dtype=get_default_dtype())

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def check_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise DimensionError(f"missing parameter '{key}'")
            arr = state[key]
            if tuple(arr.shape) != p.shape:
                raise DimensionError(f"parameter '{key}' has shape {tuple(arr.shape)}, expected {p.shape}")

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "") -> None:
        self.check_state_dict(state, prefix)
        for name, p in self.named_parameters():
            p.data = np.array(state[prefix + name], dtype=p.dtype)

    def astype(self, dtype: Any) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError


# =========================
# Basic layers
# =========================

class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 weight_init: Init = xavier_uniform, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.param(rng, (in_features, out_features), weight_init)
        self.bias = self.param(rng, (out_features,), zeros_init) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Linear expects width {self.in_features}, got input {x.shape}")
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Parameter-free normalization over the last axis, population variance."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt()


class LayerNorm(Module):
    def __init__(self, dim: int, rng: np.random.Generator, affine: bool = True, eps: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.weight = self.param(rng, (dim,), ones_init) if affine else None
        self.bias = self.param(rng, (dim,), zeros_init) if affine else None

    def forward(self, x: Tensor) -> Tensor:
        y = layer_norm(x, self.eps)
        if self.weight is None:
            return y
        return y * self.weight + self.bias


class Mlp(Module):
    """Linear -> GELU -> Linear, the transformer feed-forward sublayer."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
