"""
Dense tensors over numpy with reverse-mode differentiation.

Every differentiable operation is a `Function` subclass with a numpy forward and a
numpy backward. Calling `Tensor.backward()` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every tensor that
requires them.
"""
from __future__ import annotations

import contextlib
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .common import ContractError, DimensionError

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

# =========================
# Global numeric state
# =========================

_DEFAULT_DTYPE: type = np.float32
_GRAD_ENABLED = True


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype: Any) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"Only float32/float64 are supported, got {np.dtype(dtype).name}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Temporarily switch the dtype new tensors are created with."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


# =========================
# Function base
# =========================

class Function:
    """One recorded primitive: inputs, keyword arguments and the produced tensor."""

    def __init__(self, *inputs: "Tensor", **kwargs: Any):
        self.inputs = inputs
        self.kwargs = kwargs
        self.output: Optional["Tensor"] = None

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*tensors, **kwargs)
        out_data = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in tensors)
        out = Tensor(out_data, requires_grad=requires_grad, dtype=out_data.dtype)
        if requires_grad:
            out.creator = fn
            fn.output = out
        return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# =========================
# Tensor
# =========================

class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Any = None):
        self.data = np.ascontiguousarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional[Function] = None

    # ----- introspection -----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ----- arithmetic -----

    def __add__(self, other: Any) -> "Tensor":
        return Add.apply(self, as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        return Sub.apply(self, as_tensor(other, self.dtype))

    def __rsub__(self, other: Any) -> "Tensor":
        return Sub.apply(as_tensor(other, self.dtype), self)

    def __mul__(self, other: Any) -> "Tensor":
        return Mul.apply(self, as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        return Div.apply(self, as_tensor(other, self.dtype))

    def __rtruediv__(self, other: Any) -> "Tensor":
        return Div.apply(as_tensor(other, self.dtype), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return PowScalar.apply(self, exponent=float(exponent))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, idx: Any) -> "Tensor":
        return Slice.apply(self, idx=idx)

    # ----- method forms -----

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=_norm_axis(axis), keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=_norm_axis(axis), keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def relu(self) -> "Tensor":
        return ReLU.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def sin(self) -> "Tensor":
        return Sin.apply(self)

    def cos(self) -> "Tensor":
        return Cos.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return Softmax.apply(self, axis=axis)

    # ----- differentiation -----

    def backward(self) -> None:
        backward(self)


def _norm_axis(axis: Any) -> Any:
    if isinstance(axis, list):
        return tuple(axis)
    return axis


def as_tensor(x: Any, dtype: Any = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


def parameter(data: ArrayLike, dtype: Any = None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


# =========================
# Elementwise primitives
# =========================

class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        ga = grad / b.data
        gb = -grad * a.data / (b.data * b.data)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class PowScalar(Function):
    def forward(self, a, exponent):
        return a ** exponent

    def backward(self, grad):
        (a,) = self.inputs
        p = self.kwargs["exponent"]
        return (grad * p * a.data ** (p - 1),)


class ReLU(Function):
    # subgradient at exactly 0 is 0
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        return np.log(a)

    def backward(self, grad):
        return (grad / self.inputs[0].data,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Sin(Function):
    def forward(self, a):
        return np.sin(a)

    def backward(self, grad):
        return (grad * np.cos(self.inputs[0].data),)


class Cos(Function):
    def forward(self, a):
        return np.cos(a)

    def backward(self, grad):
        return (-grad * np.sin(self.inputs[0].data),)


class Sigmoid(Function):
    def forward(self, a):
        # exp(-|a|) never overflows
        z = np.exp(-np.abs(a))
        self.out = np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


# =========================
# Linear algebra and reductions
# =========================

class MatMul(Function):
    def forward(self, a, b):
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs
        ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        (a,) = self.inputs
        axis, keepdims = self.kwargs["axis"], self.kwargs["keepdims"]
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)


class Mean(Function):
    def forward(self, a, axis, keepdims):
        out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
        self.count = a.size // max(out.size, 1)
        return out

    def backward(self, grad):
        (a,) = self.inputs
        axis, keepdims = self.kwargs["axis"], self.kwargs["keepdims"]
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad / self.count, a.shape).copy(),)


class Softmax(Function):
    def forward(self, a, axis):
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        axis = self.kwargs["axis"]
        y = self.out
        return (y * (grad - (grad * y).sum(axis=axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


# =========================
# Shape primitives
# =========================

class Reshape(Function):
    def forward(self, a, shape):
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {a.shape} to {shape}") from e

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    def forward(self, a, axes):
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, grad):
        axes = self.kwargs["axes"]
        if axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(axes)),)


class Concat(Function):
    def forward(self, *arrays, axis):
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        axis = self.kwargs["axis"]
        sizes = [t.shape[axis] for t in self.inputs]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(grad, splits, axis=axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat shape mismatch along axis {axis}: {ref} vs {t.shape}")
    return Concat.apply(*tensors, axis=axis)


class Slice(Function):
    def forward(self, a, idx):
        return np.ascontiguousarray(a[idx])

    def backward(self, grad):
        (a,) = self.inputs
        out = np.zeros(a.shape, dtype=grad.dtype)
        np.add.at(out, self.kwargs["idx"], grad)
        return (out,)


class Gather(Function):
    """Rows of `a` (along axis 0) picked by an integer index array of any shape."""

    def forward(self, a, index):
        return a[index]

    def backward(self, grad):
        (a,) = self.inputs
        out = np.zeros(a.shape, dtype=grad.dtype)
        np.add.at(out, self.kwargs["index"], grad)
        return (out,)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ContractError(f"gather index out of range for leading dimension {a.shape[0]}")
    return Gather.apply(a, index=index)


# =========================
# Composite helpers
# =========================

def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ax = axis if axis >= 0 else tensors[0].ndim + 1 + axis
    expanded = [t.reshape(t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def silu(x: Tensor) -> Tensor:
    return x * x.sigmoid()


def gelu(x: Tensor) -> Tensor:
    # sigmoid approximation of GELU
    return x * (x * 1.702).sigmoid()


# =========================
# Graph traversal
# =========================

class ComputationRecord:
    """Executed primitives in topological order, ending at `root`."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Function] = _topological_order(root)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> np.ndarray:
        """Re-run every forward in order from the current leaf data; returns the root value."""
        for fn in self.nodes:
            fn.output.data = fn.forward(*(t.data for t in fn.inputs), **fn.kwargs)
        return self.root.data


def _topological_order(root: Tensor) -> List[Function]:
    order: List[Function] = []
    seen = set()
    if root.creator is None:
        return order
    stack_: List[Tuple[Function, bool]] = [(root.creator, False)]
    while stack_:
        fn, expanded = stack_.pop()
        if expanded:
            order.append(fn)
            continue
        if id(fn) in seen:
            continue
        seen.add(id(fn))
        stack_.append((fn, True))
        for t in fn.inputs:
            if t.creator is not None and id(t.creator) not in seen:
                stack_.append((t.creator, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    record = _topological_order(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for fn in reversed(record):
        out = fn.output
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out.requires_grad and out is not loss:
            out.grad = g if out.grad is None else out.grad + g
        for t, gi in zip(fn.inputs, fn.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = gi if key not in grads else grads[key] + gi
    # whatever remains belongs to leaves
    for fn in record:
        for t in fn.inputs:
            g = grads.pop(id(t), None)
            if g is not None and t.creator is None:
                t.grad = g.astype(t.dtype) if t.grad is None else t.grad + g
    loss.grad = np.ones(loss.shape, dtype=loss.dtype)


# =========================
# Finite-difference verification
# =========================

def gradcheck(f: Callable[[Tensor], Tensor], x: Union[Tensor, ArrayLike],
              epsilon: float = 1e-5, floor: float = 1e-8) -> float:
    """
    Compare the analytic gradient of scalar f at x with central differences.
    Returns max |analytic - numeric| / max(|analytic|, |numeric|, floor). Runs in float64.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with precision(np.float64):
        xt = Tensor(base.copy(), requires_grad=True)
        out = f(xt)
        if out.size != 1:
            raise ContractError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
        out.backward()
        analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
        numeric = np.zeros_like(base)
        flat = xt.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = f(xt).item()
                flat[i] = orig - epsilon
                fm = f(xt).item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (fp - fm) / (2 * epsilon)
    return relative_error(analytic, numeric, floor)


def gradcheck_tensors(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], epsilon: float = 1e-5,
                      floor: float = 1e-8, coords_per_tensor: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> List[float]:
    """
    Gradcheck a closure over existing tensors (e.g. model parameters, already float64).
    When `coords_per_tensor` is given only that many random coordinates of each tensor
    are perturbed. Returns one max relative error per tensor.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise ContractError("gradcheck_tensors expects float64 tensors")
        t.zero_grad()
    loss = loss_fn()
    if loss.size != 1:
        raise ContractError(f"gradcheck needs a scalar-valued function, got shape {loss.shape}")
    loss.backward()
    rng = rng or np.random.default_rng(0)
    errors = []
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if coords_per_tensor is None or coords_per_tensor >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        a_sel = analytic.reshape(-1)[coords]
        n_sel = np.zeros_like(a_sel)
        with no_grad():
            for j, i in enumerate(coords):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = loss_fn().item()
                flat[i] = orig - epsilon
                fm = loss_fn().item()
                flat[i] = orig
                n_sel[j] = (fp - fm) / (2 * epsilon)
        errors.append(relative_error(a_sel, n_sel, floor))
    return errors


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
