"""Dense-tensor engine with reverse-mode automatic differentiation.

The primitive set is deliberately small: exactly the operations needed to
express and train the dual-head patch-transformer classifier, each with a
hand-written adjoint. The test suite checks every adjoint against central
finite differences in 64-bit mode.

Gradient policy: calling :func:`backward` twice on the same loss tensor is
an error. Distinct losses may be backpropagated before an optimizer step
(their contributions accumulate into ``Tensor.grad``); the optimizer clears
grads after applying an update.

Every operation validates that its output is finite; NaN or Inf anywhere is
an error state, not a value.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense n-d array of real scalars with optional gradient tracking.

    ``data`` is a numpy float32 or float64 array (row-major). When the
    tensor participates in a recorded computation, ``parents`` and ``_vjp``
    link it into the graph that :func:`backward` replays in reverse
    topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjp",
                 "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, mul(other, -1.0))


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...],
            vjp: Callable | None) -> Tensor:
    """Wrap an op output, guarding finiteness and recording the node."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._backward_done = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out.parents = ()
        out._vjp = None
    return out


def _accumulate(parent: Tensor, g: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"backward through {op} produced non-finite gradients")
    if parent.grad is None:
        parent.grad = g.astype(parent.data.dtype, copy=True)
    else:
        parent.grad += g


def trace(root: Tensor) -> list[Tensor]:
    """Topological order of the tracked subgraph below ``root``.

    Replaying adjoints over ``reversed(trace(loss))`` visits every tracked
    tensor exactly once.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor the scalar loss depends on.

    Raises if the loss is not a tracked scalar, or if backward was already
    called on this loss (re-running the same graph is rejected rather than
    silently double-counting).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not tracked: nothing upstream requires gradients")
    if loss._backward_done:
        raise RuntimeError("backward already called on this loss; grads are "
                           "reset by the optimizer step, not by re-running")
    loss._backward_done = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(trace(loss)):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            _accumulate(parent, g, node.op)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (trailing-aligned broadcast reversal)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul requires 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, "matmul", (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; the only broadcast allowed is a (1, n) bias row."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif a.ndim == 2 and b.shape == (1, a.shape[1]):
        def vjp(g):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _result(a.data + b.data, "add", (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a python scalar."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)

        def vjp(g):
            return (g * s,)

        return _result(a.data * s, "mul_scalar", (a,), vjp)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g * bd, g * ad

    return _result(ad * bd, "mul", (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), "relu", (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x * pdf),)

    return _result(x * cdf, "gelu", (a,), vjp)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _result(out, "log", (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    a = _as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (g * inside,)

    return _result(np.clip(a.data, lo, hi), "clip", (a,), vjp)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Softmax along ``axis``, subtracting the axis max before exponentiation."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _result(s, "softmax", (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` are 1-d, either length D (per-channel) or length 1
    (scalar affine, shared across the normalized axis).
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ShapeError(f"layer_norm needs a nonempty last axis, got {x.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.shape[-1]
    for p in (gain, bias):
        if p.ndim != 1 or p.shape[0] not in (1, d):
            raise ShapeError(f"layer_norm affine shape {p.shape} does not fit last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data
    gd = gain.data

    def vjp(g):
        dxhat = g * gd
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = term * inv
        dgain = _reduce_to(g * xhat, gain.shape)
        dbias = _reduce_to(g, bias.shape)
        return dx, dgain, dbias

    return _result(out, "layer_norm", (x, gain, bias), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), "reshape", (a,), vjp)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose requires a 2-d tensor, got {a.shape}")

    def vjp(g):
        return (g.T,)

    return _result(a.data.T.copy(), "transpose", (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _as_tensor(a)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"narrow axis {axis} invalid for shape {a.shape}")
    if start < 0 or length <= 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range on axis "
                         f"{axis} of shape {a.shape}")
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(a.ndim))
    full_shape = a.shape

    def vjp(g):
        out = np.zeros(full_shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return _result(a.data[idx].copy(), "narrow", (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = lambda lo, hi: tuple(
            slice(None) if i != axis else slice(lo, hi) for i in range(g.ndim))
        return tuple(g[slicer(offsets[i], offsets[i + 1])] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=axis),
                   "concat", tuple(parts), vjp)


def tsum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(dtype),)

    return _result(np.asarray(a.data.sum()), "sum", (a,), vjp)


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape, dtype, n = a.shape, a.data.dtype, a.size

    def vjp(g):
        return (np.broadcast_to(g / n, shape).astype(dtype),)

    return _result(np.asarray(a.data.mean()), "mean", (a,), vjp)
