"""Reverse-mode automatic differentiation over dense float64 arrays.

Everything is 64-bit and CPU-only: the models here are desk-scale and the
finite-difference checks in :mod:`procplan.gradcheck` need the precision.
A ``Tensor`` wraps a numpy array; operations record a graph whenever any
input has ``requires_grad`` set, and ``Tensor.backward`` accumulates
gradients into the leaves.  Gradients accumulate across repeated backward
calls until explicitly zeroed (see ``ParamStore.zero_grads``).

Any operation that would produce a NaN or Inf raises ``NumericError``
immediately: non-finite values are treated as an error state, never data.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for engine failures."""


class ShapeError(TensorError):
    """Operand shapes do not conform for the requested operation."""


class NumericError(TensorError):
    """An operation produced a non-finite value."""


class GraphError(TensorError):
    """Backward was invoked on an unsuitable tensor."""


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: produced non-finite values")


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Tensors are value-semantic: the constructor copies its input, and a
    tensor with no graph attached is safe to share between threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite("tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{req})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only valid on scalar outputs of a recorded graph.  Grads add onto
        whatever is already present; callers zero between steps.
        """
        if self.data.size != 1:
            raise GraphError(f"backward: output must be scalar, got shape {self.shape}")
        if self._backward is None:
            raise GraphError("backward: tensor is detached from any recorded graph")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        # Interior grads are per-pass scratch; only leaves accumulate across
        # repeated backward calls.
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Operator sugar; all defer to the module-level ops below.
    def __add__(self, other):
        return add(self, _ensure_tensor(other))

    def __radd__(self, other):
        return add(_ensure_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _ensure_tensor(other))

    def __rmul__(self, other):
        return mul(_ensure_tensor(other), self)

    def __neg__(self):
        return mul(self, _ensure_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_ensure_tensor(other))

    def __rsub__(self, other):
        return add(_ensure_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, _ensure_tensor(1.0 / other))
        return mul(self, power(_ensure_tensor(other), -1.0))

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _ensure_tensor(other))

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(
    op: str,
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    grad_fns: tuple[Callable[[np.ndarray], np.ndarray], ...],
) -> Tensor:
    """Build an op output, checking finiteness and recording the graph.

    ``grad_fns[i]`` maps the upstream gradient to the gradient of parent i;
    it is only invoked for parents that require grad.
    """
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents

        def _backward() -> None:
            g = out.grad
            for parent, fn in zip(parents, grad_fns):
                if parent.requires_grad:
                    pg = fn(g)
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg

        out._backward = _backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _make(
        "add", data, (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _make(
        "mul", data, (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    a = _ensure_tensor(a)
    data = a.data ** exponent
    return _make(
        "power", data, (a,),
        (lambda g: g * exponent * a.data ** (exponent - 1.0),),
    )


def exp(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    _check_finite("exp", data)
    return _make("exp", data, (a,), (lambda g: g * data,))


def log(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    _check_finite("log", data)
    return _make("log", data, (a,), (lambda g: g / a.data,))


def tanh(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    data = np.tanh(a.data)
    return _make("tanh", data, (a,), (lambda g: g * (1.0 - data * data),))


def sigmoid(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    data = _sigmoid_array(a.data)
    return _make("sigmoid", data, (a,), (lambda g: g * data * (1.0 - data),))


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    data = np.maximum(a.data, 0.0)
    return _make("relu", data, (a,), (lambda g: g * (a.data > 0.0),))


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU; the backward differentiates the same approximation."""
    a = _ensure_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_K * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def grad(g: np.ndarray) -> np.ndarray:
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner)

    return _make("gelu", data, (a,), (grad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the bounds."""
    a = _ensure_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make("clip", data, (a,), (lambda g: g * mask,))


def softmax_lastdim(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=-1, keepdims=True)

    def grad(g: np.ndarray) -> np.ndarray:
        dot = (g * data).sum(axis=-1, keepdims=True)
        return data * (g - dot)

    return _make("softmax_lastdim", data, (a,), (grad,))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - op name
    a = _ensure_tensor(a)
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def grad(g: np.ndarray) -> np.ndarray:
        if keepdims or axis is None and g.ndim == a.data.ndim:
            g_kept = g
        elif axis is None:
            g_kept = g.reshape((1,) * a.data.ndim)
        else:
            g_kept = np.expand_dims(g, axis=axis)
        return np.broadcast_to(g_kept, a.shape).copy()

    return _make("sum", data, (a,), (grad,))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), _ensure_tensor(1.0 / count))


# ---------------------------------------------------------------------------
# structural primitives
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_ensure_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat: needs at least one tensor")
    ref = parts[0].shape
    ax = axis % len(ref) if ref else 0
    for t in parts[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(
                f"concat: shapes {[p.shape for p in parts]} differ off axis {axis}"
            )
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[ax] for p in parts])

    def make_grad(i: int):
        def grad(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(index)]

        return grad

    return _make("concat", data, parents=parts, grad_fns=tuple(make_grad(i) for i in range(len(parts))))


def getitem(a: Tensor, index) -> Tensor:
    a = _ensure_tensor(a)
    data = a.data[index]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)

    def grad(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        full[index] += g
        return full

    return _make("getitem", np.ascontiguousarray(data), (a,), (grad,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _ensure_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _make("reshape", data, (a,), (lambda g: g.reshape(a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def grad_a(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def grad_b(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _make("matmul", data, (a, b), (grad_a, grad_b))


def conv1d_same(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Resolution-preserving 1-D convolution along the second-to-last axis.

    ``x`` is [..., T, C_in], ``weight`` is [K, C_in, C_out] with odd K, and
    the time axis is zero-padded so the output is [..., T, C_out].  Built
    from pad/slice/matmul primitives, so the gradient comes for free.
    """
    x, weight = _ensure_tensor(x), _ensure_tensor(weight)
    if weight.ndim != 3:
        raise ShapeError(f"conv1d_same: weight must be [K, C_in, C_out], got {weight.shape}")
    k, c_in, _ = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d_same: kernel size must be odd, got {k}")
    if x.ndim < 2 or x.shape[-1] != c_in:
        raise ShapeError(
            f"conv1d_same: input {x.shape} does not match weight C_in={c_in}"
        )
    half = k // 2
    t_len = x.shape[-2]
    c_out = weight.shape[-1]
    pad_shape = x.shape[:-2] + (half, c_in)
    pad = Tensor(np.zeros(pad_shape))
    padded = concat([pad, x, pad], axis=-2)
    lead = x.shape[:-1]
    rows = 1
    for extent in lead:
        rows *= extent
    out: Tensor | None = None
    for tap in range(k):
        window = getitem(padded, (..., slice(tap, tap + t_len), slice(None)))
        # One flat gemm per tap instead of a gemm per leading index.
        flat = matmul(reshape(window, (rows, c_in)), getitem(weight, tap))
        term = reshape(flat, lead + (c_out,))
        out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, _ensure_tensor(bias))
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine map."""
    x = _ensure_tensor(x)
    gain, bias = _ensure_tensor(gain), _ensure_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} must match last dim of {x.shape}"
        )
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, _ensure_tensor(eps)), -0.5)
    return add(mul(mul(centered, inv), gain), bias)
