"""Dense float64 tensors with define-by-run reverse-mode differentiation."""

from __future__ import annotations

import logging
import math
import os
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger("derl_core.tensor")

LAYER_NORM_EPS = 1e-10
COSINE_EPS = 1e-12

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class TensorError(Exception):
    """Base error for tensor kernel failures."""


class ConformanceError(TensorError):
    """Operand shapes do not conform for the requested kernel."""


class DomainError(TensorError):
    """A kernel argument lies outside its mathematical domain."""


class GraphError(TensorError):
    """Misuse of the computation graph (non-scalar loss, repeated backward)."""


class NonFiniteError(TensorError):
    """A forward op produced NaN or Inf while debug checks were enabled."""


# ----------------------------- Per-thread switches -----------------------------

_DEBUG_DEFAULT = os.getenv("DERL_DEBUG", "").strip().lower() in {"1", "true", "yes", "on"}


class _Switches(threading.local):
    """Debug and grad-recording flags; each thread starts from the defaults."""

    def __init__(self) -> None:
        self.debug = _DEBUG_DEFAULT
        self.grad_enabled = True


_switches = _Switches()


def set_debug(enabled: bool) -> None:
    """Toggle finiteness checks after every forward op in the calling thread."""
    _switches.debug = bool(enabled)


def debug_enabled() -> bool:
    return _switches.debug


@contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    previous = _switches.debug
    set_debug(enabled)
    try:
        yield
    finally:
        set_debug(previous)


def grad_enabled() -> bool:
    return _switches.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward ops in the calling thread without recording graph nodes."""
    previous = _switches.grad_enabled
    _switches.grad_enabled = False
    try:
        yield
    finally:
        _switches.grad_enabled = previous


# ----------------------------- Tensor -----------------------------

class Tensor:
    """A row-major float64 array with an optional gradient buffer.

    Non-leaf tensors keep references to their parents and a closure that maps
    the upstream gradient to one gradient per parent.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        *,
        name: str | None = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ConformanceError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        grad = "" if not self.requires_grad else ", requires_grad=True"
        return f"Tensor(shape={self.shape}, op={self.op}{grad})"

    # -- differentiation --------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        graph = ComputeGraph.from_root(self)
        graph.backward()

    # -- operators --------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: str | None = None) -> Tensor:
    """Create a leaf tensor that receives gradients.

    The grad buffer starts at zero, so parameters a loss never reaches read as zero after backward.
    """
    t = Tensor(data, requires_grad=True, name=name)
    t.grad = np.zeros_like(t.data)
    return t


def _record(
    data: np.ndarray,
    parents: Sequence[Tensor],
    op: str,
    backward: BackwardFn,
) -> Tensor:
    if _switches.debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(
            f"op '{op}' produced non-finite values "
            f"(parent shapes {[p.shape for p in parents]})"
        )
    out = Tensor(data)
    out.op = op
    if _switches.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConformanceError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ----------------------------- Graph -----------------------------

class ComputeGraph:
    """Topologically ordered view of the nodes reachable from a root."""

    def __init__(self, root: Tensor, nodes: List[Tensor]) -> None:
        self.root = root
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        order: List[Tensor] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(root, order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self) -> None:
        root = self.root
        if root._consumed:
            raise GraphError("backward already ran on this graph; rebuild it with a new forward pass")
        if not root.requires_grad:
            root._consumed = True
            return

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._backward(grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pgrad
                else:
                    grads[key] = pgrad
        root._consumed = True


# ----------------------------- Elementwise kernels -----------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(a.data * b.data, (a, b), "mul", backward)


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward(g: np.ndarray):
        return (g * factor,)

    return _record(a.data * factor, (a,), "scale", backward)


def absolute(a: ArrayLike) -> Tensor:
    """|a| with subgradient 0 at 0."""
    a = as_tensor(a)

    def backward(g: np.ndarray):
        return (g * np.sign(a.data),)

    return _record(np.abs(a.data), (a,), "abs", backward)


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g: np.ndarray):
        return (g * out,)

    return _record(out, (a,), "exp", backward)


def clip(a: ArrayLike, low: float, high: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)

    def backward(g: np.ndarray):
        return (g * inside,)

    return _record(np.clip(a.data, low, high), (a,), "clip", backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: ArrayLike) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g: np.ndarray):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (g * local,)

    return _record(out, (a,), "gelu", backward)


# ----------------------------- Shape kernels -----------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ConformanceError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ConformanceError(f"matmul: batch shapes {a.shape} and {b.shape} do not conform") from None

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a: ArrayLike, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ConformanceError(f"transpose: need at least 2 axes, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ConformanceError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return _record(np.transpose(a.data, axes), (a,), "transpose", backward)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ConformanceError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(g: np.ndarray):
        return (g.reshape(a.shape),)

    return _record(out, (a,), "reshape", backward)


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape)).copy()
    except ValueError:
        raise ConformanceError(f"broadcast_to: cannot expand {a.shape} to {tuple(shape)}") from None

    def backward(g: np.ndarray):
        return (_unbroadcast(g, a.shape),)

    return _record(out, (a,), "broadcast", backward)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ConformanceError("concat: no operands")
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax):
            raise ConformanceError(
                f"concat: shapes {parts[0].shape} and {p.shape} do not conform on axis {axis}"
            )
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(np.concatenate([p.data for p in parts], axis=ax), parts, "concat", backward)


def slice_axis(a: ArrayLike, start: int, stop: int, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    extent = a.shape[ax]
    if not (0 <= start < stop <= extent):
        raise ConformanceError(f"slice: [{start}:{stop}] out of range for axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(a.data[index].copy(), (a,), "slice", backward)


# ----------------------------- Reductions -----------------------------

def sum_axis(a: ArrayLike, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), "sum", backward)


def mean(a: ArrayLike, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return _rename(scale(sum_axis(a, axis=axis, keepdims=keepdims), 1.0 / count), "mean")


def _rename(t: Tensor, op: str) -> Tensor:
    t.op = op
    return t


# ----------------------------- Normalization -----------------------------

def _check_temperature(tau: ArrayLike) -> Tensor:
    tau = as_tensor(tau)
    if tau.size != 1:
        raise ConformanceError(f"softmax: temperature must be scalar, got shape {tau.shape}")
    if not tau.item() > 0.0:
        raise DomainError(f"softmax: temperature must be > 0, got {tau.item()}")
    return tau


def softmax(logits: ArrayLike, tau: ArrayLike = 1.0, axis: int = -1) -> Tensor:
    """softmax(logits / tau) along ``axis``; tau may be a learnable scalar."""
    x = as_tensor(logits)
    tau = _check_temperature(tau)
    t = tau.item()
    z = x.data / t
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        gz = y * (g - (g * y).sum(axis=axis, keepdims=True))
        gx = gz / t
        gtau = np.sum(gz * (-x.data / (t * t))).reshape(tau.shape)
        return gx, gtau

    return _record(y, (x, tau), "softmax", backward)


def layer_norm(
    a: ArrayLike,
    gamma: ArrayLike | None = None,
    beta: ArrayLike | None = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then apply gamma/beta."""
    x = as_tensor(a)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g: np.ndarray):
        dxhat = g
        mean_d = dxhat.mean(axis=-1, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (inv * (dxhat - mean_d - xhat * mean_dx),)

    out = _record(xhat, (x,), "layer_norm", backward)
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


# ----------------------------- Composite kernels -----------------------------

def attention(
    q: ArrayLike,
    k: ArrayLike,
    v: ArrayLike,
    identity_weights: bool = False,
) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    With ``identity_weights`` every position attends only to itself (debug mode).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ConformanceError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    if identity_weights:
        return _rename(mul(v, 1.0), "attention")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(scores, 1.0, axis=-1)
    return _rename(matmul(weights, v), "attention")


def l1_distance(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean absolute element difference."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ConformanceError(f"l1_distance: shapes {a.shape} and {b.shape} differ")
    return _rename(mean(absolute(sub(a, b))), "l1")


def sq_l2_distance(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean squared element difference."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ConformanceError(f"sq_l2_distance: shapes {a.shape} and {b.shape} differ")
    d = sub(a, b)
    return _rename(mean(mul(d, d)), "sq_l2")


def cosine_similarity(a: ArrayLike, b: ArrayLike, eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity along the last axis; each norm is floored at ``eps``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ConformanceError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    dot = (a.data * b.data).sum(axis=-1)
    raw_na = np.sqrt((a.data**2).sum(axis=-1))
    raw_nb = np.sqrt((b.data**2).sum(axis=-1))
    na = np.maximum(raw_na, eps)
    nb = np.maximum(raw_nb, eps)
    cos = dot / (na * nb)

    def backward(g: np.ndarray):
        g_ = g[..., None]
        c = cos[..., None]
        na_ = na[..., None]
        nb_ = nb[..., None]
        live_a = (raw_na > eps)[..., None]
        live_b = (raw_nb > eps)[..., None]
        ga = b.data / (na_ * nb_) - live_a * c * a.data / (na_ * na_)
        gb = a.data / (na_ * nb_) - live_b * c * b.data / (nb_ * nb_)
        return g_ * ga, g_ * gb

    return _record(cos, (a, b), "cosine", backward)
