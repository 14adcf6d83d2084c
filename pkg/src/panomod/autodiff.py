"""Dense tensors with reverse-mode differentiation, backed by numpy.

Every op builds a node holding its forward value plus a closure that maps the
upstream gradient to one gradient per parent. :func:`backward` walks the graph
once in reverse topological order. Nothing here is parallel, so results are
reproducible run to run.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError

DEFAULT_EPS = 1e-6

_BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A node in the differentiation graph (value + accumulated gradient).

    Leaves created by the user carry ``requires_grad``; interior nodes inherit
    it from their parents. ``grad`` stays ``None`` until a backward pass
    reaches the node, which is the lazy-zero convention.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    __array_priority__ = 100  # so ndarray <op> Tensor dispatches to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: _BackwardFn | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _const(x, like: Tensor) -> Tensor:
    """Wrap a python scalar / array as a constant matching ``like``'s dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: _BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary ops


def elementwise(kind: str, a, b) -> Tensor:
    """Binary elementwise op; ``kind`` is one of add, sub, mul, div."""
    if kind not in _BINARY:
        raise DomainError(f"unknown elementwise op {kind!r}")
    return _BINARY[kind](a, b)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = _const(b, a)
    elif isinstance(b, Tensor):
        a = _const(a, b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _node(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _node(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), bw)


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(x: Tensor) -> Tensor:
    return _node(-x.data, (x,), lambda g: (-g,))


def power(x: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    return _node(x.data**p, (x,), lambda g: (g * p * x.data ** (p - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g * 0.5 / out,))


def absolute(x: Tensor) -> Tensor:
    # sign(0) = 0: the L1 subgradient at the kink is taken as zero
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _node(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    return _node(np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_K = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_K * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * v * v)
        return (g * d,)

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise DomainError(f"mean over empty extent of shape {x.shape}")
    return sum_(x, axes, keepdims) * (1.0 / n)


def reduce_moments(x, axes: str = "spatial", eps: float = DEFAULT_EPS) -> tuple[Tensor, Tensor]:
    """Mean and ``sqrt(biased variance + eps)`` of a (B, C, H, W) grid.

    ``axes="spatial"`` reduces over (H, W) per (batch, channel); ``"full"``
    reduces over (C, H, W) per batch. Results keep their reduced dims so they
    broadcast back onto ``x``.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"expected a (B, C, H, W) grid, got shape {x.shape}")
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if axes == "spatial":
        red = (2, 3)
    elif axes == "full":
        red = (1, 2, 3)
    else:
        raise DomainError(f"axes must be 'spatial' or 'full', got {axes!r}")
    if any(x.shape[a] == 0 for a in red):
        raise DomainError(f"empty spatial extent in shape {x.shape}")
    mu = mean(x, red, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, red, keepdims=True)
    return mu, sqrt(var + eps)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing only; fancy indices would double count."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return _node(x.data[index], (x,), bw)


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (repeats allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, (slice(None),) * axis + (indices,), g)
        return (out,)

    return _node(np.take(x.data, indices, axis=axis), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def split(x: Tensor, n: int, axis: int = 1) -> list[Tensor]:
    """Split into ``n`` equal chunks along ``axis``."""
    size = x.shape[axis]
    if size % n:
        raise DimensionError(f"axis {axis} of shape {x.shape} not divisible into {n} chunks")
    step = size // n
    out = []
    for k in range(n):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(k * step, (k + 1) * step)
        out.append(getitem(x, tuple(idx)))
    return out


def pad_zero(x: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows ``np.pad``."""
    pad_width = tuple(tuple(p) for p in pad_width)
    region = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return _node(np.pad(x.data, pad_width), (x,), lambda g: (g[region],))


def pad_erp(x: Tensor, p: int) -> Tensor:
    """Pad a (B, C, H, W) grid by ``p``: circular in longitude, zeros in latitude."""
    if p == 0:
        return x
    w = x.shape[-1]
    wrapped = take(x, np.arange(-p, w + p) % w, axis=-1)
    return pad_zero(wrapped, ((0, 0), (0, 0), (p, p), (0, 0)))


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    return _node(np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, -shift, axis=axis),))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(g):
        return (
            unbroadcast(g @ _swap_last(b.data), a.shape),
            unbroadcast(_swap_last(a.data) @ g, b.shape),
        )

    return _node(a.data @ b.data, (a, b), bw)


def sparse_matmul(m: scipy.sparse.csr_matrix, x: Tensor) -> Tensor:
    """``m @ x`` for a constant sparse ``m`` and a dense 2-D ``x``.

    The backward pass is the transpose product ``m.T @ g``, so gather and
    scatter always use the same weights.
    """
    if x.ndim != 2 or x.shape[0] != m.shape[1]:
        raise DimensionError(f"sparse operand {m.shape} incompatible with {x.shape}")
    mt = m.T.tocsr()
    return _node(
        np.asarray(m @ x.data, dtype=x.dtype),
        (x,),
        lambda g: (np.asarray(mt @ g, dtype=x.dtype),),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw)


def layernorm_noaffine(x: Tensor, eps: float = DEFAULT_EPS, axis: int = 1) -> Tensor:
    """Normalize to zero mean, unit (biased) variance along ``axis``.

    No learnable scale or shift. ``axis=1`` is the channel axis of a
    (B, C, H, W) grid; token matrices (N, C) use ``axis=-1``.
    """
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise DimensionError(f"layernorm over zero channels, shape {x.shape}")
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _node(xhat, (x,), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 'valid' cross-correlation. Pad beforehand with pad_* ops.

    x: (N, Ci, H, W), w: (Co, Ci, kh, kw), b: (Co,).
    """
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise DimensionError(f"conv input channels {ci} != weight channels {ci_w} ({x.shape} vs {w.shape})")
    if b is not None and b.shape != (co,):
        raise DimensionError(f"conv bias shape {b.shape} != ({co},)")
    ho, wo = h - kh + 1, wd - kw + 1
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))  # n, ci, ho, wo, kh, kw
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, w.data, axes=([1], [0]))  # n, ho, wo, ci, kh, kw
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + ho, j : j + wo] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel stride-1 'valid' correlation. w: (C, kh, kw)."""
    n, c, h, wd = x.shape
    if w.ndim != 3 or w.shape[0] != c:
        raise DimensionError(f"depthwise weight {w.shape} does not match {c} channels")
    _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            out += x.data[:, :, i : i + ho, j : j + wo] * w.data[None, :, i, j, None, None]
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + ho, j : j + wo] += g * w.data[None, :, i, j, None, None]
                gw[:, i, j] = (g * x.data[:, :, i : i + ho, j : j + wo]).sum(axis=(0, 2, 3))
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Returns the leaf gradient table. Interior nodes get their gradient
    overwritten; leaves accumulate, so zero them between steps.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    table: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            table[node] = node.grad
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    return table


# ---------------------------------------------------------------------------
# finite-difference oracle


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. array ``x`` (mutated in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor | np.ndarray],
    h: float = 1e-5,
) -> list[float]:
    """Compare analytic gradients of ``fn(*inputs)`` with central differences.

    The analytic pass runs at the inputs' own precision; the difference
    oracle always runs on float64 copies so a float32 graph is judged against
    a trustworthy reference. Returns one relative error per input.
    Plain arrays are wrapped as float64 tensors.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(np.array(t, dtype=np.float64)) for t in inputs]
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn(*inputs)
    backward(out)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]

    ref = [Tensor(t.data.astype(np.float64)) for t in inputs]

    def f() -> float:
        return float(fn(*ref).data.reshape(-1)[0])

    errors = []
    for t, a in zip(ref, analytic):
        errors.append(relative_error(a, numerical_gradient(f, t.data, h)))
    return errors


def parameters_require_grad(params: Iterable[Tensor], flag: bool = True) -> None:
    for p in params:
        p.requires_grad = flag


# ---------------------------------------------------------------------------
# feature grids and random streams


def feature_grid(data, dtype=np.float64, checked: bool = True) -> np.ndarray:
    """Validate and freeze a (B, C, H, W) array.

    In checked mode NaN/Inf are rejected. The returned array is read-only so
    it can be shared between threads.
    """
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim != 4:
        raise DimensionError(f"feature grid must be (batch, channels, height, width), got shape {arr.shape}")
    if checked and not np.all(np.isfinite(arr)):
        raise DomainError("feature grid contains non-finite values")
    arr.setflags(write=False)
    return arr


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator; identical (seed, keys) give identical draws."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))
