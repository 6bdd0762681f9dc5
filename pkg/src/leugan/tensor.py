"""Dense-tensor compute core with reverse-mode automatic differentiation.

Tensors wrap a contiguous numpy array (float64 by default, float32 selectable
per tensor) and optionally participate in gradient tracking. Every
differentiable operation builds the output tensor together with a backward
closure; ``Tensor.backward()`` traces the graph into a ``Tape`` and replays it
in reverse topological order, accumulating ``.grad`` buffers.

Layout convention for 4-D data is (batch, channel, height, width).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ConfigError, ShapeError

_DEFAULT_DTYPE = np.float64

_state = threading.local()


def set_default_dtype(dtype) -> None:
    """Set the dtype used by tensors created without an explicit dtype."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported tensor dtype {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables gradient recording on this thread."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._tape: Tape | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _non_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self, requires_grad: bool = False) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=requires_grad, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient accumulation ----------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` for every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ShapeError(f"backward seed must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward seed does not require grad")
        if self._tape is not None and self._tape.replayed:
            raise RuntimeError("tape already replayed for this seed; rebuild the graph before "
                               "calling backward again")
        tape = Tape.trace(self)
        self._tape = tape
        self._accumulate(np.ones_like(self.data))
        tape.replay()

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _non_scalar(t):
    raise ShapeError(f"expected scalar tensor, got shape {t.shape}")


class Tape:
    """Ordered record of the differentiable ops reachable from a seed tensor.

    ``trace`` lists op outputs in forward topological order, so iterating the
    list in reverse visits each recorded op exactly once with its output
    gradient fully accumulated. A tape replays once; a second replay of the
    same tape raises instead of silently double-accumulating.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes
        self.replayed = False

    @classmethod
    def trace(cls, seed: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(seed, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or node._backward is None:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        return cls(order)

    def replay(self) -> None:
        if self.replayed:
            raise RuntimeError("tape already replayed")
        self.replayed = True
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)


# -- op construction machinery ------------------------------------------------


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def _coerce_pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.data.dtype.type)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.data.dtype.type)
    return a, b


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable | None) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out._tape = None
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def backward(g):
        a._accumulate(g * p * np.power(a.data, p - 1.0))

    return _make(np.power(a.data, p), (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    # gradient passes only through coordinates that were not clipped
    def backward(g):
        mask = np.ones_like(a.data)
        if lo is not None:
            mask *= a.data >= lo
        if hi is not None:
            mask *= a.data <= hi
        a._accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


# -- activations ----------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    def backward(g):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return _make(np.where(a.data > 0, a.data, slope * a.data), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), backward)


# -- reductions -------------------------------------------------------------------


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = float(np.prod([a.shape[ax] for ax in axes]))
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        a._accumulate(np.broadcast_to(gg, a.shape) / count)

    return _make(out_data, (a,), backward)


def tmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out_data = a.data.max(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        full = out_data
        if not keepdims:
            gg = np.expand_dims(gg, axes)
            full = np.expand_dims(full, axes)
        mask = (a.data == full).astype(a.data.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        a._accumulate(mask * gg)

    return _make(out_data, (a,), backward)


# -- shape manipulation -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    ts = list(tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def upsample_nearest2(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"upsample expects NCHW input, got shape {a.shape}")
    n, c, h, w = a.shape
    out_data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        a._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(out_data, (a,), backward)


def pad_edge2d(a: Tensor, pad: int) -> Tensor:
    """Replicate-pad the two trailing (spatial) axes of an NCHW tensor."""
    if a.ndim != 4:
        raise ShapeError(f"pad_edge2d expects NCHW input, got shape {a.shape}")
    n, c, h, w = a.shape
    out_data = np.pad(a.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")

    def backward(g):
        rows = np.zeros((n, c, h, w + 2 * pad), dtype=g.dtype)
        rows[:, :, 0, :] = g[:, :, :pad + 1, :].sum(axis=2)
        rows[:, :, -1, :] += g[:, :, h + pad - 1:, :].sum(axis=2)
        if h > 2:
            rows[:, :, 1:-1, :] += g[:, :, pad + 1:pad + h - 1, :]
        elif h == 1:
            rows[:, :, 0, :] = g.sum(axis=2)
        acc = np.zeros_like(a.data)
        acc[:, :, :, 0] = rows[:, :, :, :pad + 1].sum(axis=3)
        acc[:, :, :, -1] += rows[:, :, :, w + pad - 1:].sum(axis=3)
        if w > 2:
            acc[:, :, :, 1:-1] += rows[:, :, :, pad + 1:pad + w - 1]
        elif w == 1:
            acc[:, :, :, 0] = rows.sum(axis=3)
        a._accumulate(acc)

    return _make(out_data, (a,), backward)


def pad_reflect2d(a: Tensor, pad: int) -> Tensor:
    """Reflect-pad the two trailing (spatial) axes of an NCHW tensor."""
    if a.ndim != 4:
        raise ShapeError(f"pad_reflect2d expects NCHW input, got shape {a.shape}")
    n, c, h, w = a.shape
    if pad >= h or pad >= w:
        raise ShapeError(f"reflect pad {pad} too large for spatial extent {h}x{w}")
    out_data = np.pad(a.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")

    def _source(i, size):
        j = i - pad
        if j < 0:
            return -j
        if j >= size:
            return 2 * size - 2 - j
        return j

    def backward(g):
        acc = np.zeros_like(a.data)
        rows = np.zeros((n, c, h, w + 2 * pad), dtype=g.dtype)
        for i in range(h + 2 * pad):
            rows[:, :, _source(i, h), :] += g[:, :, i, :]
        for j in range(w + 2 * pad):
            acc[:, :, :, _source(j, w)] += rows[:, :, :, j]
        a._accumulate(acc)

    return _make(out_data, (a,), backward)


# -- linear algebra --------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


# -- convolution and pooling --------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate NCHW input with an (F, C, kh, kw) kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"kernel channels ({ck}) do not match input channels ({c})")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be non-negative, got {padding}")
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ConfigError(
            f"conv2d output extent is not integral for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv2d output extent {ho}x{wo} is empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_data = np.ascontiguousarray(np.moveaxis(
        np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])), 3, 1))

    def backward(g):
        if kernel.requires_grad:
            cols_b = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
            kernel._accumulate(np.tensordot(g, cols_b, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    patch = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        np.moveaxis(patch, 3, 1)
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            x._accumulate(gxp)

    return _make(out_data, (x, kernel), backward)


def pool_global(x: Tensor, mode: str = "avg") -> Tensor:
    """Reduce NCHW input over its spatial extent to (N, C, 1, 1)."""
    if x.ndim != 4:
        raise ShapeError(f"pool_global expects NCHW input, got shape {x.shape}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("pool_global requires a non-empty spatial extent")
    if mode == "avg":
        return tmean(x, axis=(2, 3), keepdims=True)
    if mode == "max":
        return tmax(x, axis=(2, 3), keepdims=True)
    raise ConfigError(f"unknown pooling mode {mode!r}")


# -- gradient verification ------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` against central finite differences.

    ``f`` must map one tensor to a scalar tensor. Returns the maximum over
    coordinates of |analytic - numeric| / max(1e-8, |numeric|).
    """
    leaf = point.detach(requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ShapeError(f"grad_check target must be scalar, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: function value is not finite")
    out.backward()
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).reshape(-1)

    base = point.data.copy()
    numeric = np.zeros(base.size, dtype=np.float64)
    flat = base.reshape(-1)
    for idx in range(base.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = _eval_scalar(f, base)
        flat[idx] = orig - eps
        lo = _eval_scalar(f, base)
        flat[idx] = orig
        numeric[idx] = (hi - lo) / (2.0 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("grad_check: finite-difference evaluation is not finite")
    denom = np.maximum(1e-8, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def _eval_scalar(f, data: np.ndarray) -> float:
    with no_grad():
        val = f(Tensor(data.copy(), dtype=data.dtype.type))
    arr = val.data if isinstance(val, Tensor) else np.asarray(val)
    if arr.size != 1:
        raise ShapeError("grad_check target must be scalar")
    if not np.all(np.isfinite(arr)):
        raise NumericError("grad_check: function value is not finite")
    return float(arr.reshape(-1)[0])
