"""Dense-tensor compute core with reverse-mode differentiation.

A deliberately small operation set: the forecast model needs roughly a
dozen kinds, and enumerating them keeps every gradient hand-checkable
against finite differences.  Values are numpy arrays (float32 for
training, float64 for gradient checks); graphs are recorded per forward
pass and freed after backward.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "absolute",
    "gelu",
    "scale",
    "conv3x3",
    "conv1x1",
    "avg_pool2",
    "upsample2",
    "concat_channels",
    "split_members",
    "tsum",
    "tmean",
    "weighted_mean",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op kind."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (inference fast path)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "kind")

    def __init__(self, data, requires_grad=False, kind="leaf"):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.kind = kind

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, kind={self.kind}, requires_grad={self.requires_grad})"

    # convenience operators
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, backward_fn, kind) -> Tensor:
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, kind=kind)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g is t.data else g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcastable(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: operands {a.shape} and {b.shape} are not broadcastable")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable(a, b, "add")

    def bw(out, g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable(a, b, "sub")

    def bw(out, g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting.

    Covers the (B,C,H,W) x (B,C,1,1) and (1,C,1,1) modulation patterns.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable(a, b, "mul")

    def bw(out, g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def absolute(a) -> Tensor:
    a = _as_tensor(a)

    def bw(out, g):
        # subgradient at 0 taken as 0
        _accumulate(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw, "abs")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a) -> Tensor:
    """Smooth nonlinearity, tanh form of the Gaussian-error unit."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(o, g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dt = (1.0 - t**2) * d_inner
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * dt))

    return _make(out, (a,), bw, "gelu")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bw(out, g):
        _accumulate(a, g * c)

    return _make(a.data * np.asarray(c, dtype=a.dtype), (a,), bw, "scale")


def _conv3x3_gather(x: np.ndarray) -> np.ndarray:
    """(B,C,H,W) -> columns (C*9, B*H*W) with periodic padding."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="wrap")
    s = xp.strides
    pat = np.lib.stride_tricks.as_strided(
        xp, (b, c, 3, 3, h, w), (s[0], s[1], s[2], s[3], s[2], s[3])
    )
    return np.ascontiguousarray(pat.transpose(1, 2, 3, 0, 4, 5)).reshape(c * 9, b * h * w)


def conv3x3(x, w) -> Tensor:
    """3x3 convolution with periodic padding, stride 1.

    x: (B,C,H,W); w: (O,C,3,3).  The doubly periodic domain makes wrap
    padding the physically correct boundary treatment.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv3x3: input must be (B,C,H,W), got {x.shape}")
    if w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: kernel must be (O,C,3,3), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv3x3: kernel expects {w.shape[1]} input channels, got input {x.shape}"
        )
    b, c, h, wd = x.shape
    o = w.shape[0]
    col = _conv3x3_gather(x.data)  # (C*9, B*H*W)
    out = (w.data.reshape(o, c * 9) @ col).reshape(o, b, h, wd).transpose(1, 0, 2, 3)

    def bw(ot, g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, b * h * wd)
        if w.requires_grad:
            _accumulate(w, (gm @ col.T).reshape(o, c, 3, 3))
        if x.requires_grad:
            gcol = w.data.reshape(o, c * 9).T @ gm  # (C*9, B*H*W)
            gcol = gcol.reshape(c, 3, 3, b, h, wd)
            gx = np.zeros_like(x.data)
            for dy in range(3):
                for dx in range(3):
                    gx += np.roll(
                        gcol[:, dy, dx].transpose(1, 0, 2, 3), (dy - 1, dx - 1), axis=(2, 3)
                    )
            _accumulate(x, gx)

    return _make(out, (x, w), bw, "conv3x3")


def conv1x1(x, w, bias=None) -> Tensor:
    """Pointwise channel map: x (B,C,H,W), w (O,C), optional bias (O,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv1x1: input must be (B,C,H,W), got {x.shape}")
    if w.data.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1x1: kernel (O,C) with C={x.shape[1]} required, got {w.shape}")
    b, c, h, wd = x.shape
    o = w.shape[0]
    xm = x.data.reshape(b, c, h * wd)
    out = np.einsum("oc,bcp->bop", w.data, xm).reshape(b, o, h, wd)
    parents = [x, w]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv1x1: bias must be ({o},), got {bias.shape}")
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)

    def bw(ot, g):
        gm = g.reshape(b, o, h * wd)
        if w.requires_grad:
            _accumulate(w, np.einsum("bop,bcp->oc", gm, xm))
        if x.requires_grad:
            _accumulate(x, np.einsum("oc,bop->bcp", w.data, gm).reshape(b, c, h, wd))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out, tuple(parents), bw, "conv1x1")


def avg_pool2(x) -> Tensor:
    """2x average-pool downsample of (B,C,H,W); H and W must be even."""
    x = _as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"avg_pool2: need (B,C,even,even), got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(ot, g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        _accumulate(x, gx)

    return _make(out, (x,), bw, "avg_pool2")


def upsample2(x) -> Tensor:
    """2x nearest-neighbour upsample of (B,C,H,W)."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2: need (B,C,H,W), got {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(ot, g):
        b, c, h, w = x.shape
        _accumulate(x, g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(out, (x,), bw, "upsample2")


def concat_channels(xs) -> Tensor:
    """Concatenate (B,C_i,H,W) tensors along the channel axis."""
    xs = [_as_tensor(x) for x in xs]
    base = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != 4 or x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ShapeError(
                f"concat_channels: incompatible operand {x.shape}, expected (B={base[0]},*,{base[2]},{base[3]})"
            )
    out = np.concatenate([x.data for x in xs], axis=1)
    sizes = [x.shape[1] for x in xs]

    def bw(ot, g):
        start = 0
        for x, c in zip(xs, sizes):
            _accumulate(x, g[:, start : start + c])
            start += c

    return _make(out, tuple(xs), bw, "concat")


def split_members(x, m: int) -> list[Tensor]:
    """Split the leading (member) axis into m single-member tensors."""
    x = _as_tensor(x)
    if x.shape[0] != m:
        raise ShapeError(f"split_members: leading axis {x.shape[0]} != {m}")
    outs = []
    for j in range(m):

        def bw(ot, g, j=j):
            gx = np.zeros_like(x.data)
            gx[j] = g
            _accumulate(x, gx)

        outs.append(_make(x.data[j], (x,), bw, "member_slice"))
    return outs


def tsum(x) -> Tensor:
    x = _as_tensor(x)

    def bw(ot, g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(x.data.sum(), (x,), bw, "sum")


def tmean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size

    def bw(ot, g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _make(x.data.mean(), (x,), bw, "mean")


def weighted_mean(x, row_weights=None) -> Tensor:
    """Mean over all elements, rows (axis -2) weighted by `row_weights`.

    Weights are expected to average to 1 (see losses.cosine_weights), so
    uniform weights reduce exactly to the plain mean.
    """
    x = _as_tensor(x)
    if row_weights is None:
        return tmean(x)
    w = np.asarray(row_weights, dtype=x.dtype)
    if x.data.ndim < 2 or w.shape != (x.shape[-2],):
        raise ShapeError(
            f"weighted_mean: weights {w.shape} do not match rows of {x.shape}"
        )
    wfull = w.reshape((1,) * (x.data.ndim - 2) + (-1, 1))
    n = x.data.size
    out = (x.data * wfull).sum() * (w.size / (w.sum() * n))

    def bw(ot, g):
        _accumulate(x, g * np.broadcast_to(wfull * (w.size / (w.sum() * n)), x.shape))

    return _make(out, (x,), bw, "weighted_mean")


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss.

    Visits each recorded node exactly once in reverse topological order;
    repeated calls without zeroing accumulate gradients additively.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    # Interior grads are per-call scratch; only leaves accumulate across
    # repeated backward calls.
    for node in topo:
        if node._parents:
            node.grad = None
    _accumulate(loss, np.asarray(1.0, dtype=loss.dtype))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node, node.grad)
