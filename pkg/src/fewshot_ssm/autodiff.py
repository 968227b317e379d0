"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive is a forward function returning ``(value, backward)`` where
``backward(grad_out)`` returns one gradient per input (``None`` for inputs that
do not need one).  Results are recorded only when some input requires a
gradient and recording is enabled (see :func:`no_grad`).

Elementwise binary primitives follow numpy broadcasting; gradients are summed
back to each input's shape.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

COSINE_EPS = 1e-12

_node_ids = itertools.count(1)
_recording = True


class ShapeError(ValueError):
    """Inputs to a primitive have non-conforming shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "node_id", "name")
    # make ndarray (op) Tensor defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.parents = ()
        self._backward = None
        self.node_id = next(_node_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        t.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        t.grad = None
        t.requires_grad = False
        t.op = None
        t.parents = ()
        t._backward = None
        t.node_id = next(_node_ids)
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.op is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor._wrap(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _record(kind, value, inputs, backward_fn):
    out = Tensor._wrap(value)
    if _recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = kind
        out.parents = tuple(inputs)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Elementwise binary


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("div", out, (a, b), bw)


def scale(x, factor):
    x = as_tensor(x)
    factor = float(factor)
    return _record("scale", x.data * factor, (x,), lambda g: (g * factor,))


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record("matmul", out, (a, b), bw)


# ---------------------------------------------------------------------------
# Structural


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: cannot join shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return _record("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def slice_(x, key):
    """Basic (non-fancy) indexing; integers, slices and Ellipsis only."""
    x = as_tensor(x)
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not (isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None):
            raise ShapeError(f"slice: unsupported index {k!r} for shape {x.shape}")
    try:
        out = x.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice: index {key!r} invalid for shape {x.shape}: {exc}") from None

    def bw(g):
        full = np.zeros_like(x.data)
        full[key] += g
        return (full,)

    return _record("slice", np.array(out), (x,), bw)


def reverse(x, axis=0):
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reverse: axis {axis} out of range for shape {x.shape}")
    return _record("reverse", np.flip(x.data, axis=axis), (x,), lambda g: (np.flip(g, axis=axis),))


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}") from None
    return _record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = np.argsort([a % x.ndim for a in axes])
    return _record("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _record("broadcast_to", out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------------------
# Reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for a in axes:
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return _record("sum", out, (x,), lambda g: (_expand(g, x.shape, axes, keepdims),))


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return _record("mean", out, (x,), lambda g: (_expand(g, x.shape, axes, keepdims) / count,))


def frobenius_norm(x, axis=None, keepdims=False):
    """Square root of the sum of squares over ``axis`` (all axes by default)."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=keepdims))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        ratio = np.where(out > 0, g / safe, 0.0)
        return (x.data * _expand(ratio, x.shape, axes, keepdims),)

    return _record("frobenius_norm", out, (x,), bw)


# ---------------------------------------------------------------------------
# Elementwise unary


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _record("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _record("silu", x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x):
    x = as_tensor(x)
    return _record("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _record("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def reciprocal(x):
    x = as_tensor(x)
    out = 1.0 / x.data
    return _record("reciprocal", out, (x,), lambda g: (-g * out * out,))


# ---------------------------------------------------------------------------
# Normalised maps


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record("softmax", s, (x,), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", out, (x,), bw)


def cosine_similarity(a, b, axis=-1):
    """Cosine of the angle between ``a`` and ``b`` along ``axis`` (broadcasting).

    The denominator ``|a| |b|`` is clamped below at ``COSINE_EPS``.
    """
    a, b = as_tensor(a), as_tensor(b)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cosine_similarity: cannot combine shapes {a.shape} and {b.shape}") from None
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    raw = na * nb
    clamped = raw < COSINE_EPS
    denom = np.where(clamped, COSINE_EPS, raw)
    sim = dot / denom

    def bw(g):
        g = np.expand_dims(g, axis)
        # d sim / d a = b/denom - sim * a / |a|^2 when unclamped
        na2 = np.where(clamped, 1.0, na * na)
        nb2 = np.where(clamped, 1.0, nb * nb)
        corr_a = np.where(clamped, 0.0, sim / na2)
        corr_b = np.where(clamped, 0.0, sim / nb2)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.broadcast_to(g * (b.data / denom - corr_a * a.data), shape), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.broadcast_to(g * (a.data / denom - corr_b * b.data), shape), b.shape)
        return ga, gb

    return _record("cosine_similarity", np.squeeze(sim, axis=axis), (a, b), bw)


# ---------------------------------------------------------------------------
# Fused kernels


def linear_scan(a, u):
    """Diagonal linear recurrence ``h[t] = a[t] * h[t-1] + u[t]``, ``h[-1] = 0``.

    ``a`` and ``u`` share a shape ``(batch, time, ...)``; time is axis 1.
    """
    a, u = as_tensor(a), as_tensor(u)
    if a.shape != u.shape or a.ndim < 2:
        raise ShapeError(f"linear_scan: coefficient shape {a.shape} and input shape {u.shape} must match (batch, time, ...)")
    shape = u.shape
    flat = (shape[0], shape[1], -1)
    a3 = a.data.reshape(flat)
    h3 = kernels.scan_forward(a3, u.data.reshape(flat))

    def bw(g):
        ga, gu = kernels.scan_backward(a3, h3, g.reshape(flat))
        return ga.reshape(shape), gu.reshape(shape)

    return _record("linear_scan", h3.reshape(shape), (a, u), bw)


def ssm_scan_fused(x, a_bar, b_bar, c):
    """Per-channel diagonal SSM with readout in one kernel.

    ``x``: ``(batch, length, width)``; ``a_bar``, ``b_bar``, ``c``: ``(n_state, width)``.
    Returns ``y[b, t, d] = sum_n c[n, d] h[b, t, n, d]`` where
    ``h[t] = a_bar * h[t-1] + b_bar * x[t]`` from a zero state.
    """
    x, a_bar, b_bar, c = (as_tensor(t) for t in (x, a_bar, b_bar, c))
    if x.ndim != 3 or a_bar.ndim != 2 or a_bar.shape != b_bar.shape or a_bar.shape != c.shape \
            or a_bar.shape[1] != x.shape[2]:
        raise ShapeError(f"ssm_scan: input shape {x.shape} incompatible with coefficient shapes "
                         f"{a_bar.shape}, {b_bar.shape}, {c.shape}")
    y, h = kernels.ssm_forward(x.data, a_bar.data, b_bar.data, c.data)

    def bw(g):
        return kernels.ssm_backward(x.data, a_bar.data, b_bar.data, c.data, h, g)

    out = _record("ssm_scan", y, (x, a_bar, b_bar, c), bw)
    out_state = h[:, -1]
    return out, out_state


def conv2d(x, w):
    """Stride-1 same-padded cross-correlation.

    ``x``: ``(batch, c_in, H, W)``; ``w``: ``(c_out, c_in, kh, kw)`` with odd kernel sides.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with kernel shape {w.shape}")
    nb, cin, hh, ww = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((nb, cin, kh, kw, hh, ww))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + hh, j:j + ww]
    cols = cols.reshape(nb, cin * kh * kw, hh * ww)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat, cols).reshape(nb, cout, hh, ww)

    def bw(g):
        g2 = g.reshape(nb, cout, hh * ww)
        gw = None
        if w.requires_grad:
            gw = np.matmul(g2, np.swapaxes(cols, 1, 2)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(nb, cin, kh, kw, hh, ww)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hh, j:j + ww] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + hh, pw:pw + ww]
        return gx, gw

    return _record("conv2d", out, (x, w), bw)


def _ssm_scan_output(x, a_bar, b_bar, c):
    return ssm_scan_fused(x, a_bar, b_bar, c)[0]


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "concat": concat,
    "slice": slice_,
    "reverse": reverse,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast_to": broadcast_to,
    "mean": mean,
    "sum": sum_,
    "sigmoid": sigmoid,
    "silu": silu,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "reciprocal": reciprocal,
    "frobenius_norm": frobenius_norm,
    "cosine_similarity": cosine_similarity,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "scale": scale,
    "linear_scan": linear_scan,
    "conv2d": conv2d,
    "ssm_scan": _ssm_scan_output,
}


def apply_primitive(kind, *inputs, **attrs):
    """Dispatch to a primitive by name, e.g. ``apply_primitive("reverse", x, axis=0)``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    if kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# Graph and backward


@dataclass
class Graph:
    """Topologically ordered recorded nodes reachable from an output."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def backward(loss, graph=None):
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every leaf requiring it."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or Graph.from_output(loss)
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            if pg.shape != parent.shape:
                pg = pg.reshape(parent.shape)
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Finite-difference checking


@dataclass
class GradCheckResult:
    max_error: float
    worst_index: tuple | None
    finite: bool = True
    message: str = ""

    @property
    def ok(self):
        return self.finite


def grad_check(fn, point, eps=1e-5):
    """Compare the analytic gradient of scalar ``fn`` with central differences.

    ``fn`` takes one Tensor and returns a scalar Tensor.  The error per
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``; the maximum is
    returned together with its coordinate.
    """
    x = Tensor(point, requires_grad=True)
    out = fn(x)
    if not np.all(np.isfinite(out.data)):
        return GradCheckResult(math.inf, None, False, "non-finite value at the base point")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad
    return _compare(lambda arr: fn(Tensor._wrap(arr)).item(), x.data, analytic, eps)


def _compare(evaluate, base, analytic, eps, coords=None):
    worst, worst_idx = 0.0, None
    probe = base.copy()
    flat = probe.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    for k in indices:
        orig = flat[k]
        flat[k] = orig + eps
        fp = evaluate(probe)
        flat[k] = orig - eps
        fm = evaluate(probe)
        flat[k] = orig
        idx = np.unravel_index(k, base.shape)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return GradCheckResult(math.inf, tuple(int(i) for i in idx), False, f"non-finite value when probing coordinate {tuple(int(i) for i in idx)}")
        numeric = (fp - fm) / (2 * eps)
        err = abs(analytic.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
        if err > worst or worst_idx is None:
            worst, worst_idx = err, tuple(int(i) for i in idx)
    return GradCheckResult(worst, worst_idx)


def grad_check_params(loss_fn, params, eps=1e-5, max_coords=None, rng=None):
    """Finite-difference check of ``loss_fn()`` against every named parameter.

    ``params`` maps names to leaf Tensors that ``loss_fn`` closes over.
    Returns ``{name: GradCheckResult}``.  With ``max_coords``, each group is
    checked on a random subset of that many coordinates.
    """
    zero_grad(params.values())
    loss = loss_fn()
    backward(loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    results = {}
    for name, p in params.items():
        coords = None
        if max_coords is not None and p.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = sorted(rng.choice(p.size, size=max_coords, replace=False).tolist())
        saved = p.data

        def evaluate(arr, p=p):
            p.data = arr
            with no_grad():
                return loss_fn().item()

        results[name] = _compare(evaluate, saved.copy(), analytic[name], eps, coords)
        p.data = saved
    zero_grad(params.values())
    return results
