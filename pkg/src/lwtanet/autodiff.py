"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor remembers which primitive produced it and from which operands.
``backward(result)`` materializes that record in reverse topological order
(the tape) and accumulates d(result)/d(leaf) into every participating tensor
created with ``requires_grad=True``. Everything runs in float64; kernels are
plain numpy with fixed reduction order, so replaying a tape is bit-exact.
"""

from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.5772156649015328606


class ShapeError(ValueError):
    """Operand shapes violate a primitive's broadcasting/contraction rule."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(int(d) for d in s) for s in shapes)
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """An n-dimensional float64 array, optionally tracked on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._grad_fn = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the module-level primitives
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


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_broadcast("add", a, b)

    def grad_fn(g, accum):
        accum(a, _unbroadcast(g, a.shape))
        accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", grad_fn)


def sub(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_broadcast("subtract", a, b)

    def grad_fn(g, accum):
        accum(a, _unbroadcast(g, a.shape))
        accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "subtract", grad_fn)


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_broadcast("multiply", a, b)

    def grad_fn(g, accum):
        accum(a, _unbroadcast(g * b.data, a.shape))
        accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "multiply", grad_fn)


def div(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_broadcast("divide", a, b)

    def grad_fn(g, accum):
        accum(a, _unbroadcast(g / b.data, a.shape))
        accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), "divide", grad_fn)


def neg(a) -> Tensor:
    a = ensure_tensor(a)

    def grad_fn(g, accum):
        accum(a, -g)

    return _result(-a.data, (a,), "negate", grad_fn)


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.exp(a.data)

    def grad_fn(g, accum):
        accum(a, g * out_data)

    return _result(out_data, (a,), "exp", grad_fn)


def log(a) -> Tensor:
    a = ensure_tensor(a)

    def grad_fn(g, accum):
        accum(a, g / a.data)

    return _result(np.log(a.data), (a,), "log", grad_fn)


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a constant real exponent."""
    a = ensure_tensor(a)
    p = float(p)

    def grad_fn(g, accum):
        accum(a, g * p * np.power(a.data, p - 1.0))

    return _result(np.power(a.data, p), (a,), "power", grad_fn)


def sigmoid(a) -> Tensor:
    a = ensure_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def grad_fn(g, accum):
        accum(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), "sigmoid", grad_fn)


def tanh(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.tanh(a.data)

    def grad_fn(g, accum):
        accum(a, g * (1.0 - out_data * out_data))

    return _result(out_data, (a,), "tanh", grad_fn)


def relu(a) -> Tensor:
    a = ensure_tensor(a)

    def grad_fn(g, accum):
        accum(a, g * (a.data > 0))

    return _result(np.maximum(a.data, 0.0), (a,), "relu", grad_fn)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through the interior, zero outside."""
    a = ensure_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def grad_fn(g, accum):
        accum(a, g * inside)

    return _result(np.clip(a.data, lo, hi), (a,), "clamp", grad_fn)


def digamma(a) -> Tensor:
    """Elementwise digamma; derivative is the trigamma function."""
    a = ensure_tensor(a)

    def grad_fn(g, accum):
        accum(a, g * trigamma_values(a.data))

    return _result(digamma_values(a.data), (a,), "digamma", grad_fn)


# ---------------------------------------------------------------------------
# structural ops

def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    shape = tuple(int(s) for s in np.atleast_1d(np.asarray(shape, dtype=np.int64)))
    if shape.count(-1) == 1:
        rest = int(np.prod([s for s in shape if s != -1]))
        shape = tuple(a.size // max(rest, 1) if s == -1 else s for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, shape)

    def grad_fn(g, accum):
        accum(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), "reshape", grad_fn)


def transpose(a, axes=None) -> Tensor:
    a = ensure_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(ax % a.ndim for ax in axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g, accum):
        accum(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), "transpose", grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concatenate", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g, accum):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis),
                   tuple(tensors), "concatenate", grad_fn)


def broadcast_to(a, shape) -> Tensor:
    a = ensure_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out_data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None

    def grad_fn(g, accum):
        accum(a, _unbroadcast(g, a.shape))

    return _result(out_data.copy(), (a,), "broadcast", grad_fn)


def index_select(a, axis: int, indices) -> Tensor:
    """Take entries along one axis; gradient scatter-adds back."""
    a = ensure_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def grad_fn(g, accum):
        ga = np.zeros_like(a.data)
        idx = (slice(None),) * (axis % a.ndim) + (indices,)
        np.add.at(ga, idx, g)
        accum(a, ga)

    return _result(np.take(a.data, indices, axis=axis), (a,), "index-select", grad_fn)


# ---------------------------------------------------------------------------
# reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    axes = tuple(range(a.ndim)) if axis is None else (
        (axis,) if isinstance(axis, int) else tuple(axis))

    def grad_fn(g, accum):
        if not keepdims:
            g = np.expand_dims(g, axes) if a.ndim else g
        accum(a, np.broadcast_to(g, a.shape).copy())

    return _result(a.data.sum(axis=axes if a.ndim else None, keepdims=keepdims),
                   (a,), "sum", grad_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    axes = tuple(range(a.ndim)) if axis is None else (
        (axis,) if isinstance(axis, int) else tuple(axis))
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1

    def grad_fn(g, accum):
        if not keepdims:
            g = np.expand_dims(g, axes) if a.ndim else g
        accum(a, np.broadcast_to(g / count, a.shape).copy())

    return _result(a.data.mean(axis=axes if a.ndim else None, keepdims=keepdims),
                   (a,), "mean", grad_fn)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along one axis, computed through a log-sum-exp shift."""
    a = ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g, accum):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        accum(a, out_data * (g - dot))

    return _result(out_data, (a,), "softmax", grad_fn)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(s)
    soft = e / s
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def grad_fn(g, accum):
        if not keepdims:
            g = np.expand_dims(g, axis)
        accum(a, g * soft)

    return _result(out_data, (a,), "log-sum-exp", grad_fn)


# ---------------------------------------------------------------------------
# contractions

def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def grad_fn(g, accum):
        accum(a, g @ b.data.T)
        accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", grad_fn)


def _same_pad(extent: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [B, Hp, Wp, C] -> [B, oh, ow, kh, kw, C]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x, w, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation, NHWC input [B,H,W,C] against kernel [kh,kw,C,F].

    Patch-gather (im2col) followed by a single matrix multiply; gradients run
    back through the identical contraction. ``padding`` is "valid" or "same"
    (zero pad, extra pixel on the bottom/right when the total is odd).
    """
    x, w = ensure_tensor(x), ensure_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if padding not in ("valid", "same"):
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    stride = int(stride)
    B, H, W, C = x.shape
    kh, kw, _, F = w.shape

    if padding == "same":
        pt, pb = _same_pad(H, kh, stride)
        pl, pr = _same_pad(W, kw, stride)
    else:
        pt = pb = pl = pr = 0
        if H < kh or W < kw:
            raise ShapeError("conv2d", x.shape, w.shape)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x.data

    cols = _im2col(xp, kh, kw, stride)              # [B, oh, ow, kh, kw, C]
    _, oh, ow = cols.shape[:3]
    cols2 = cols.reshape(B * oh * ow, kh * kw * C)
    wmat = w.data.reshape(kh * kw * C, F)
    out_data = (cols2 @ wmat).reshape(B, oh, ow, F)

    def grad_fn(g, accum):
        g2 = g.reshape(B * oh * ow, F)
        accum(w, (cols2.T @ g2).reshape(w.shape))
        dcols = (g2 @ wmat.T).reshape(B, oh, ow, kh, kw, C)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + oh * stride:stride, j:j + ow * stride:stride, :] += dcols[:, :, :, i, j, :]
        accum(x, dxp[:, pt:pt + H, pl:pl + W, :])

    return _result(out_data, (x, w), "conv2d", grad_fn)


def maxpool2d(x, size: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling over spatial windows, NHWC, valid extent, first-max ties."""
    x = ensure_tensor(x)
    if x.ndim != 4:
        raise ShapeError("maxpool2d", x.shape)
    p = int(size)
    s = p if stride is None else int(stride)
    B, H, W, C = x.shape
    if H < p or W < p:
        raise ShapeError("maxpool2d", x.shape, (p, p))
    win = np.lib.stride_tricks.sliding_window_view(x.data, (p, p), axis=(1, 2))
    win = win[:, ::s, ::s]                           # [B, oh, ow, C, p, p]
    _, oh, ow = win.shape[:3]
    flat = win.reshape(B, oh, ow, C, p * p)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g, accum):
        gx = np.zeros_like(x.data)
        for i in range(p):
            for j in range(p):
                sel = (arg == i * p + j)
                gx[:, i:i + oh * s:s, j:j + ow * s:s, :] += g * sel
        accum(x, gx)

    return _result(out_data, (x,), "maxpool2d", grad_fn)


# ---------------------------------------------------------------------------
# tape replay

def _topo_order(result: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(result, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _run_backward(result: Tensor, seed: np.ndarray) -> None:
    order = _topo_order(result)
    store: dict[int, np.ndarray] = {id(result): np.array(seed, dtype=np.float64)}

    def accum(t: Tensor, g):
        if not t.requires_grad:
            return
        g = np.asarray(g, dtype=np.float64)
        key = id(t)
        if key in store:
            store[key] = store[key] + g
        else:
            store[key] = np.array(g)

    for node in reversed(order):
        g = store.get(id(node))
        if g is None or node._grad_fn is None:
            continue
        node._grad_fn(g.reshape(node.shape) if g.shape != node.shape else g, accum)

    for node in order:
        if node.requires_grad:
            g = store.get(id(node))
            node.grad = np.zeros_like(node.data) if g is None else g.reshape(node.shape)


def backward(result: Tensor) -> None:
    """Populate .grad with d(result)/d(tensor) for every tracked participant."""
    if result.size != 1:
        raise ValueError(f"backward requires a scalar result, got shape {result.shape}")
    if not result.requires_grad:
        raise ValueError("backward: result is not connected to any tracked tensor")
    _run_backward(result, np.ones_like(result.data))


def grad_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and re-runnable with identical noise; the
    relative error at each coordinate is |a - n| / (|a| + |n| + 1e-12).
    """
    x.requires_grad = True
    out = f(x)
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x).item()
        flat[i] = keep - step
        lo = f(x).item()
        flat[i] = keep
        nflat[i] = (hi - lo) / (2.0 * step)

    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# special functions (self-contained; no scipy in the library)

def digamma_values(x) -> np.ndarray:
    """Digamma via upward recurrence to argument >= 6 plus asymptotic series."""
    y = np.array(x, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("digamma_values requires positive arguments")
    acc = np.zeros_like(y)
    for _ in range(6):
        small = y < 6.0
        if not small.any():
            break
        acc -= np.where(small, 1.0 / y, 0.0)
        y = y + small
    inv = 1.0 / y
    inv2 = inv * inv
    series = (np.log(y) - 0.5 * inv
              - inv2 * (1.0 / 12.0
                        - inv2 * (1.0 / 120.0
                                  - inv2 * (1.0 / 252.0
                                            - inv2 * (1.0 / 240.0
                                                      - inv2 * (1.0 / 132.0))))))
    return acc + series


def trigamma_values(x) -> np.ndarray:
    """Trigamma by the same recurrence/asymptotic-series technique."""
    y = np.array(x, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("trigamma_values requires positive arguments")
    acc = np.zeros_like(y)
    for _ in range(6):
        small = y < 6.0
        if not small.any():
            break
        acc += np.where(small, 1.0 / (y * y), 0.0)
        y = y + small
    inv = 1.0 / y
    inv2 = inv * inv
    series = inv * (1.0
                    + inv * (0.5
                             + inv * (1.0 / 6.0
                                      - inv2 * (1.0 / 30.0
                                                - inv2 * (1.0 / 42.0
                                                          - inv2 * (1.0 / 30.0))))))
    return acc + series
