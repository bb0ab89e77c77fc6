"""Dense float64 tensors with reverse-mode automatic differentiation.

Each Tensor doubles as a node of the computation graph: it stores its
forward value, the tensors it was computed from, and a closure holding
the backward rule. `backward()` on a scalar walks the graph once in
reverse topological order and accumulates gradients into every reachable
tensor that has `requires_grad` set.

The operation set is deliberately small: exactly what the pipeline,
decoder and losses need. Everything runs in double precision so central
finite differences are a trustworthy oracle. Ties in argmax are broken
by lowest index everywhere.
"""

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "no_grad",
    "is_grad_enabled",
    "trace_ops",
    "scope",
    "matmul",
    "softmax",
    "l2_normalize",
    "conv2d",
    "transposed_conv2d",
    "avg_pool",
    "bilinear_upsample",
    "layer_norm",
    "take_rows",
    "gather",
    "scatter_rows",
    "straight_through",
    "one_hot",
]


class DimensionError(ValueError):
    """Raised when tensor shapes or axes violate an operation's contract."""


_grad_enabled = True
_trace_sink = None
_scope_stack = []


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


@contextmanager
def trace_ops(sink):
    """Record every op executed in the block as (scope, op_name) into `sink`.

    Used by tests to fingerprint which computation paths a configuration
    actually exercises.
    """
    global _trace_sink
    prev = _trace_sink
    _trace_sink = sink
    try:
        yield sink
    finally:
        _trace_sink = prev


@contextmanager
def scope(name):
    """Label ops executed in the block for trace fingerprints."""
    _scope_stack.append(str(name))
    try:
        yield
    finally:
        _scope_stack.pop()


def _record(op):
    if _trace_sink is not None:
        _trace_sink.append(("/".join(_scope_stack), op))


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    if grad.shape == tuple(shape):
        return grad
    # sum over prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were size-1 in the original
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array, optionally tracking gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._prev = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._bad_item()

    def _bad_item(self):
        raise DimensionError(f"item() needs a 1-element tensor, got shape {self.shape}")

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self):
        """A view of the same values, cut out of the graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._prev = ()
        t._backward = None
        return t

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    # -- autograd -----------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar. Returns the number of graph nodes visited."""
        if self.data.size != 1:
            raise DimensionError(f"backward() starts from a scalar, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return len(topo)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            out = _make(self.data + other, (self,), "add")
            if out.requires_grad:
                out._backward = lambda g: self._accumulate(_unbroadcast(g, self.shape))
            return out
        data = _broadcast_op(np.add, self, other, "add")
        out = _make(data, (self, other), "add")
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.shape))
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,), "neg")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = float(other)
            out = _make(self.data * c, (self,), "scale")
            if out.requires_grad:
                out._backward = lambda g: self._accumulate(g * c)
            return out
        data = _broadcast_op(np.multiply, self, other, "mul")
        out = _make(data, (self, other), "mul")
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.shape))
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            return self * (1.0 / float(other))
        data = _broadcast_op(np.divide, self, other, "div")
        out = _make(data, (self, other), "div")
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-g * self.data / (other.data ** 2), other.shape))
            out._backward = bw
        return out

    def __pow__(self, p):
        p = float(p)
        out = _make(self.data ** p, (self,), "pow")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * p * self.data ** (p - 1.0))
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    # -- unary math -----------------------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        out = _make(data, (self,), "exp")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * data)
        return out

    def log(self):
        out = _make(np.log(self.data), (self,), "log")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def sqrt(self):
        data = np.sqrt(self.data)
        out = _make(data, (self,), "sqrt")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * 0.5 / data)
        return out

    def abs(self):
        out = _make(np.abs(self.data), (self,), "abs")
        if out.requires_grad:
            sign = np.sign(self.data)
            out._backward = lambda g: self._accumulate(g * sign)
        return out

    def relu(self):
        out = _make(np.maximum(self.data, 0.0), (self,), "relu")
        if out.requires_grad:
            mask = (self.data > 0.0).astype(np.float64)
            out._backward = lambda g: self._accumulate(g * mask)
        return out

    def gelu(self):
        # tanh approximation of the Gaussian error linear unit
        c = np.sqrt(2.0 / np.pi)
        a = 0.044715
        x = self.data
        t = np.tanh(c * (x + a * (x * x * x)))
        out = _make(0.5 * x * (1.0 + t), (self,), "gelu")
        if out.requires_grad:
            def bw(g):
                # derivative assembled lazily so inference pays only forward cost
                du = c * (1.0 + 3.0 * a * (x * x))
                local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
                self._accumulate(g * local)
            out._backward = bw
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = _make(s, (self,), "sigmoid")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * s * (1.0 - s))
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = _make(t, (self,), "tanh")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * (1.0 - t ** 2))
        return out

    def clamp(self, lo, hi):
        """Clip values; gradient passes only where unclipped."""
        out = _make(np.clip(self.data, lo, hi), (self,), "clamp")
        if out.requires_grad:
            mask = ((self.data >= lo) & (self.data <= hi)).astype(np.float64)
            out._backward = lambda g: self._accumulate(g * mask)
        return out

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:
            shape, nd = self.shape, self.ndim

            def bw(g):
                gg = g
                if axis is not None and not keepdims:
                    axes = axis if isinstance(axis, tuple) else (axis,)
                    axes = tuple(a % nd for a in axes)
                    gg = np.expand_dims(g, axes)
                self._accumulate(np.broadcast_to(gg, shape).copy())
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.shape[a % self.ndim]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {old} to {shape}") from e
        out = _make(data, (self,), "reshape")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g.reshape(old))
        return out

    def transpose(self, *axes):
        if len(axes) == 0:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = _make(np.transpose(self.data, axes), (self,), "transpose")
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(np.transpose(g, inv))
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        """Basic (slice/int) indexing with gradient scatter into the source."""
        data = self.data[key]
        out = _make(np.ascontiguousarray(data), (self,), "slice")
        if out.requires_grad:
            def bw(g):
                gx = np.zeros_like(self.data)
                gx[key] = g.reshape(gx[key].shape)
                self._accumulate(gx)
            out._backward = bw
        return out

    # -- non-differentiable helpers ------------------------------------------------

    def argmax(self, axis=None):
        """Index of the max (lowest index on ties, numpy convention). No gradient."""
        return np.argmax(self.data, axis=axis)


def _broadcast_op(fn, a, b, name):
    try:
        return fn(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from e


def _make(data, prev, op):
    _record(op)
    t = Tensor.__new__(Tensor)
    t.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.asarray(data, dtype=np.float64)
    t.grad = None
    t._backward = None
    if _grad_enabled and any(p.requires_grad for p in prev):
        t.requires_grad = True
        t._prev = tuple(prev)
    else:
        t.requires_grad = False
        t._prev = ()
    return t


# -- linear algebra ----------------------------------------------------------------


def matmul(a, b):
    """Matrix product of two rank-2 tensors. dA = dC·Bᵀ, dB = Aᵀ·dC."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._backward = bw
    return out


def softmax(x, axis=-1):
    """Numerically stabilized softmax along `axis`."""
    ax = axis % x.ndim if x.ndim else 0
    if x.ndim == 0:
        raise DimensionError("softmax needs at least rank 1")
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)
    out = _make(y, (x,), "softmax")
    if out.requires_grad:
        def bw(g):
            dot = (g * y).sum(axis=ax, keepdims=True)
            x._accumulate((g - dot) * y)
        out._backward = bw
    return out


def l2_normalize(x, axis=-1):
    """Scale slices along `axis` to unit Euclidean norm.

    Slices with norm below 1e-12 pass through unchanged so early codebook
    collapse cannot poison gradients with NaNs.
    """
    ax = axis % x.ndim
    n = np.sqrt((x.data ** 2).sum(axis=ax, keepdims=True))
    safe = n >= 1e-12
    denom = np.where(safe, n, 1.0)
    y = x.data / denom
    out = _make(y, (x,), "l2_normalize")
    if out.requires_grad:
        def bw(g):
            dot = (g * y).sum(axis=ax, keepdims=True)
            gx = np.where(safe, (g - y * dot) / denom, g)
            x._accumulate(gx)
        out._backward = bw
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Fused op: y = x_hat * gamma + beta with
    dx = (dxh - mean(dxh) - x_hat * mean(dxh * x_hat)) / sigma, dxh = g * gamma.
    """
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        def bw(g):
            if beta.requires_grad:
                beta._accumulate(_unbroadcast(g, beta.shape))
            if gamma.requires_grad:
                gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
            if x.requires_grad:
                dxh = g * gamma.data
                m1 = dxh.mean(axis=-1, keepdims=True)
                m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
                x._accumulate((dxh - m1 - xhat * m2) * inv)
        out._backward = bw
    return out


# -- convolution and resampling -------------------------------------------------------


def _im2col(xp, kh, kw, oh, ow, stride):
    # xp: padded input [C, Hp, Wp] -> cols [C, kh, kw, oh, ow]
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def _col2im(cols, c, hp, wp, oh, ow, stride):
    # inverse scatter of _im2col: cols [C, kh, kw, oh, ow] -> padded map [C, Hp, Wp]
    kh, kw = cols.shape[1], cols.shape[2]
    xp = np.zeros((c, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, i, j]
    return xp


def conv2d(x, w, bias=None, stride=1, padding=0):
    """2-D convolution. x: [C,H,W], w: [O,C,kh,kw], bias: [O] or None."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    c, h, ww_ = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww_ + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv2d: kernel {w.shape} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, oh, ow, stride)
    flat = cols.reshape(c * kh * kw, oh * ow)
    y = (w.data.reshape(o, -1) @ flat).reshape(o, oh, ow)
    if bias is not None:
        y = y + bias.data.reshape(o, 1, 1)
    prev = (x, w) if bias is None else (x, w, bias)
    out = _make(y, prev, "conv2d")
    if out.requires_grad:
        hp, wp = xp.shape[1], xp.shape[2]

        def bw(g):
            gf = g.reshape(o, -1)
            if w.requires_grad:
                w._accumulate((gf @ flat.T).reshape(w.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(1, 2)))
            if x.requires_grad:
                dcols = (w.data.reshape(o, -1).T @ gf).reshape(c, kh, kw, oh, ow)
                dxp = _col2im(dcols, c, hp, wp, oh, ow, stride)
                if padding:
                    dxp = dxp[:, padding:hp - padding, padding:wp - padding]
                x._accumulate(dxp)
        out._backward = bw
    return out


def transposed_conv2d(x, w, bias=None, stride=1, padding=0):
    """Transposed 2-D convolution (adjoint of conv2d). x: [C,H,W], w: [C,O,kh,kw]."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[0]:
        raise DimensionError(f"transposed_conv2d: input {x.shape} vs kernel {w.shape}")
    c, h, ww_ = x.shape
    _, o, kh, kw = w.shape
    oh = (h - 1) * stride + kh - 2 * padding
    ow = (ww_ - 1) * stride + kw - 2 * padding
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"transposed_conv2d: degenerate output for input {x.shape}")
    hp, wp = oh + 2 * padding, ow + 2 * padding
    xf = x.data.reshape(c, h * ww_)
    cols = (w.data.reshape(c, -1).T @ xf).reshape(o, kh, kw, h, ww_)
    yp = _col2im(cols, o, hp, wp, h, ww_, stride)
    y = yp[:, padding:hp - padding, padding:wp - padding] if padding else yp
    if bias is not None:
        y = y + bias.data.reshape(o, 1, 1)
    prev = (x, w) if bias is None else (x, w, bias)
    out = _make(y, prev, "transposed_conv2d")
    if out.requires_grad:
        def bw(g):
            gp = np.pad(g, ((0, 0), (padding, padding), (padding, padding))) if padding else g
            gcols = _im2col(gp, kh, kw, h, ww_, stride).reshape(o * kh * kw, h * ww_)
            if x.requires_grad:
                x._accumulate((w.data.reshape(c, -1) @ gcols).reshape(x.shape))
            if w.requires_grad:
                w._accumulate((xf @ gcols.T).reshape(w.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(1, 2)))
        out._backward = bw
    return out


def avg_pool(x, k=2):
    """Non-overlapping k×k mean pooling of a [C,H,W] map."""
    if x.ndim != 3:
        raise DimensionError(f"avg_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool: extent {h}x{w} not divisible by {k}")
    y = x.data.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))
    out = _make(y, (x,), "avg_pool")
    if out.requires_grad:
        def bw(g):
            gg = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
            x._accumulate(gg)
        out._backward = bw
    return out


_bilinear_cache = {}


def _bilinear_matrix(n, factor):
    """Dense [n*factor, n] interpolation matrix, half-pixel centers,
    clamped at the borders."""
    key = (n, factor)
    hit = _bilinear_cache.get(key)
    if hit is not None:
        return hit
    dst = np.arange(n * factor, dtype=np.float64)
    src = (dst + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.clip(i0 + 1, 0, n - 1)
    i0 = np.clip(i0, 0, n - 1)
    mat = np.zeros((n * factor, n))
    np.add.at(mat, (np.arange(n * factor), i0), 1.0 - frac)
    np.add.at(mat, (np.arange(n * factor), i1), frac)
    _bilinear_cache[key] = mat
    return mat


def bilinear_upsample(x, factor):
    """Upsample a [C,H,W] map by an integer factor with bilinear interpolation.

    Implemented as y[c] = Ay @ x[c] @ Ax^T with cached interpolation
    matrices, so forward and backward are plain matrix products.
    """
    if x.ndim != 3:
        raise DimensionError(f"bilinear_upsample expects [C,H,W], got {x.shape}")
    factor = int(factor)
    if factor < 1:
        raise DimensionError(f"bilinear_upsample: factor must be >= 1, got {factor}")
    if factor == 1:
        return x * 1.0
    _, h, w = x.shape
    ay = _bilinear_matrix(h, factor)
    ax = _bilinear_matrix(w, factor)
    y = np.matmul(np.matmul(ay[None], x.data), ax.T[None])
    out = _make(y, (x,), "bilinear_upsample")
    if out.requires_grad:
        def bw(g):
            x._accumulate(np.matmul(np.matmul(ay.T[None], g), ax[None]))
        out._backward = bw
    return out


# -- indexing -----------------------------------------------------------------------


def take_rows(table, indices):
    """Select rows of a [N,d] tensor. Gradient scatter-adds into the table."""
    if table.ndim != 2:
        raise DimensionError(f"take_rows expects a rank-2 table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = _make(table.data[idx], (table,), "take_rows")
    if out.requires_grad:
        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
            table._accumulate(gt)
        out._backward = bw
    return out


def gather(x, indices, axis=0):
    """Index-select along an axis. Gradient is blocked by contract."""
    idx = np.asarray(indices, dtype=np.int64)
    _record("gather")
    return Tensor(np.take(x.data, idx, axis=axis))


def scatter_rows(num_rows, indices, updates):
    """Build a [num_rows, d] tensor with `updates` written at `indices` (last write
    wins on duplicates). Gradient is blocked by contract."""
    idx = np.asarray(indices, dtype=np.int64)
    _record("scatter_rows")
    out = np.zeros((num_rows, updates.shape[1]), dtype=np.float64)
    out[idx] = updates.data if isinstance(updates, Tensor) else updates
    return Tensor(out)


def straight_through(x, values):
    """A tensor holding `values` exactly, whose gradient passes to `x` unchanged.

    This is the straight-through estimator used by the quantizers: the
    forward value is the (non-differentiable) replacement, the backward
    treats the replacement as identity.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != x.shape:
        raise DimensionError(f"straight_through: values {values.shape} vs input {x.shape}")
    out = _make(values.copy(), (x,), "straight_through")
    if out.requires_grad:
        out._backward = lambda g: x._accumulate(g)
    return out


def one_hot(indices, num_classes):
    """One-hot rows as a constant tensor."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    out = np.zeros((idx.size, num_classes), dtype=np.float64)
    out[np.arange(idx.size), idx] = 1.0
    return Tensor(out)
