"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: numpy arrays wrapped in :class:`Tensor` nodes
that remember their parents and a backward closure.  ``Tensor.backward()``
walks the recorded graph once in reverse topological order and accumulates
gradients into every reachable tensor that ``requires_grad``.  Parameters are
leaf tensors with a stable string id; anything a loss never touched keeps
``grad=None`` (absence, not zero), which downstream gradient balancing relies
on.

Convolutions are stride-1 only; all downsampling in the model zoo goes
through average pooling, which keeps every adjoint a handful of slice adds
and matmuls.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class NonFiniteError(ArithmeticError):
    """A forward pass produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar; accumulates into ``.grad`` of leaves."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        # Iterative post-order DFS; graphs get deep enough that recursion
        # would hit the interpreter limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is not None:
                    node._backward(node.grad)
                node.grad = None  # free intermediates; leaves keep theirs

    def zero_grad(self):
        self.grad = None

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Trainable leaf tensor with a stable hierarchical id."""

    __slots__ = ("id",)

    def __init__(self, id: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.id = id

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.data.shape})"


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {what}")
    return t


# -- graph construction helpers ------------------------------------------


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data)
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw)


def neg(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def texp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bw(g):
        _accum(a, g * data)

    return _make(data, (a,), bw)


def tlog(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def tsqrt(a):
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / data)

    return _make(data, (a,), bw)


def tabs(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw)


def sigmoid(a):
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), bw)


def softplus(a):
    a = _as_tensor(a)
    data = np.logaddexp(0.0, a.data)

    def bw(g):
        _accum(a, g / (1.0 + np.exp(-a.data)))

    return _make(data, (a,), bw)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def leaky_relu(a, alpha=0.2):
    a = _as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, alpha * a.data)

    def bw(g):
        _accum(a, np.where(mask, g, alpha * g))

    return _make(data, (a,), bw)


# -- reductions and shape ops ----------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def broadcast_to(a, shape):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        off = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + s)
            _accum(t, g[tuple(idx)])
            off += s

    return _make(data, tuple(tensors), bw)


def getitem(a, key):
    a = _as_tensor(a)
    data = a.data[key]
    if isinstance(data, np.ndarray):
        data = data.copy()

    def bw(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        _accum(a, buf)

    return _make(data, (a,), bw)


def pad(a, pad_width, value=0.0):
    """Constant-pad; ``pad_width`` follows numpy's ((before, after), ...) form."""
    a = _as_tensor(a)
    data = np.pad(a.data, pad_width, constant_values=value)
    crop = tuple(slice(b, b + s) for (b, _after), s in zip(pad_width, a.data.shape))

    def bw(g):
        _accum(a, g[crop])

    return _make(data, (a,), bw)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data @ b.data

    def bw(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif a.data.ndim == 2 and b.data.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, np.outer(a.data, g))
        else:
            raise ValueError(f"matmul backward unsupported for ndims {a.data.ndim}, {b.data.ndim}")

    return _make(data, (a, b), bw)


# -- softmax family ----------------------------------------------------------


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    data = a.data - lse

    def bw(g):
        _accum(a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), bw)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, data * (g - (g * data).sum(axis=axis, keepdims=True)))

    return _make(data, (a,), bw)


# -- conv / pool / resample ---------------------------------------------------


def _pad_same(x, kh, kw=None):
    if kw is None:
        return np.pad(x, ((0, 0), (kh // 2, kh // 2)))
    return np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))


def conv1d(x, w, b=None, padding="same"):
    """Stride-1 1D convolution. x: (Cin, L); w: (Cout, Cin, k); b: (Cout,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    cout, cin, k = w.data.shape
    if x.data.shape[0] != cin:
        raise ValueError(f"conv1d channel mismatch: input {x.data.shape[0]}, weight {cin}")
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same-padded conv requires odd kernel")
        xp = _pad_same(x.data, k)
    elif padding == "valid":
        xp = x.data
    else:
        raise ValueError(f"unknown padding {padding!r}")
    lout = xp.shape[1] - k + 1
    if lout < 1:
        raise ValueError("conv1d input narrower than kernel")
    wm = w.data
    out = np.zeros((cout, lout), dtype=x.data.dtype)
    for dk in range(k):
        out += wm[:, :, dk] @ xp[:, dk:dk + lout]
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data[:, None]
        parents.append(b)

    def bw(g):
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for dk in range(k):
                gw[:, :, dk] = g @ xp[:, dk:dk + lout].T
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for dk in range(k):
                gxp[:, dk:dk + lout] += wm[:, :, dk].T @ g
            if padding == "same":
                p = k // 2
                gxp = gxp[:, p:p + x.data.shape[1]]
            _accum(x, gxp)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=1))

    return _make(out, tuple(parents), bw)


def conv2d(x, w, b=None, padding="same"):
    """Stride-1 2D convolution. x: (Cin, H, W); w: (Cout, Cin, kh, kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    cout, cin, kh, kw = w.data.shape
    if x.data.shape[0] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape[0]}, weight {cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same-padded conv requires odd kernel")
        xp = _pad_same(x.data, kh, kw)
    elif padding == "valid":
        xp = x.data
    else:
        raise ValueError(f"unknown padding {padding!r}")
    hout = xp.shape[1] - kh + 1
    wout = xp.shape[2] - kw + 1
    if hout < 1 or wout < 1:
        raise ValueError("conv2d input smaller than kernel")
    wm = w.data
    hw = hout * wout
    out = np.zeros((cout, hw), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            tap = xp[:, di:di + hout, dj:dj + wout].reshape(cin, hw)
            out += wm[:, :, di, dj] @ tap
    out = out.reshape(cout, hout, wout)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data[:, None, None]
        parents.append(b)

    def bw(g):
        gf = g.reshape(cout, hw)
        if w.requires_grad:
            gw = np.empty_like(wm)
            for di in range(kh):
                for dj in range(kw):
                    tap = xp[:, di:di + hout, dj:dj + wout].reshape(cin, hw)
                    gw[:, :, di, dj] = gf @ tap.T
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + hout, dj:dj + wout] += (wm[:, :, di, dj].T @ gf).reshape(cin, hout, wout)
            if padding == "same":
                ph, pw = kh // 2, kw // 2
                gxp = gxp[:, ph:ph + x.data.shape[1], pw:pw + x.data.shape[2]]
            _accum(x, gxp)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(1, 2)))

    return _make(out, tuple(parents), bw)


def avg_pool(x, v_factor: int, h_factor: int = 1):
    """Non-overlapping average pool over the trailing (two) spatial dims."""
    x = _as_tensor(x)
    if v_factor < 1 or h_factor < 1:
        raise ValueError("pool factors must be >= 1")
    d = x.data
    if d.ndim == 2:
        h, w = d.shape
        if h % v_factor or w % h_factor:
            raise ValueError(f"pool factors {(v_factor, h_factor)} do not divide shape {d.shape}")
        data = d.reshape(h // v_factor, v_factor, w // h_factor, h_factor).mean(axis=(1, 3))

        def bw(g):
            gg = np.broadcast_to(
                g[:, None, :, None], (h // v_factor, v_factor, w // h_factor, h_factor)
            ).reshape(h, w) / (v_factor * h_factor)
            _accum(x, gg.astype(d.dtype, copy=False).copy())

        return _make(data, (x,), bw)
    if d.ndim == 3:
        c, h, w = d.shape
        if h % v_factor or w % h_factor:
            raise ValueError(f"pool factors {(v_factor, h_factor)} do not divide shape {d.shape}")
        data = d.reshape(c, h // v_factor, v_factor, w // h_factor, h_factor).mean(axis=(2, 4))

        def bw(g):
            gg = np.broadcast_to(
                g[:, :, None, :, None], (c, h // v_factor, v_factor, w // h_factor, h_factor)
            ).reshape(c, h, w) / (v_factor * h_factor)
            _accum(x, gg.astype(d.dtype, copy=False).copy())

        return _make(data, (x,), bw)
    raise ValueError(f"avg_pool expects rank 2 or 3, got {d.ndim}")


def upsample_nearest(x, v_factor: int, h_factor: int):
    """Nearest-neighbor upsample of the trailing two dims: out[.., i, j] = x[.., i//v, j//h]."""
    x = _as_tensor(x)
    if v_factor < 1 or h_factor < 1:
        raise ValueError("upsample factors must be >= 1")
    data = np.repeat(np.repeat(x.data, v_factor, axis=-2), h_factor, axis=-1)

    def bw(g):
        s = g.shape
        lead = s[:-2]
        h, w = x.data.shape[-2], x.data.shape[-1]
        gg = g.reshape(*lead, h, v_factor, w, h_factor).sum(axis=(-3, -1))
        _accum(x, gg)

    return _make(data, (x,), bw)


_BLUR_K = np.array([1.0, 2.0, 1.0]) / 4.0


def _blur_data(d: np.ndarray) -> np.ndarray:
    # separable 1-2-1 with zero padding, per channel
    p = np.pad(d, ((0, 0), (1, 1), (0, 0)))
    v = p[:, :-2] * _BLUR_K[0] + p[:, 1:-1] * _BLUR_K[1] + p[:, 2:] * _BLUR_K[2]
    p = np.pad(v, ((0, 0), (0, 0), (1, 1)))
    return p[:, :, :-2] * _BLUR_K[0] + p[:, :, 1:-1] * _BLUR_K[1] + p[:, :, 2:] * _BLUR_K[2]


def blur(x):
    """Fixed normalized 1-2-1 (outer product) blur, same padding, per channel."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ValueError("blur expects (C, H, W)")

    def bw(g):
        # symmetric kernel + zero padding => operator is self-adjoint
        _accum(x, _blur_data(g))

    return _make(_blur_data(x.data).astype(x.data.dtype, copy=False), (x,), bw)


def adain(features, scale, shift, eps: float = 1e-5):
    """Adaptive instance normalization.

    Each channel is normalized to zero mean / unit population std over its
    spatial extent, then affinely transformed: ``shift[c] + scale[c] * norm``.
    Accepts (C, H, W) or (C, L) features.
    """
    features = _as_tensor(features)
    scale, shift = _as_tensor(scale, features), _as_tensor(shift, features)
    if eps <= 0:
        raise ValueError("adain eps must be > 0")
    c = features.data.shape[0]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ValueError(
            f"adain channel mismatch: features have {c} channels, "
            f"scale {scale.data.shape}, shift {shift.data.shape}"
        )
    axes = tuple(range(1, features.data.ndim))
    mu = tmean(features, axis=axes, keepdims=True)
    centered = features - mu
    var = tmean(centered * centered, axis=axes, keepdims=True)
    norm = centered / tsqrt(var + eps)
    return reshape(shift, shift.data.shape + (1,) * (features.data.ndim - 1)) + \
        reshape(scale, scale.data.shape + (1,) * (features.data.ndim - 1)) * norm


def global_avg_pool(x):
    """Mean over all spatial dims; (C, ...) -> (C,)."""
    x = _as_tensor(x)
    return tmean(x, axis=tuple(range(1, x.data.ndim)))


# -- loss helpers -------------------------------------------------------------


def mse_loss(a, b):
    d = sub(a, b)
    return tmean(d * d)


def l1_loss(a, b):
    return tmean(tabs(sub(a, b)))


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Deterministic child generator for (seed, stream...)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(s) for s in stream)))
