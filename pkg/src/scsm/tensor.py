"""Dense tensors with reverse-mode automatic differentiation.

Storage is plain numpy. Every operation returns a new Tensor that records
its parent nodes and a backward closure; calling .backward() on a scalar
loss walks the graph once in reverse topological order and accumulates
gradients into the leaves. float64 is the default element type, float32 is
available through set_default_dtype or per-tensor dtype arguments.

The op vocabulary is deliberately small and closed: the linear maps and
activations the state-space blocks need, the two resampling ops, the fused
selective scan (built on make_node from the kernel module), and a fused
cross-entropy head loss. Nothing mutates a tensor in place; parameter
updates happen outside the graph by writing .data.
"""

import contextlib

import numpy as np


class DimensionError(ValueError):
    """Shape or rank mismatch between operands."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf, which is an error, not a value."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return np.dtype(_DEFAULT_DTYPE)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation paths)."""
    global _GRAD_ENABLED
    keep = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = keep


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
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

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        # buffer is "zero" again: None reads as zero until the next backward
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # convenience arithmetic; scalars and ndarrays act as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"


def make_node(data, parents, backward, op):
    """Wrap an op result. Finite check runs here for every operation; the
    backward closure is dropped when recording is off or no parent needs
    gradients."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(p for p in parents if p.requires_grad) if needs else ()
    out._backward = backward if needs else None
    out._op = op
    return out


def accumulate(t, g):
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = +g
    else:
        t.grad = t.grad + g


def _reduce_to(g, shape):
    """Sum g down to the given broadcast-source shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _const(x, dtype):
    return np.asarray(x, dtype=dtype)


def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        try:
            data = a.data + b.data
        except ValueError:
            raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

        def bwd(g, a=a, b=b):
            accumulate(a, _reduce_to(g, a.shape))
            accumulate(b, _reduce_to(g, b.shape))

        return make_node(data, (a, b), bwd, "add")
    c = _const(b, a.data.dtype)
    try:
        data = a.data + c
    except ValueError:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {c.shape}") from None

    def bwd(g, a=a):
        accumulate(a, _reduce_to(g, a.shape))

    return make_node(data, (a,), bwd, "add")


def mul(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        try:
            data = a.data * b.data
        except ValueError:
            raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

        def bwd(g, a=a, b=b):
            accumulate(a, _reduce_to(g * b.data, a.shape))
            accumulate(b, _reduce_to(g * a.data, b.shape))

        return make_node(data, (a, b), bwd, "mul")
    c = _const(b, a.data.dtype)
    try:
        data = a.data * c
    except ValueError:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {c.shape}") from None

    def bwd(g, a=a, c=c):
        accumulate(a, _reduce_to(g * c, a.shape))

    return make_node(data, (a,), bwd, "mul")


def scale(a, s):
    s = float(s)
    data = a.data * s

    def bwd(g, a=a, s=s):
        accumulate(a, _reduce_to(g * s, a.shape))

    return make_node(data, (a,), bwd, "scale")


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from None

    def bwd(g, a=a, b=b):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            accumulate(a, _reduce_to(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            accumulate(b, _reduce_to(gb, b.shape))

    return make_node(data, (a, b), bwd, "matmul")


def relu(x):
    data = np.maximum(x.data, 0)

    def bwd(g, x=x, data=data):
        accumulate(x, g * (data > 0))

    return make_node(data, (x,), bwd, "relu")


def sigmoid(x):
    data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g, x=x, data=data):
        accumulate(x, g * data * (1.0 - data))

    return make_node(data, (x,), bwd, "sigmoid")


def silu(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * s

    def bwd(g, x=x, s=s):
        accumulate(x, g * s * (1.0 + x.data * (1.0 - s)))

    return make_node(data, (x,), bwd, "silu")


def exp(x):
    data = np.exp(x.data)

    def bwd(g, x=x, data=data):
        accumulate(x, g * data)

    return make_node(data, (x,), bwd, "exp")


def phi1(x):
    """(exp(z) - 1) / z, the first exponential-integrator phi function.

    Below |z| < 1e-6 both the value and the derivative switch to 4-term
    Taylor series; the exact branch uses expm1 so no precision is lost to
    cancellation just above the threshold.
    """
    z = x.data
    small = np.abs(z) < 1e-6
    zs = np.where(small, 0.0, z)
    exact = np.where(small, 1.0, np.expm1(zs) / np.where(zs == 0.0, 1.0, zs))
    series = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    data = np.where(small, series, exact)

    def bwd(g, x=x, z=z, small=small, zs=zs):
        znz = np.where(zs == 0.0, 1.0, zs)
        dexact = (np.exp(zs) * (zs - 1.0) + 1.0) / (znz * znz)
        dseries = 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
        accumulate(x, g * np.where(small, dseries, dexact))

    return make_node(data, (x,), bwd, "phi1")


def softmax_lastdim(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, x=x, data=data):
        inner = (g * data).sum(axis=-1, keepdims=True)
        accumulate(x, data * (g - inner))

    return make_node(data, (x,), bwd, "softmax_lastdim")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis; gamma and beta are 1-D of that length."""
    n = x.shape[-1]
    if n < 2:
        raise DimensionError(f"layer_norm needs a last axis of length >= 2, got {x.shape}")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    data = gamma.data * xhat + beta.data

    def bwd(g, x=x, gamma=gamma, beta=beta, xhat=xhat, ivar=ivar, n=n):
        if beta.requires_grad:
            accumulate(beta, g.reshape(-1, n).sum(axis=0))
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            accumulate(x, ivar * (gh - gh.mean(axis=-1, keepdims=True)
                                  - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))

    return make_node(data, (x, gamma, beta), bwd, "layer_norm")


def conv_1x1(x, w, b=None):
    """Pointwise channel map on [B, C, H, W]; w is [C_out, C], b is [C_out]."""
    if x.ndim != 4 or w.ndim != 2:
        raise DimensionError(f"conv_1x1 expects 4-D input and 2-D weight, got {x.shape}, {w.shape}")
    bsz, c, h, wd = x.shape
    if w.shape[1] != c:
        raise DimensionError(f"conv_1x1: weight {w.shape} does not match {c} input channels")
    flat = x.data.reshape(bsz, c, h * wd)
    out = w.data @ flat
    if b is not None:
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv_1x1: bias {b.shape} does not match {w.shape[0]} outputs")
        out = out + b.data[:, None]
    data = out.reshape(bsz, w.shape[0], h, wd)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g, x=x, w=w, b=b, flat=flat, bsz=bsz, c=c, h=h, wd=wd):
        gf = g.reshape(bsz, -1, h * wd)
        if x.requires_grad:
            accumulate(x, (w.data.T @ gf).reshape(bsz, c, h, wd))
        if w.requires_grad:
            accumulate(w, np.einsum("bof,bcf->oc", gf, flat))
        if b is not None and b.requires_grad:
            accumulate(b, gf.sum(axis=(0, 2)))

    return make_node(data, parents, bwd, "conv_1x1")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation on [B, C, H, W]; w is [O, C, kh, kw]."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    bsz, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"conv2d: weight {w.shape} does not match {c} input channels")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {w.shape} too large for padded input {xp.shape}")
    out = np.zeros((bsz, o, ho * wo), dtype=x.data.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
            out += w.data[:, :, u, v] @ xs.reshape(bsz, c, ho * wo)
    if b is not None:
        if b.shape != (o,):
            raise DimensionError(f"conv2d: bias {b.shape} does not match {o} outputs")
        out = out + b.data[:, None]
    data = out.reshape(bsz, o, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g, x=x, w=w, b=b, xp=xp, stride=stride, padding=padding,
            bsz=bsz, c=c, h=h, wd=wd, o=o, kh=kh, kw=kw, ho=ho, wo=wo):
        gf = g.reshape(bsz, o, ho * wo)
        if b is not None and b.requires_grad:
            accumulate(b, gf.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for u in range(kh):
                for v in range(kw):
                    xs = xp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
                    gw[:, :, u, v] = np.einsum("bof,bcf->oc", gf, xs.reshape(bsz, c, ho * wo))
            accumulate(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gs = (w.data[:, :, u, v].T @ gf).reshape(bsz, c, ho, wo)
                    gxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += gs
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
            accumulate(x, gxp)

    return make_node(data, parents, bwd, "conv2d")


def conv1d_depthwise_seq(x, kernel):
    """Causal depthwise convolution along the sequence axis of [B, L, D].

    kernel is [D, k]; the input is left-padded with k-1 zeros so position t
    sees positions <= t only, and the last kernel tap aligns with t (an
    impulse reproduces the kernel reversed).
    """
    if x.ndim != 3 or kernel.ndim != 2:
        raise DimensionError(
            f"conv1d_depthwise_seq expects [B, L, D] and [D, k], got {x.shape}, {kernel.shape}")
    bsz, length, d = x.shape
    dk, k = kernel.shape
    if dk != d:
        raise DimensionError(f"conv1d_depthwise_seq: kernel {kernel.shape} vs {d} feature dims")
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    data = np.zeros_like(x.data)
    for j in range(k):
        data += kernel.data[:, j] * xp[:, j:j + length, :]

    def bwd(g, x=x, kernel=kernel, xp=xp, length=length, k=k):
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for j in range(k):
                gk[:, j] = np.einsum("bld,bld->d", g, xp[:, j:j + length, :])
            accumulate(kernel, gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + length, :] += g * kernel.data[:, j]
            accumulate(x, gxp[:, k - 1:, :])

    return make_node(data, (x, kernel), bwd, "conv1d_depthwise_seq")


def _pool_edges(n, p):
    # contiguous non-overlapping partition; equal bins when p divides n
    return [(i * n) // p for i in range(p + 1)]


def adaptive_avg_pool2d(x, out_hw):
    """Average over a p_h x p_w partition of the spatial axes of [B, C, H, W]."""
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d expects 4-D input, got {x.shape}")
    ph, pw = out_hw
    bsz, c, h, w = x.shape
    if ph < 1 or pw < 1 or ph > h or pw > w:
        raise DimensionError(f"adaptive_avg_pool2d: target {out_hw} invalid for input {x.shape}")
    re = _pool_edges(h, ph)
    ce = _pool_edges(w, pw)
    data = np.empty((bsz, c, ph, pw), dtype=x.data.dtype)
    for i in range(ph):
        for j in range(pw):
            data[:, :, i, j] = x.data[:, :, re[i]:re[i + 1], ce[j]:ce[j + 1]].mean(axis=(2, 3))

    def bwd(g, x=x, re=re, ce=ce, ph=ph, pw=pw):
        gx = np.zeros_like(x.data)
        for i in range(ph):
            for j in range(pw):
                area = (re[i + 1] - re[i]) * (ce[j + 1] - ce[j])
                gx[:, :, re[i]:re[i + 1], ce[j]:ce[j + 1]] += (g[:, :, i, j] / area)[:, :, None, None]
        accumulate(x, gx)

    return make_node(data, (x,), bwd, "adaptive_avg_pool2d")


def upsample_nearest(x, out_hw):
    """Nearest-neighbor resize of [B, C, h, w] to the given spatial size."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects 4-D input, got {x.shape}")
    ho, wo = out_hw
    bsz, c, h, w = x.shape
    if ho < h or wo < w or ho < 1 or wo < 1:
        raise DimensionError(f"upsample_nearest: target {out_hw} below input {x.shape}")
    rows = (np.arange(ho) * h) // ho
    cols = (np.arange(wo) * w) // wo
    data = x.data[:, :, rows[:, None], cols[None, :]]

    def bwd(g, x=x, rows=rows, cols=cols, h=h, w=w, ho=ho, wo=wo):
        if ho % h == 0 and wo % w == 0:
            fh, fw = ho // h, wo // w
            gx = g.reshape(g.shape[0], g.shape[1], h, fh, w, fw).sum(axis=(3, 5))
        else:
            gperm = np.ascontiguousarray(np.moveaxis(g, (2, 3), (0, 1)))
            gxp = np.zeros((h, w) + g.shape[:2], dtype=g.dtype)
            np.add.at(gxp, (rows[:, None], cols[None, :]), gperm)
            gx = np.moveaxis(gxp, (0, 1), (2, 3))
        accumulate(x, gx)

    return make_node(data, (x,), bwd, "upsample_nearest")


def sum_(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g, x=x, axis=axis, keepdims=keepdims):
        if axis is None:
            accumulate(x, np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(x, np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True))

    return make_node(np.asarray(data), (x,), bwd, "sum")


def mean_(x, axis=None, keepdims=False):
    data = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for a in axes:
            count *= x.shape[a]

    def bwd(g, x=x, axis=axis, keepdims=keepdims, count=count):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(x, np.broadcast_to(g / count, x.shape).astype(x.data.dtype, copy=True))

    return make_node(np.asarray(data), (x,), bwd, "mean")


def reshape(x, shape):
    data = x.data.reshape(shape)

    def bwd(g, x=x):
        accumulate(x, g.reshape(x.shape))

    return make_node(data, (x,), bwd, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def bwd(g, x=x, inv=inv):
        accumulate(x, np.transpose(g, inv))

    return make_node(data, (x,), bwd, "transpose")


def concat(tensors, axis):
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, tensors=tensors, offsets=offsets, axis=axis):
        sl = [slice(None)] * g.ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return make_node(data, tensors, bwd, "concat")


def cross_entropy_logits(logits, labels):
    """Mean cross-entropy of [B, n] logits against integer labels [B]."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_logits expects [B, n] logits, got {logits.shape}")
    labels = np.asarray(labels)
    bsz, n = logits.shape
    if labels.shape != (bsz,):
        raise DimensionError(f"cross_entropy_logits: labels {labels.shape} vs batch {bsz}")
    if labels.min() < 0 or labels.max() >= n:
        raise DimensionError(f"cross_entropy_logits: labels out of range for {n} classes")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=-1, keepdims=True)
    probs = e / se
    lse = m[:, 0] + np.log(se[:, 0])
    data = np.asarray((lse - z[np.arange(bsz), labels]).mean())

    def bwd(g, logits=logits, probs=probs, labels=labels, bsz=bsz):
        gz = probs.copy()
        gz[np.arange(bsz), labels] -= 1.0
        accumulate(logits, gz * (g / bsz))

    return make_node(data, (logits,), bwd, "cross_entropy_logits")
