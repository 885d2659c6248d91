"""Diagonal state-space kernels: HiPPO-LegS initialization, zero-order-hold
discretization, and the selective scan in sequential and parallel forms.

The scan computes, independently per feature dim d,

    h_t = A_d * h_{t-1} + B_{t,d} * x_{t,d},   h_0 = 0
    y_t = c_{t,d} * h_t

The parallel form folds the same recurrence with a Blelloch up/down-sweep
over the associative composition of affine maps (A2*A1, A2*b1 + b2), split
into descending power-of-two tiles with a sequential carry between tiles,
so its combination tree is fixed and results do not depend on worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor, accumulate, make_node


def hippo_legs(n):
    """Dense HiPPO-LegS state matrix, lower triangular, shape [n, n].

    Entry (i, k) is -sqrt(2i+1)*sqrt(2k+1) below the diagonal and -(i+1)
    on it. Returned as a plain float64 array; it seeds the diagonal init
    and is not itself a trainable object.
    """
    if n < 1:
        raise DimensionError(f"hippo_legs needs n >= 1, got {n}")
    a = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for k in range(i):
            a[i, k] = -np.sqrt(2.0 * i + 1.0) * np.sqrt(2.0 * k + 1.0)
        a[i, i] = -(i + 1.0)
    return a


def s4d_real_init(d):
    """Real diagonal init: the HiPPO-LegS diagonal, a_i = -(i+1)."""
    if d < 1:
        raise DimensionError(f"s4d_real_init needs d >= 1, got {d}")
    return -np.arange(1.0, d + 1.0)


def compute_dt(a, reading="spectral_radius"):
    """Step size 1/sqrt(rho) from the diagonal state matrix.

    reading selects which eigenvalue magnitude anchors rho: the default
    uses the largest |a_d| (spectral radius); "min_magnitude" uses the
    smallest.
    """
    a = np.asarray(a, dtype=np.float64)
    mags = np.abs(a)
    if a.size == 0 or np.any(mags == 0.0):
        raise DimensionError("compute_dt needs a nonempty, nonzero diagonal")
    if reading == "spectral_radius":
        rho = float(mags.max())
    elif reading == "min_magnitude":
        rho = float(mags.min())
    else:
        raise ValueError(f"unknown dt reading {reading!r}")
    return 1.0 / np.sqrt(rho)


def zoh_coeffs(a, dt):
    """Raw zero-order-hold coefficients (no graph): A_d = exp(dt*a) and the
    input factor dt*phi(dt*a) with phi(z) = (exp(z)-1)/z, series-guarded
    below |z| < 1e-6."""
    a = np.asarray(a, dtype=np.float64)
    z = dt * a
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    phi = np.where(small, 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0, np.expm1(zs) / zs)
    return np.exp(z), dt * phi


@dataclass
class Discretized:
    """Discrete-time coefficients: a_d is [D], b_d_t is [B, L, D]."""
    a_d: Tensor
    b_d_t: Tensor


def zoh_discretize(a, dt, b_t):
    """Graph-recorded zero-order hold of the diagonal system.

    a: Tensor [D] of (negative) diagonal entries; dt: fixed float step;
    b_t: Tensor [B, L, D] of per-step input maps. Gradients flow to both
    a and b_t; dt is a constant captured at initialization time.
    """
    if a.ndim != 1:
        raise DimensionError(f"zoh_discretize expects a diagonal [D], got {a.shape}")
    if b_t.ndim != 3 or b_t.shape[-1] != a.shape[0]:
        raise DimensionError(
            f"zoh_discretize: b_t {b_t.shape} does not match diagonal {a.shape}")
    z = T.scale(a, dt)
    a_d = T.exp(z)
    b_d_t = T.mul(b_t, T.scale(T.phi1(z), dt))
    return Discretized(a_d=a_d, b_d_t=b_d_t)


# ------------------------------------------------------------------ raw scans


def _h_sequential(a_d, bx):
    b, length, d = bx.shape
    h = np.empty_like(bx)
    cur = np.zeros((b, d), dtype=bx.dtype)
    for t in range(length):
        cur = a_d * cur + bx[:, t]
        h[:, t] = cur
    return h


# Tile width for the two-phase scan. Power of two, fixed at import time so
# the combination tree is identical regardless of input length or workers.
_TILE = 32


def _scan_tree(a_lvl, bv, out):
    """Pair-reduction affine prefix scan: out[:, t] = state after step t.

    Every step shares the multiplier a_lvl [D] (the recurrence here always
    applies one decay vector per level), so composing two adjacent steps
    keeps a single squared multiplier and a combined offset. The recursion
    scans the pairs, then fills even positions from the odd prefixes. Odd
    lengths peel their final element. bv is [B, n, D]; out must be a
    writable [B, n, D] view."""
    n = bv.shape[1]
    if n == 1:
        out[:, 0] = bv[:, 0]
        return
    half = n // 2
    b_even = np.ascontiguousarray(bv[:, 0 : 2 * half : 2])
    b_odd = bv[:, 1 : 2 * half : 2]
    pair = np.multiply(a_lvl, b_even)
    pair += b_odd
    h2 = np.empty_like(pair)
    _scan_tree(a_lvl * a_lvl, pair, h2)
    out[:, 1 : 2 * half : 2] = h2
    out[:, 0] = bv[:, 0]
    evens = np.multiply(a_lvl, h2[:, : half - 1])
    evens += b_even[:, 1:]
    out[:, 2 : 2 * half : 2] = evens
    if n & 1:
        out[:, n - 1] = a_lvl * out[:, n - 2] + bv[:, n - 1]


def _h_parallel_chunk(a_d, bx):
    """Two-phase tiled scan. Consumes bx as scratch; callers pass temporaries.

    Up sweep: one vectorized recurrence step at a time across all _TILE-wide
    tiles in lockstep, producing each tile's zero-start final state. Those
    per-tile offsets compose under the tile-level multiplier a_d**_TILE and
    are prefix-scanned by the pair tree. Down sweep: replay the lockstep
    recurrence seeded with each tile's exclusive carry, writing h directly.
    The remainder shorter than a tile runs the pair tree over descending
    power-of-two slices with the carry folded into each slice's first step."""
    b, length, d = bx.shape
    h = np.empty_like(bx)
    m = length // _TILE
    if m >= 2:
        body = bx[:, : m * _TILE].reshape(b, m, _TILE, d)
        hbody = h[:, : m * _TILE].reshape(b, m, _TILE, d)
        acc = body[:, :, 0].copy()
        for j in range(1, _TILE):
            acc *= a_d
            acc += body[:, :, j]
        carries = np.empty((b, m, d), dtype=bx.dtype)
        _scan_tree(a_d ** _TILE, acc, carries)
        acc = body[:, :, 0].copy()
        acc[:, 1:] += a_d * carries[:, :-1]
        hbody[:, :, 0] = acc
        for j in range(1, _TILE):
            acc *= a_d
            acc += body[:, :, j]
            hbody[:, :, j] = acc
        done = m * _TILE
    else:
        done = 0
    s, rem = done, length - done
    while rem:
        n = 1 << (rem.bit_length() - 1)
        if s:
            bx[:, s] += a_d * h[:, s - 1]
        _scan_tree(a_d, bx[:, s : s + n], h[:, s : s + n])
        s += n
        rem -= n
    return h


def _h_parallel(a_d, bx, workers=None):
    b = bx.shape[0]
    if not workers or workers <= 1 or b == 1:
        return _h_parallel_chunk(a_d, bx)
    workers = min(workers, b)
    h = np.empty_like(bx)
    bounds = [(i * b) // workers for i in range(workers + 1)]
    spans = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run(span):
        lo, hi = span
        h[lo:hi] = _h_parallel_chunk(a_d, bx[lo:hi])

    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        list(pool.map(run, spans))
    return h


# ---------------------------------------------------------------- graph ops


def _check_scan_args(disc, c_t, x):
    a_d, b_d_t = disc.a_d, disc.b_d_t
    if a_d.ndim != 1:
        raise DimensionError(f"scan: discrete diagonal must be [D], got {a_d.shape}")
    if x.ndim != 3 or x.shape[-1] != a_d.shape[0]:
        raise DimensionError(f"scan: input {x.shape} does not match diagonal {a_d.shape}")
    if b_d_t.shape != x.shape or c_t.shape != x.shape:
        raise DimensionError(
            f"scan: coefficient shapes {b_d_t.shape}/{c_t.shape} do not match input {x.shape}")
    if x.shape[1] < 1:
        raise DimensionError("scan: sequence length must be >= 1")


def _scan_node(disc, c_t, x, h, op):
    a_d, b_d_t = disc.a_d, disc.b_d_t
    y = c_t.data * h

    def bwd(g, a_d=a_d, b_d_t=b_d_t, c_t=c_t, x=x, h=h):
        if c_t.requires_grad:
            accumulate(c_t, g * h)
        need_a = a_d.requires_grad
        need_b = b_d_t.requires_grad
        need_x = x.requires_grad
        if not (need_a or need_b or need_x):
            return
        b, length, d = x.shape
        av = a_d.data
        lam = np.zeros((b, d), dtype=x.data.dtype)
        gb = np.empty_like(x.data) if need_b else None
        gx = np.empty_like(x.data) if need_x else None
        ga = np.zeros(d, dtype=x.data.dtype) if need_a else None
        for t in range(length - 1, -1, -1):
            lam = g[:, t] * c_t.data[:, t] + av * lam
            if need_b:
                gb[:, t] = lam * x.data[:, t]
            if need_x:
                gx[:, t] = lam * b_d_t.data[:, t]
            if need_a and t > 0:
                ga += (lam * h[:, t - 1]).sum(axis=0)
        if need_b:
            accumulate(b_d_t, gb)
        if need_x:
            accumulate(x, gx)
        if need_a:
            accumulate(a_d, ga)

    return make_node(y, (a_d, b_d_t, c_t, x), bwd, op)


def ssm_scan_sequential(disc, c_t, x):
    """Run the recurrence stepwise. x, c_t: [B, L, D]; returns y [B, L, D]."""
    _check_scan_args(disc, c_t, x)
    h = _h_sequential(disc.a_d.data, disc.b_d_t.data * x.data)
    return _scan_node(disc, c_t, x, h, "ssm_scan_sequential")


def ssm_scan_parallel(disc, c_t, x, workers=None):
    """Blelloch-scan form of ssm_scan_sequential; same contract, same
    gradients, results agree with the stepwise form to float64 round-off.
    workers > 1 splits the batch axis; the combination tree is unchanged."""
    _check_scan_args(disc, c_t, x)
    h = _h_parallel(disc.a_d.data, disc.b_d_t.data * x.data, workers=workers)
    return _scan_node(disc, c_t, x, h, "ssm_scan_parallel")


def benchmark(length=4096, d=64, batch=8, workers=4, repeats=3, seed=0):
    """Time both scan variants on one random instance; returns a dict with
    per-element wall times (ns), the max |difference|, and a checksum."""
    import time

    rng = np.random.default_rng(seed)
    a_d = Tensor(np.exp(-compute_dt(s4d_real_init(d)) * np.arange(1.0, d + 1.0)))
    disc = Discretized(a_d=a_d, b_d_t=Tensor(rng.normal(size=(batch, length, d))))
    c_t = Tensor(rng.normal(size=(batch, length, d)))
    x = Tensor(rng.normal(size=(batch, length, d)))
    elems = batch * length * d

    def clock(fn):
        best = None
        out = None
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            out = fn()
            dt_ns = time.perf_counter_ns() - t0
            best = dt_ns if best is None else min(best, dt_ns)
        return best, out

    with T.no_grad():
        seq_ns, y_seq = clock(lambda: ssm_scan_sequential(disc, c_t, x))
        par_ns, y_par = clock(lambda: ssm_scan_parallel(disc, c_t, x, workers=workers))
    gap = float(np.max(np.abs(y_seq.data - y_par.data)))
    return {
        "L": length, "D": d, "batch": batch, "workers": workers,
        "sequential_ns_per_element": seq_ns / elems,
        "parallel_ns_per_element": par_ns / elems,
        "sequential_ns": seq_ns, "parallel_ns": par_ns,
        "max_abs_gap": gap, "checksum": float(y_par.data.sum()),
    }
