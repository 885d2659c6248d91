"""Channel state modeling: treat the channel axis as a causal sequence and
run a selective state-space recurrence along it.

Pipeline, applied to a patch sequence F [S, B, C_e] with S = H*W square:
permute so channels become the sequence axis, pool each channel's grid to
p x p and flatten to length P, layer-normalize over P, project to the inner
width D twice (data path X and gate path Z), derive per-step input/output
maps from X, zero-order-hold the diagonal state system, run a causal
depthwise conv plus SiLU on X, scan, gate with SiLU(Z), project back to P,
restore the grid by nearest upsampling, and add the residual.

The output projection starts at zero, so a fresh block is the identity.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import ssm
from . import tensor as T
from .params import uniform_init, zeros_init
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class CsmConfig:
    p: int = 8
    d: int = 0            # inner width; 0 means 2 * p * p
    conv_k: int = 4
    square_input: bool = False
    dt_reading: str = "spectral_radius"
    a_trainable: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise DimensionError(f"csm config: pool size {self.p} must be >= 1")
        if self.conv_k < 1:
            raise DimensionError(f"csm config: conv width {self.conv_k} must be >= 1")

    @property
    def pool_len(self):
        return self.p * self.p

    @property
    def inner(self):
        return self.d if self.d else 2 * self.pool_len


@dataclass
class CsmWeights:
    gamma: Tensor        # [P]
    beta: Tensor         # [P]
    w_x: Tensor          # [P, D]
    b_x: Tensor          # [D]
    w_z: Tensor          # [P, D]
    b_z: Tensor          # [D]
    w_b: Tensor          # [D, D], bias-free input-map projection
    w_c: Tensor          # [D, D], bias-free output-map projection
    conv_kernel: Tensor  # [D, conv_k]
    w_out: Tensor        # [D, P], zero at init
    b_out: Tensor        # [P], zero at init
    log_neg_a: Tensor    # [D]; the diagonal is -exp(log_neg_a)
    dt: float            # fixed step captured at init


def init_csm(cfg, rng):
    pool, inner = cfg.pool_len, cfg.inner
    a0 = ssm.s4d_real_init(inner)
    kernel = np.zeros((inner, cfg.conv_k))
    kernel[:, -1] = 1.0  # identity tap: the conv starts as a pass-through
    return CsmWeights(
        gamma=Tensor(np.ones(pool), requires_grad=True),
        beta=zeros_init((pool,)),
        w_x=uniform_init(rng, (pool, inner), pool),
        b_x=zeros_init((inner,)),
        w_z=uniform_init(rng, (pool, inner), pool),
        b_z=zeros_init((inner,)),
        w_b=uniform_init(rng, (inner, inner), inner),
        w_c=uniform_init(rng, (inner, inner), inner),
        conv_kernel=Tensor(kernel, requires_grad=True),
        w_out=zeros_init((inner, pool)),
        b_out=zeros_init((pool,)),
        log_neg_a=Tensor(np.log(-a0), requires_grad=cfg.a_trainable),
        dt=ssm.compute_dt(a0, cfg.dt_reading),
    )


def _grid_side(s, p):
    h = math.isqrt(s)
    if h * h != s:
        raise DimensionError(
            f"channel-sequence formation: S={s} positions do not form a square grid")
    if h < p:
        raise DimensionError(
            f"channel-sequence formation: grid side {h} is below pool size {p}")
    return h


def channels_as_sequence(f, p):
    """[S, B, C_e] -> ([B, C_e, P], grid side). Channels become the sequence
    axis; each channel's H x W grid is pooled to p x p and flattened."""
    if f.ndim != 3:
        raise DimensionError(f"channel-sequence formation: expected [S, B, C], got {f.shape}")
    s, b, c = f.shape
    h = _grid_side(s, p)
    grid = T.reshape(T.transpose(f, (1, 2, 0)), (b, c, h, h))
    pooled = T.adaptive_avg_pool2d(grid, (p, p))
    return T.reshape(pooled, (b, c, p * p)), h


def sequence_to_channels(y, h, p):
    """[B, C_e, P] -> [S, B, C_e]: unflatten to p x p, nearest-upsample back
    to the grid, flatten positions."""
    b, c, pool = y.shape
    if pool != p * p:
        raise DimensionError(f"grid restoration: pooled length {pool} is not {p}x{p}")
    up = T.upsample_nearest(T.reshape(y, (b, c, p, p)), (h, h))
    return T.transpose(T.reshape(up, (b, c, h * h)), (2, 0, 1))


def _check_weights(w, cfg):
    pool, inner = cfg.pool_len, cfg.inner
    if w.w_x.shape != (pool, inner) or w.w_out.shape != (inner, pool):
        raise DimensionError(
            f"projection weights {w.w_x.shape}/{w.w_out.shape} do not match "
            f"pool length {pool} and inner width {inner}")
    if w.conv_kernel.shape != (inner, cfg.conv_k):
        raise DimensionError(
            f"conv kernel {w.conv_kernel.shape} does not match ({inner}, {cfg.conv_k})")


def _inner_pipeline(t_norm, w, cfg, scan_variant, workers):
    """Everything between the normalized channel sequence [B, C_e, P] and the
    pre-restoration output [B, C_e, P]."""
    x = T.add(T.matmul(t_norm, w.w_x), w.b_x)
    z = T.add(T.matmul(t_norm, w.w_z), w.b_z)
    b_proj = T.matmul(x, w.w_b)
    c_proj = T.matmul(x, w.w_c)
    a = T.scale(T.exp(w.log_neg_a), -1.0)
    disc = ssm.zoh_discretize(a, w.dt, b_proj)
    xc = T.silu(T.conv1d_depthwise_seq(x, w.conv_kernel))
    if cfg.square_input:
        xc = T.mul(xc, xc)
    if scan_variant == "parallel":
        y = ssm.ssm_scan_parallel(disc, c_proj, xc, workers=workers)
    elif scan_variant == "sequential":
        y = ssm.ssm_scan_sequential(disc, c_proj, xc)
    else:
        raise ValueError(f"unknown scan variant {scan_variant!r}")
    y = T.mul(y, T.silu(z))
    return T.add(T.matmul(y, w.w_out), w.b_out)


def csm_forward(f, w, cfg, scan_variant="sequential", workers=None):
    """Run the channel-sequence block over a patch sequence [S, B, C_e] and
    return the same shape, residual included."""
    _check_weights(w, cfg)
    t_seq, h = channels_as_sequence(f, cfg.p)
    t_norm = T.layer_norm(t_seq, w.gamma, w.beta)
    y = _inner_pipeline(t_norm, w, cfg, scan_variant, workers)
    return T.add(sequence_to_channels(y, h, cfg.p), f)


def channel_sequence_sensitivity(t_in, w, cfg, scan_variant="sequential"):
    """Influence matrix of the inner pipeline over the channel sequence.

    t_in is one channel-sequence instance [C_e, P] (the pooled representation
    before normalization). Entry (i, j) is the Frobenius norm of the Jacobian
    block d y_i / d t_j, assembled row by row with reverse sweeps. Causality
    makes every entry with j > i exactly zero.
    """
    _check_weights(w, cfg)
    t_in = np.asarray(t_in, dtype=np.float64)
    if t_in.ndim != 2 or t_in.shape[1] != cfg.pool_len:
        raise DimensionError(
            f"sensitivity: expected [C_e, {cfg.pool_len}] channel sequence, got {t_in.shape}")
    c_e, pool = t_in.shape
    sq = np.zeros((c_e, c_e))
    for i in range(c_e):
        for q in range(pool):
            src = Tensor(t_in[None], requires_grad=True)
            t_norm = T.layer_norm(src, w.gamma, w.beta)
            y = _inner_pipeline(t_norm, w, cfg, scan_variant, None)
            pick = np.zeros((1, c_e, pool))
            pick[0, i, q] = 1.0
            T.sum_(T.mul(y, pick)).backward()
            sq[i] += (src.grad[0] ** 2).sum(axis=1)
    return np.sqrt(sq)
