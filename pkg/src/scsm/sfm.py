"""Spatial feature modeling: compress the channel axis with a pointwise
convolution, flatten the spatial grid into a patch sequence, and mix the
positions with multi-head self-attention.

There is no positional encoding, so the whole operator commutes with any
permutation of the spatial positions. Query/key/value projections are
shared across positions (one triple per head).
"""

from dataclasses import dataclass

from . import tensor as T
from .params import uniform_init, zeros_init
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class SfmConfig:
    c_in: int
    c_e: int
    heads: int = 2
    scale_scores: bool = True

    def __post_init__(self):
        if self.c_e < 1 or self.c_in < self.c_e:
            raise DimensionError(
                f"sfm config: compressed width {self.c_e} must be in [1, {self.c_in}]")
        if self.heads < 1 or self.c_e % self.heads:
            raise DimensionError(
                f"sfm config: heads={self.heads} must divide compressed width {self.c_e}")

    @property
    def d_head(self):
        return self.c_e // self.heads


def default_sfm_config(c_in, ratio=4, heads=2, scale_scores=True):
    return SfmConfig(c_in=c_in, c_e=max(1, c_in // ratio), heads=heads,
                     scale_scores=scale_scores)


@dataclass
class SfmWeights:
    compress_w: Tensor          # [C_e, C]
    compress_b: Tensor          # [C_e]
    wq: tuple                   # per head, [C_e, d_h]
    wk: tuple
    wv: tuple
    w_m: Tensor                 # [C_e, C_e] head aggregation
    b_m: Tensor                 # [C_e]


def init_sfm(cfg, rng):
    dh = cfg.d_head
    return SfmWeights(
        compress_w=uniform_init(rng, (cfg.c_e, cfg.c_in), cfg.c_in),
        compress_b=zeros_init((cfg.c_e,)),
        wq=tuple(uniform_init(rng, (cfg.c_e, dh), cfg.c_e) for _ in range(cfg.heads)),
        wk=tuple(uniform_init(rng, (cfg.c_e, dh), cfg.c_e) for _ in range(cfg.heads)),
        wv=tuple(uniform_init(rng, (cfg.c_e, dh), cfg.c_e) for _ in range(cfg.heads)),
        w_m=uniform_init(rng, (cfg.c_e, cfg.c_e), cfg.c_e),
        b_m=zeros_init((cfg.c_e,)),
    )


def to_patch_sequence(x):
    """[B, C, H, W] -> [S, B, C] with S = H*W in row-major order."""
    if x.ndim != 4:
        raise DimensionError(f"to_patch_sequence expects 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    return T.transpose(T.reshape(x, (b, c, h * w)), (2, 0, 1))


def from_patch_sequence(f, hw):
    """[S, B, C] -> [B, C, H, W]; S must equal H*W."""
    h, w = hw
    if f.ndim != 3 or f.shape[0] != h * w:
        raise DimensionError(f"from_patch_sequence: {f.shape} does not fold to grid {hw}")
    s, b, c = f.shape
    return T.reshape(T.transpose(f, (1, 2, 0)), (b, c, h, w))


def attention_heads(f, w, cfg):
    """Run the heads over a patch sequence [S, B, C_e]; returns the
    aggregated [S, B, C_e]."""
    if f.ndim != 3 or f.shape[-1] != cfg.c_e:
        raise DimensionError(f"attention: sequence {f.shape} vs compressed width {cfg.c_e}")
    outs = []
    for m in range(cfg.heads):
        q = T.transpose(T.matmul(f, w.wq[m]), (1, 0, 2))     # [B, S, d_h]
        k = T.transpose(T.matmul(f, w.wk[m]), (1, 0, 2))
        v = T.transpose(T.matmul(f, w.wv[m]), (1, 0, 2))
        scores = T.matmul(q, T.transpose(k, (0, 2, 1)))      # [B, S, S]
        if cfg.scale_scores:
            scores = T.scale(scores, 1.0 / cfg.d_head ** 0.5)
        attn = T.softmax_lastdim(scores)                     # over source positions
        outs.append(T.transpose(T.matmul(attn, v), (1, 0, 2)))
    merged = outs[0] if len(outs) == 1 else T.concat(outs, axis=2)
    return T.add(T.matmul(merged, w.w_m), w.b_m)


def sfm_forward(x, w, cfg):
    """Compress [B, C, H, W] to C_e channels and attend over the S = H*W
    patch sequence; returns [S, B, C_e]."""
    if x.ndim != 4 or x.shape[1] != cfg.c_in:
        raise DimensionError(f"sfm: input {x.shape} vs configured {cfg.c_in} channels")
    f = to_patch_sequence(T.conv_1x1(x, w.compress_w, w.compress_b))
    return attention_heads(f, w, cfg)
