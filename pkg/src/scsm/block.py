"""The residual spatial-channel block and the two-stage freeze policy.

A block wraps one backbone stage's feature map: attention over spatial
positions (optional), state-space modeling over the channel sequence
(optional), then a zero-initialized pointwise expansion back to the stage
width and a residual add. Both inner write-out maps start at zero, so every
variant is an exact identity at init and novel-stage training starts from
the base model's function.
"""

from dataclasses import dataclass

import numpy as np

from . import csm as csm_mod
from . import sfm as sfm_mod
from . import tensor as T
from .params import named_params, uniform_init, zeros_init
from .tensor import DimensionError, Tensor

VARIANTS = ("baseline", "sfm", "csm", "sfm_csm")


class PolicyViolationError(RuntimeError):
    """A parameter that the freeze policy pins moved (or was trainable)."""


@dataclass(frozen=True)
class ScsmConfig:
    variant: str
    c_in: int
    hw: int                      # stage grid side (square maps)
    c_e: int = 0                 # 0 means c_in // 4
    heads: int = 2
    scale_scores: bool = True
    p: int = 8
    d: int = 0                   # state width; 0 means twice the pooled length
    conv_k: int = 4
    square_input: bool = False
    dt_reading: str = "spectral_radius"
    a_trainable: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown block variant {self.variant!r}")

    @property
    def width(self):
        return self.c_e if self.c_e else max(1, self.c_in // 4)

    @property
    def use_sfm(self):
        return self.variant in ("sfm", "sfm_csm")

    @property
    def use_csm(self):
        return self.variant in ("csm", "sfm_csm")

    def sfm_config(self):
        return sfm_mod.SfmConfig(c_in=self.c_in, c_e=self.width, heads=self.heads,
                                 scale_scores=self.scale_scores)

    def csm_config(self):
        # clamp the pool so the stage grid satisfies side >= p
        return csm_mod.CsmConfig(p=min(self.p, self.hw), d=self.d,
                                 conv_k=self.conv_k,
                                 square_input=self.square_input,
                                 dt_reading=self.dt_reading,
                                 a_trainable=self.a_trainable)


@dataclass
class ScsmWeights:
    sfm: object          # SfmWeights or None
    compress_w: object   # used by the csm-only variant (no attention path)
    compress_b: object
    csm: object          # CsmWeights or None
    expand_w: Tensor     # [C, C_e], zero at init
    expand_b: Tensor     # [C]


def init_scsm(cfg, rng):
    if cfg.variant == "baseline":
        raise ValueError("baseline variant has no block weights")
    use_compress_only = cfg.use_csm and not cfg.use_sfm
    return ScsmWeights(
        sfm=sfm_mod.init_sfm(cfg.sfm_config(), rng) if cfg.use_sfm else None,
        compress_w=uniform_init(rng, (cfg.width, cfg.c_in), cfg.c_in) if use_compress_only else None,
        compress_b=zeros_init((cfg.width,)) if use_compress_only else None,
        csm=csm_mod.init_csm(cfg.csm_config(), rng) if cfg.use_csm else None,
        expand_w=zeros_init((cfg.c_in, cfg.width)),
        expand_b=zeros_init((cfg.c_in,)),
    )


def scsm_forward(x, w, cfg, scan_variant="sequential"):
    """x: [B, C, H, W] stage features; returns the same shape."""
    if x.ndim != 4 or x.shape[1] != cfg.c_in or x.shape[2] != x.shape[3]:
        raise DimensionError(
            f"block expects square [B, {cfg.c_in}, H, H] features, got {x.shape}")
    if x.shape[2] != cfg.hw:
        raise DimensionError(f"block configured for {cfg.hw}x{cfg.hw}, got {x.shape}")
    if cfg.use_sfm:
        seq = sfm_mod.sfm_forward(x, w.sfm, cfg.sfm_config())
    else:
        seq = sfm_mod.to_patch_sequence(T.conv_1x1(x, w.compress_w, w.compress_b))
    if cfg.use_csm:
        seq = csm_mod.csm_forward(seq, w.csm, cfg.csm_config(), scan_variant=scan_variant)
    grid = sfm_mod.from_patch_sequence(seq, (cfg.hw, cfg.hw))
    return T.add(T.conv_1x1(grid, w.expand_w, w.expand_b), x)


# ------------------------------------------------------------------ freezing


@dataclass(frozen=True)
class FreezePolicy:
    stage: str
    train_backbone: bool
    train_blocks: bool
    train_head: bool


def policy_for_stage(stage):
    if stage == "base":
        return FreezePolicy(stage="base", train_backbone=True, train_blocks=True,
                            train_head=True)
    if stage == "novel":
        return FreezePolicy(stage="novel", train_backbone=False, train_blocks=True,
                            train_head=True)
    raise ValueError(f"unknown training stage {stage!r}")


def _allowed(policy, path):
    if path.startswith("backbone"):
        return policy.train_backbone
    if path.startswith("blocks"):
        return policy.train_blocks
    if path.startswith("head"):
        return policy.train_head
    raise PolicyViolationError(f"parameter path {path!r} not covered by freeze policy")


def apply_freeze(policy, model):
    """Set requires_grad across the whole model per the policy. The csm
    state diagonal keeps its own trainability switch and is never unfrozen
    by a stage policy."""
    for path, t in named_params(model):
        flag = _allowed(policy, path)
        if path.endswith("log_neg_a") and t.requires_grad is False:
            flag = False
        t.requires_grad = flag


def check_frozen(policy, model, reference):
    """Raise PolicyViolationError if any parameter the policy freezes
    differs bit-for-bit from the reference snapshot {path: bytes}."""
    for path, t in named_params(model):
        if _allowed(policy, path):
            continue
        if t.requires_grad:
            raise PolicyViolationError(f"frozen parameter {path!r} is marked trainable")
        if np.ascontiguousarray(t.data).tobytes() != reference[path]:
            raise PolicyViolationError(f"frozen parameter {path!r} changed during training")


def snapshot_bytes(model, paths_filter=None):
    return {path: np.ascontiguousarray(t.data).tobytes()
            for path, t in named_params(model)
            if paths_filter is None or paths_filter(path)}
