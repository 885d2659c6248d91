"""Small convolutional host: three 3x3 stride-2 stages with ReLU, no
normalization layers, optionally wrapped by one spatial-channel block per
stage, plus a global-average-pool linear head.

Weight init streams are split per component off the run seed, so two
variants built from the same seed share bit-identical backbone and head
inits and differ only in the blocks they carry.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import block as block_mod
from . import tensor as T
from .params import uniform_init, zeros_init
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple = (16, 32, 64)
    input_hw: int = 32
    ksize: int = 3
    stride: int = 2

    def __post_init__(self):
        # stage widths must stay divisible by 4 so the blocks' quarter-width
        # compression keeps integral channel counts
        for c in self.stage_channels:
            if c % 4:
                raise ValueError(f"stage channels must be divisible by 4, got {c}")

    def stage_sides(self):
        side = self.input_hw
        out = []
        for _ in self.stage_channels:
            side = (side + 2 - self.ksize) // self.stride + 1
            out.append(side)
        return tuple(out)


@dataclass
class ConvLayer:
    w: Tensor
    b: Tensor


@dataclass
class BackboneWeights:
    stages: tuple


def init_backbone(cfg, rng):
    stages = []
    c_in = cfg.in_channels
    for c_out in cfg.stage_channels:
        fan_in = c_in * cfg.ksize * cfg.ksize
        stages.append(ConvLayer(
            w=uniform_init(rng, (c_out, c_in, cfg.ksize, cfg.ksize), fan_in),
            b=zeros_init((c_out,))))
        c_in = c_out
    return BackboneWeights(stages=tuple(stages))


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "baseline"
    n_classes: int = 12
    backbone: BackboneConfig = BackboneConfig()
    heads: int = 2
    c_e_ratio: int = 4
    p: int = 8
    d: int = 0
    conv_k: int = 4
    scale_scores: bool = True
    square_input: bool = False
    dt_reading: str = "spectral_radius"
    a_trainable: bool = False

    def block_configs(self):
        if self.variant == "baseline":
            return tuple(None for _ in self.backbone.stage_channels)
        sides = self.backbone.stage_sides()
        out = []
        for c, side in zip(self.backbone.stage_channels, sides):
            out.append(block_mod.ScsmConfig(
                variant=self.variant, c_in=c, hw=side,
                c_e=max(1, c // self.c_e_ratio), heads=self.heads,
                scale_scores=self.scale_scores, p=self.p, d=self.d,
                conv_k=self.conv_k,
                square_input=self.square_input, dt_reading=self.dt_reading,
                a_trainable=self.a_trainable))
        return tuple(out)


@dataclass
class Model:
    cfg: ModelConfig
    backbone: BackboneWeights
    blocks: tuple
    head_w: Tensor
    head_b: Tensor


def init_model(cfg, seed):
    """Build a full model. The backbone and head streams depend only on the
    seed, never on the variant."""
    bb_rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    head_rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    backbone = init_backbone(cfg.backbone, bb_rng)
    blocks = []
    for i, bc in enumerate(cfg.block_configs()):
        if bc is None:
            blocks.append(None)
        else:
            blocks.append(block_mod.init_scsm(bc, np.random.default_rng(
                np.random.SeedSequence([seed, 17, i]))))
    c_top = cfg.backbone.stage_channels[-1]
    return Model(cfg=cfg, backbone=backbone, blocks=tuple(blocks),
                 head_w=uniform_init(head_rng, (c_top, cfg.n_classes), c_top),
                 head_b=zeros_init((cfg.n_classes,)))


def new_head(model, n_classes, seed):
    """Fresh linear head (novel stage); same stream for every variant."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 19]))
    c_top = model.cfg.backbone.stage_channels[-1]
    model.head_w = uniform_init(rng, (c_top, n_classes), c_top)
    model.head_b = zeros_init((n_classes,))
    return model


def stage_maps(model, x, scan_variant="sequential"):
    """Feature maps after each stage (block output where one is present)."""
    if x.ndim != 4 or x.shape[1] != model.cfg.backbone.in_channels:
        raise DimensionError(
            f"backbone expects [B, {model.cfg.backbone.in_channels}, H, W], got {x.shape}")
    cfgs = model.cfg.block_configs()
    feats = []
    t = x
    for layer, bw, bc in zip(model.backbone.stages, model.blocks, cfgs):
        t = T.relu(T.conv2d(t, layer.w, layer.b,
                            stride=model.cfg.backbone.stride,
                            padding=(model.cfg.backbone.ksize - 1) // 2))
        if bw is not None:
            t = block_mod.scsm_forward(t, bw, bc, scan_variant=scan_variant)
        feats.append(t)
    return feats


def head_logits(model, feat):
    """Global average pool over the final stage map, then the linear head."""
    pooled = T.adaptive_avg_pool2d(feat, (1, 1))
    flat = T.reshape(pooled, (feat.shape[0], feat.shape[1]))
    return T.add(T.matmul(flat, model.head_w), model.head_b)


def logits_from_stage(model, feat, stage, scan_variant="sequential"):
    """Resume the forward pass from a (possibly modified) stage output:
    run stages after `stage`, then the head. stage indexes like a sequence
    (-1 = last)."""
    n = len(model.backbone.stages)
    stage = range(n)[stage]
    cfgs = model.cfg.block_configs()
    t = feat
    for i in range(stage + 1, n):
        layer = model.backbone.stages[i]
        t = T.relu(T.conv2d(t, layer.w, layer.b,
                            stride=model.cfg.backbone.stride,
                            padding=(model.cfg.backbone.ksize - 1) // 2))
        if model.blocks[i] is not None:
            t = block_mod.scsm_forward(t, model.blocks[i], cfgs[i],
                                       scan_variant=scan_variant)
    return head_logits(model, t)


def logits(model, x, scan_variant="sequential"):
    return head_logits(model, stage_maps(model, x, scan_variant=scan_variant)[-1])


def clone_tree(obj):
    """Deep copy of a weights tree; tensors get fresh buffers, flags kept."""
    if isinstance(obj, Tensor):
        return Tensor(obj.data.copy(), requires_grad=obj.requires_grad, dtype=obj.data.dtype)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return type(obj)(**{f.name: clone_tree(getattr(obj, f.name))
                            for f in dataclasses.fields(obj)})
    if isinstance(obj, tuple):
        return tuple(clone_tree(v) for v in obj)
    if isinstance(obj, list):
        return [clone_tree(v) for v in obj]
    return obj
