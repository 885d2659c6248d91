"""Post-hoc squeeze-excite channel probe and the channel-retention
experiment.

The probe learns per-channel importance weights for a frozen host model:
global average pool, a reduction linear layer with ReLU, an expansion
linear layer with sigmoid. Training minimizes the host's task loss with
only the probe's four tensors trainable. Retention curves then measure how
accuracy degrades when only the top-q% weighted channels (ranked per image)
are kept at the probed stage.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import logits_from_stage, stage_maps
from .block import PolicyViolationError
from .harness import prepare_inputs
from .imageio import to_uint8, write_pgm
from .optim import SGD
from .params import named_params, uniform_init, zeros_init
from .tensor import Tensor


@dataclass
class ProbeWeights:
    w1: Tensor   # [C, C/r]
    b1: Tensor
    w2: Tensor   # [C/r, C]
    b2: Tensor


def init_probe(channels, rng, reduction=4):
    hidden = max(1, channels // reduction)
    return ProbeWeights(
        w1=uniform_init(rng, (channels, hidden), channels),
        b1=zeros_init((hidden,)),
        w2=uniform_init(rng, (hidden, channels), hidden),
        b2=zeros_init((channels,)))


def channel_weights(probe, feat):
    """Per-image channel weights in (0,1): squeeze [B,C,H,W] -> [B,C]."""
    pooled = T.adaptive_avg_pool2d(feat, (1, 1))
    squeezed = T.reshape(pooled, (feat.shape[0], feat.shape[1]))
    hidden = T.relu(T.add(T.matmul(squeezed, probe.w1), probe.b1))
    return T.sigmoid(T.add(T.matmul(hidden, probe.w2), probe.b2))


def reweight(feat, cw):
    """feat [B,C,H,W] scaled by per-image channel weights cw [B,C]."""
    return T.mul(feat, T.reshape(cw, (feat.shape[0], feat.shape[1], 1, 1)))


def _assert_host_frozen(model):
    hot = [p for p, t in named_params(model) if t.requires_grad]
    if hot:
        raise PolicyViolationError(
            f"host must be frozen while the probe trains; trainable: {hot[:4]}")


def fit_probe_on_features(feats, y, readout, reduction=4, steps=300, lr=0.01,
                          batch=16, seed=0):
    """Core probe fit: feats is [N, C, H, W] data, readout maps reweighted
    feature Tensors to logits through the (frozen) rest of the host."""
    probe = init_probe(feats.shape[1], np.random.default_rng(
        np.random.SeedSequence([seed, 31])), reduction=reduction)
    opt = SGD(named_params(probe), lr=lr, momentum=0.9)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 37]))
    n = feats.shape[0]
    bs = min(batch, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        opt.zero_grad()
        f = Tensor(feats[idx])
        out = readout(reweight(f, channel_weights(probe, f)))
        loss = T.cross_entropy_logits(out, y[idx])
        loss.backward()
        opt.step()
    return probe


def train_probe(model, x, y, stage=-1, reduction=4, steps=300, lr=0.01,
                batch=16, seed=0, scan_variant="sequential"):
    """Fit the probe on (x, y) through the frozen host's remaining stages.
    Returns ProbeWeights; every host parameter must already be
    non-trainable."""
    _assert_host_frozen(model)
    n_stages = len(model.backbone.stages)
    stage = range(n_stages)[stage]
    # the host is frozen, so features are plain data, computed once
    with T.no_grad():
        feats = stage_maps(model, Tensor(prepare_inputs(x)),
                           scan_variant=scan_variant)[stage].data
    return fit_probe_on_features(
        feats, y,
        readout=lambda f: logits_from_stage(model, f, stage,
                                            scan_variant=scan_variant),
        reduction=reduction, steps=steps, lr=lr, batch=batch, seed=seed)


# ------------------------------------------------------------- retention


@dataclass
class ChannelReport:
    stage: int
    qs: tuple
    accuracies: tuple
    weights: np.ndarray      # mean per-image channel weight over the eval set


def keep_count(channels, q):
    """Channels kept at retention level q (percent), round-half-even."""
    return int(round(channels * q / 100.0))


def _topq_mask(cw, q):
    """Per-image binary mask keeping each image's top-q% weighted channels."""
    b, c = cw.shape
    keep = keep_count(c, q)
    mask = np.zeros((b, c), dtype=cw.dtype)
    if keep:
        ranked = np.argsort(-cw, axis=1, kind="stable")[:, :keep]
        np.put_along_axis(mask, ranked, 1.0, axis=1)
    return mask


def masked_accuracy(model, probe, x, y, q, stage=-1, batch=50,
                    scan_variant="sequential"):
    """Accuracy when only the top-q% weighted channels survive at the
    probed stage. Also returns the mean channel-weight vector."""
    n_stages = len(model.backbone.stages)
    stage = range(n_stages)[stage]
    correct = 0
    weight_sum = None
    with T.no_grad():
        for i in range(0, x.shape[0], batch):
            f = stage_maps(model, Tensor(prepare_inputs(x[i:i + batch])),
                           scan_variant=scan_variant)[stage]
            cw = channel_weights(probe, f).data
            weight_sum = cw.sum(axis=0) + (0.0 if weight_sum is None else weight_sum)
            masked = T.mul(f, Tensor(_topq_mask(cw, q)[:, :, None, None]))
            out = logits_from_stage(model, masked, stage,
                                    scan_variant=scan_variant)
            correct += int((out.data.argmax(axis=1) == y[i:i + batch]).sum())
    return correct / x.shape[0], weight_sum / x.shape[0]


def retention_curve(model, probe, x, y, qs=(100, 80, 70, 60, 50), stage=-1,
                    batch=50, scan_variant="sequential"):
    """Accuracy at each retention level. qs must be strictly decreasing and
    non-empty."""
    qs = tuple(qs)
    if not qs:
        raise ValueError("qs must not be empty")
    if any(b >= a for a, b in zip(qs, qs[1:])):
        raise ValueError(f"qs must be strictly decreasing, got {qs}")
    accs = []
    weights = None
    for q in qs:
        acc, weights = masked_accuracy(model, probe, x, y, q, stage=stage,
                                       batch=batch, scan_variant=scan_variant)
        accs.append(acc)
    n_stages = len(model.backbone.stages)
    return ChannelReport(stage=range(n_stages)[stage], qs=qs,
                         accuracies=tuple(accs), weights=weights)


def degradation_area(report):
    """Sum of accuracy drops relative to the first (everything-kept) point;
    the scalar robustness summary of a retention curve."""
    ref = report.accuracies[0]
    return float(sum(ref - a for a in report.accuracies[1:]))


RETENTION_HEADER = ("variant", "seed", "k", "q", "accuracy")


def append_retention(path, variant, seed, k, report):
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        out = csv.writer(fh)
        if fresh:
            out.writerow(RETENTION_HEADER)
        for q, acc in zip(report.qs, report.accuracies):
            out.writerow((variant, str(seed), str(k), str(q), repr(float(acc))))


# ------------------------------------------------------------- map export


def export_channel_maps(model, probe, x, top_k, out_dir, stage=-1,
                        image_index=0, scan_variant="sequential"):
    """Write the top_k highest- and lowest-weighted channels' activation
    maps for one input image as 8-bit PGM files. Returns the paths."""
    n_stages = len(model.backbone.stages)
    stage = range(n_stages)[stage]
    os.makedirs(out_dir, exist_ok=True)
    with T.no_grad():
        f = stage_maps(model, Tensor(prepare_inputs(x[image_index:image_index + 1])),
                       scan_variant=scan_variant)[stage]
        cw = channel_weights(probe, f).data[0]
    order = np.argsort(-cw, kind="stable")
    picks = [("hi", order[:top_k]), ("lo", order[-top_k:][::-1])]
    paths = []
    for tag, chans in picks:
        for rank, ch in enumerate(chans):
            name = f"stage{stage}_{tag}{rank:02d}_ch{int(ch):03d}_w{cw[ch]:.4f}.pgm"
            path = os.path.join(out_dir, name)
            write_pgm(path, to_uint8(f.data[0, ch]))
            paths.append(path)
    return paths
