"""Procedural 32x32 shape/color/texture classification data.

Sixteen classes are generated from six shape kinds crossed with hue and
texture-frequency attributes: twelve "base" classes with plentiful samples
and four held-out "novel" classes whose hues fall between the base hues and
whose textures run at higher frequencies, so adapting to them rewards
recalibrating channel features rather than reusing them as-is.

Every sample's jitter stream is seeded by (master seed, class index, split,
sample index), so datasets are byte-identical across runs and any subset can
be rendered independently in any order.
"""

import colorsys
import hashlib
import os
from dataclasses import dataclass

import numpy as np

KINDS = ("disk", "square", "triangle", "cross", "ring", "stripe")

# split codes for the per-sample seed stream
_TRAIN, _EVAL, _EPISODE = 0, 1, 2

_SS = 2  # supersampling factor for mask anti-aliasing


@dataclass(frozen=True)
class ClassSpec:
    name: str
    kind: str
    hue: float            # [0, 1)
    texture_freq: float   # cycles across the shape's local frame
    size_lo: float = 0.35 # half-extent in the [-1, 1] image frame
    size_hi: float = 0.55

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if not 0.0 <= self.hue < 1.0:
            raise ValueError("hue must lie in [0, 1)")
        if self.texture_freq <= 0:
            raise ValueError("texture_freq must be positive")
        if not 0.0 < self.size_lo <= self.size_hi:
            raise ValueError("need 0 < size_lo <= size_hi")


def default_roster():
    """(base specs, novel specs): 12 base classes covering all six kinds at
    evenly spaced hues, 4 novel classes at in-between hues with faster
    textures; novel classes come in same-hue pairs so hue alone cannot
    separate them."""
    base = []
    for i, kind in enumerate(KINDS):
        for j in (0, 1):
            base.append(ClassSpec(
                name=f"base_{kind}_{j}", kind=kind,
                hue=(i + 6 * j) / 12.0,
                texture_freq=2.0 if j == 0 else 4.0))
    novel = [
        ClassSpec(name="novel_disk", kind="disk", hue=7 / 24, texture_freq=6.0),
        ClassSpec(name="novel_ring", kind="ring", hue=7 / 24, texture_freq=7.0),
        ClassSpec(name="novel_triangle", kind="triangle", hue=19 / 24, texture_freq=6.0),
        ClassSpec(name="novel_stripe", kind="stripe", hue=19 / 24, texture_freq=7.0),
    ]
    return tuple(base), tuple(novel)


@dataclass(frozen=True)
class EpisodeSet:
    base_classes: tuple
    novel_classes: tuple
    n_base: int = 200
    k_shots: int = 10     # shots rendered per novel class; K-subsets nest
    n_eval: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.k_shots <= 0:
            raise ValueError("k_shots must be positive")
        if self.n_base <= 0 or self.n_eval <= 0:
            raise ValueError("sample counts must be positive")
        base_ids = {(c.kind, c.hue, c.texture_freq) for c in self.base_classes}
        novel_ids = {(c.kind, c.hue, c.texture_freq) for c in self.novel_classes}
        if base_ids & novel_ids:
            raise ValueError("base and novel class sets overlap")
        if len(base_ids) != len(self.base_classes) or len(novel_ids) != len(self.novel_classes):
            raise ValueError("duplicate class specs")


def default_episodes(seed=0, n_base=200, k_shots=10, n_eval=100):
    base, novel = default_roster()
    return EpisodeSet(base_classes=base, novel_classes=novel, n_base=n_base,
                      k_shots=k_shots, n_eval=n_eval, seed=seed)


# ---------------------------------------------------------------- rendering

_side_cache = {}


def _grid(side):
    if side not in _side_cache:
        c = (np.arange(side) + 0.5) / side * 2.0 - 1.0
        _side_cache[side] = np.meshgrid(c, c, indexing="xy")
    return _side_cache[side]


def _mask(kind, xr, yr, r):
    if kind == "disk":
        return xr * xr + yr * yr <= r * r
    if kind == "square":
        return np.maximum(np.abs(xr), np.abs(yr)) <= r
    if kind == "triangle":
        # equilateral, apex up, circumradius r: three outward half-planes
        h = 0.5 * r
        s = np.sqrt(3.0) / 2.0
        return (-yr <= h) & (s * xr + 0.5 * yr <= h) & (-s * xr + 0.5 * yr <= h)
    if kind == "cross":
        arm = r / 3.0
        return ((np.abs(xr) <= arm) & (np.abs(yr) <= r)) | \
               ((np.abs(yr) <= arm) & (np.abs(xr) <= r))
    if kind == "ring":
        rho = xr * xr + yr * yr
        return (rho <= r * r) & (rho >= (0.55 * r) ** 2)
    if kind == "stripe":
        return (np.abs(yr) <= 0.3 * r) & (np.abs(xr) <= 1.1 * r)
    raise ValueError(f"unknown shape kind {kind!r}")


def render_sample(cls, rng, side=32):
    """One [3, side, side] float image in [0, 1] with jittered pose, hue,
    texture phase, and background noise drawn from rng."""
    big = side * _SS
    xx, yy = _grid(big)

    cx, cy = rng.uniform(-0.25, 0.25, size=2)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    r = rng.uniform(cls.size_lo, cls.size_hi)
    hue = (cls.hue + rng.uniform(-0.02, 0.02)) % 1.0
    sat = rng.uniform(0.8, 1.0)
    val = rng.uniform(0.75, 1.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)

    ct, st = np.cos(theta), np.sin(theta)
    xs, ys = xx - cx, yy - cy
    xr = ct * xs + st * ys
    yr = -st * xs + ct * ys

    hard = _mask(cls.kind, xr, yr, r).astype(np.float64)
    # average-pool the supersampled mask for anti-aliased edges
    m = hard.reshape(side, _SS, side, _SS).mean(axis=(1, 3))
    # brightness stripes across the shape's local frame carry the texture cue
    tex = 0.7 + 0.3 * np.sin(2.0 * np.pi * cls.texture_freq * xr / (2.0 * r) + phase)
    tex = tex.reshape(side, _SS, side, _SS).mean(axis=(1, 3))

    rgb = np.array(colorsys.hsv_to_rgb(hue, sat, val))[:, None, None]
    bg = 0.12 + rng.normal(0.0, 0.03, size=(3, 1, 1))
    img = bg * (1.0 - m) + rgb * tex * m
    img += rng.normal(0.0, 0.02, size=(3, side, side))
    return np.clip(img, 0.0, 1.0)


def _sample_rng(seed, class_index, split, sample_index):
    return np.random.default_rng(
        np.random.SeedSequence([seed, class_index, split, sample_index]))


def _render_split(classes, index_offset, split, count, seed, side):
    xs = np.empty((len(classes) * count, 3, side, side))
    ys = np.empty(len(classes) * count, dtype=np.int64)
    i = 0
    for c_local, cls in enumerate(classes):
        for s in range(count):
            rng = _sample_rng(seed, index_offset + c_local, split, s)
            xs[i] = render_sample(cls, rng, side=side)
            ys[i] = c_local
            i += 1
    return xs, ys


@dataclass
class Dataset:
    spec: EpisodeSet
    base_x: np.ndarray
    base_y: np.ndarray
    novel_x: np.ndarray      # class-major, shot-minor; K-subsets take the
    novel_y: np.ndarray      # first K shots of each class
    base_eval_x: np.ndarray
    base_eval_y: np.ndarray
    novel_eval_x: np.ndarray
    novel_eval_y: np.ndarray


_SPLIT_FIELDS = ("base_x", "base_y", "novel_x", "novel_y",
                 "base_eval_x", "base_eval_y", "novel_eval_x", "novel_eval_y")


def spec_hash(spec, side=32):
    """Content key for the on-disk dataset cache."""
    return hashlib.sha256(repr((spec, side)).encode()).hexdigest()[:12]


def synthesize_dataset(spec, side=32, cache_dir=None):
    """Render all four splits; with cache_dir, reuse a prior render on disk.

    The cache file is keyed by the full episode spec (classes, counts, seed)
    plus the image side, so any change re-renders rather than reusing stale
    arrays.
    """
    cache = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        cache = os.path.join(cache_dir, f"shapes_{spec_hash(spec, side)}.npz")
        if os.path.exists(cache):
            with np.load(cache) as z:
                parts = {name: z[name] for name in _SPLIT_FIELDS}
            return Dataset(spec=spec, **parts)
    n_b = len(spec.base_classes)
    bx, by = _render_split(spec.base_classes, 0, _TRAIN, spec.n_base, spec.seed, side)
    nx, ny = _render_split(spec.novel_classes, n_b, _TRAIN, spec.k_shots, spec.seed, side)
    bex, bey = _render_split(spec.base_classes, 0, _EVAL, spec.n_eval, spec.seed, side)
    nex, ney = _render_split(spec.novel_classes, n_b, _EVAL, spec.n_eval, spec.seed, side)
    ds = Dataset(spec=spec, base_x=bx, base_y=by, novel_x=nx, novel_y=ny,
                 base_eval_x=bex, base_eval_y=bey,
                 novel_eval_x=nex, novel_eval_y=ney)
    if cache is not None:
        np.savez(cache, **{name: getattr(ds, name) for name in _SPLIT_FIELDS})
    return ds


def novel_subset(ds, k):
    """First k shots of every novel class (subsets nest as k grows)."""
    if not 1 <= k <= ds.spec.k_shots:
        raise ValueError(f"k must lie in [1, {ds.spec.k_shots}], got {k}")
    per = ds.spec.k_shots
    idx = np.concatenate([np.arange(c * per, c * per + k)
                          for c in range(len(ds.spec.novel_classes))])
    return ds.novel_x[idx], ds.novel_y[idx]


def novel_shots(spec, run_seed, k, side=32):
    """K fresh shots per novel class for one fine-tuning episode.

    Episodes are keyed by run_seed on a stream separate from the train and
    eval splits, so different runs adapt to different shot draws while the
    evaluation set stays fixed. Shot sets nest in k for a given run_seed.
    """
    if not 1 <= k <= spec.k_shots:
        raise ValueError(f"k must lie in [1, {spec.k_shots}], got {k}")
    n_b = len(spec.base_classes)
    xs = np.empty((len(spec.novel_classes) * k, 3, side, side))
    ys = np.empty(xs.shape[0], dtype=np.int64)
    i = 0
    for c_local, cls in enumerate(spec.novel_classes):
        for s in range(k):
            rng = np.random.default_rng(np.random.SeedSequence(
                [spec.seed, _EPISODE, run_seed, n_b + c_local, s]))
            xs[i] = render_sample(cls, rng, side=side)
            ys[i] = c_local
            i += 1
    return xs, ys


def base_shots(ds, run_seed, k):
    """K samples per base class drawn from the base split (balanced
    fine-tuning mode); indices come from the run_seed stream."""
    spec = ds.spec
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3, run_seed]))
    xs, ys = [], []
    for c in range(len(spec.base_classes)):
        pool = np.flatnonzero(ds.base_y == c)
        take = rng.choice(pool, size=min(k, pool.size), replace=False)
        xs.append(ds.base_x[take])
        ys.append(ds.base_y[take])
    return np.concatenate(xs), np.concatenate(ys)


def sample_hashes(x):
    """Content hash per image; used for split-disjointness checks."""
    return {hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()
            for img in x}
