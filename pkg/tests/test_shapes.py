import dataclasses

import numpy as np
import pytest

from scsm.shapes import (KINDS, ClassSpec, EpisodeSet, default_episodes,
                         default_roster, novel_subset, render_sample,
                         sample_hashes, synthesize_dataset)


def tiny_spec(seed=0):
    return default_episodes(seed=seed, n_base=5, k_shots=3, n_eval=4)


def test_roster_is_valid_and_disjoint():
    base, novel = default_roster()
    assert len(base) == 12 and len(novel) == 4
    EpisodeSet(base_classes=base, novel_classes=novel)  # validates
    ids = {(c.kind, c.hue, c.texture_freq) for c in base + novel}
    assert len(ids) == 16


def test_class_spec_validation():
    with pytest.raises(ValueError):
        ClassSpec(name="x", kind="hexagon", hue=0.1, texture_freq=2.0)
    with pytest.raises(ValueError):
        ClassSpec(name="x", kind="disk", hue=1.5, texture_freq=2.0)
    with pytest.raises(ValueError):
        ClassSpec(name="x", kind="disk", hue=0.1, texture_freq=0.0)


def test_episode_validation():
    base, novel = default_roster()
    with pytest.raises(ValueError):
        EpisodeSet(base_classes=base, novel_classes=novel, k_shots=0)
    with pytest.raises(ValueError):
        EpisodeSet(base_classes=base, novel_classes=base[:2])


def test_render_shape_and_range():
    for kind in KINDS:
        cls = ClassSpec(name="t", kind=kind, hue=0.3, texture_freq=3.0)
        img = render_sample(cls, np.random.default_rng(0))
        assert img.shape == (3, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0
        # the shape must actually paint something over the dark background
        assert (img.max(axis=0) > 0.5).sum() > 20


def test_same_seed_byte_identical():
    a = synthesize_dataset(tiny_spec())
    b = synthesize_dataset(tiny_spec())
    for field in ("base_x", "base_y", "novel_x", "novel_y",
                  "base_eval_x", "base_eval_y", "novel_eval_x", "novel_eval_y"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    c = synthesize_dataset(tiny_spec(seed=1))
    assert np.abs(a.base_x - c.base_x).max() > 0


def test_label_histogram_matches_spec():
    ds = synthesize_dataset(tiny_spec())
    assert np.bincount(ds.base_y).tolist() == [5] * 12
    assert np.bincount(ds.novel_y).tolist() == [3] * 4
    assert np.bincount(ds.base_eval_y).tolist() == [4] * 12
    assert np.bincount(ds.novel_eval_y).tolist() == [4] * 4


def test_novel_subsets_nest():
    ds = synthesize_dataset(tiny_spec())
    x1, y1 = novel_subset(ds, 1)
    x2, y2 = novel_subset(ds, 2)
    assert x1.shape[0] == 4 and x2.shape[0] == 8
    for c in range(4):
        np.testing.assert_array_equal(x1[c], x2[2 * c])
    with pytest.raises(ValueError):
        novel_subset(ds, 4)
    with pytest.raises(ValueError):
        novel_subset(ds, 0)


def test_eval_disjoint_from_training():
    ds = synthesize_dataset(tiny_spec())
    train = sample_hashes(ds.base_x) | sample_hashes(ds.novel_x)
    evals = sample_hashes(ds.base_eval_x) | sample_hashes(ds.novel_eval_x)
    assert not (train & evals)


def test_per_sample_jitter_varies():
    cls = default_roster()[0][0]
    a = render_sample(cls, np.random.default_rng(1))
    b = render_sample(cls, np.random.default_rng(2))
    assert np.abs(a - b).max() > 0.05


def test_dataset_cache_round_trip(tmp_path):
    spec = tiny_spec()
    fresh = synthesize_dataset(spec)
    first = synthesize_dataset(spec, cache_dir=str(tmp_path))
    cached = synthesize_dataset(spec, cache_dir=str(tmp_path))
    files = list(tmp_path.glob("shapes_*.npz"))
    assert len(files) == 1
    for field in ("base_x", "base_y", "novel_x", "novel_y",
                  "base_eval_x", "base_eval_y", "novel_eval_x", "novel_eval_y"):
        np.testing.assert_array_equal(getattr(cached, field),
                                      getattr(fresh, field))
        np.testing.assert_array_equal(getattr(first, field),
                                      getattr(fresh, field))


def test_dataset_cache_keyed_by_spec(tmp_path):
    synthesize_dataset(tiny_spec(), cache_dir=str(tmp_path))
    bigger = dataclasses.replace(tiny_spec(), n_eval=3)
    synthesize_dataset(bigger, cache_dir=str(tmp_path))
    assert len(list(tmp_path.glob("shapes_*.npz"))) == 2
