import numpy as np
import pytest

from scsm.backbone import BackboneConfig, ModelConfig, init_model
from scsm.harness import (ContaminationError, RunRecord, TrainConfig,
                          ablation_suite, append_records, config_digest,
                          evaluate, finetune_novel, median_table,
                          prepare_inputs, read_ledger, record_row,
                          rows_equal_ignoring_walltime, train_base)
from scsm.params import param_digest
from scsm.shapes import default_episodes, novel_shots, synthesize_dataset

# small-but-real settings so the whole protocol runs in seconds
SPEC = default_episodes(seed=0, n_base=6, k_shots=3, n_eval=5)
TCFG = TrainConfig(base_steps=12, novel_steps=10, batch_size=8)
MODEL_KW = dict(backbone=BackboneConfig(stage_channels=(8, 8, 8), input_hw=32),
                p=2, conv_k=2)


@pytest.fixture(scope="module")
def ds():
    return synthesize_dataset(SPEC)


def fresh_model(variant="csm", n_classes=12):
    return init_model(ModelConfig(variant=variant, n_classes=n_classes,
                                  **MODEL_KW), seed=0)


def test_prepare_inputs_centers():
    x = np.array([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(prepare_inputs(x), [-1.0, 0.0, 1.0])


def test_train_base_record_and_loss_decrease(ds):
    m = fresh_model()
    rec = train_base(m, ds, TrainConfig(base_steps=27, batch_size=24), seed=0)
    assert rec.stage == "base" and rec.k == 0 and rec.variant == "csm"
    # 72 samples / batch 24 = 3 steps per epoch -> 9 full epochs
    assert len(rec.epoch_losses) == 9
    assert rec.epoch_losses[-1] < rec.epoch_losses[0]
    assert 0.0 <= rec.accuracy <= 1.0


def test_train_base_rejects_contaminated_stream(ds):
    poisoned = synthesize_dataset(SPEC)
    poisoned.base_x[3] = ds.novel_x[0]
    with pytest.raises(ContaminationError):
        train_base(fresh_model(), poisoned, TCFG, seed=0)


def test_train_base_rejects_eval_leak(ds):
    poisoned = synthesize_dataset(SPEC)
    poisoned.base_x[0] = ds.base_eval_x[0]
    with pytest.raises(ContaminationError, match="evaluation"):
        train_base(fresh_model(), poisoned, TCFG, seed=0)


def test_finetune_freezes_backbone_and_reports(ds):
    base = fresh_model()
    train_base(base, ds, TCFG, seed=0)
    base_digest = param_digest(base, match=lambda p: p.startswith("backbone"))
    tuned, rec = finetune_novel(base, ds, k=2, tcfg=TCFG, run_seed=1)
    assert rec.stage == "novel" and rec.k == 2 and rec.seed == 1
    assert tuned.head_w.shape == (8, 4)
    assert param_digest(tuned, match=lambda p: p.startswith("backbone")) == base_digest
    # the base model itself must be untouched by the clone-and-tune
    assert param_digest(base, match=lambda p: p.startswith("backbone")) == base_digest
    assert np.isnan(rec.acc_base) and rec.accuracy == rec.acc_novel


def test_finetune_is_deterministic(ds):
    base = fresh_model()
    train_base(base, ds, TCFG, seed=0)
    _, a = finetune_novel(base, ds, k=1, tcfg=TCFG, run_seed=3)
    _, b = finetune_novel(base, ds, k=1, tcfg=TCFG, run_seed=3)
    assert a.accuracy == b.accuracy and a.epoch_losses == b.epoch_losses
    _, c = finetune_novel(base, ds, k=1, tcfg=TCFG, run_seed=4)
    assert a.epoch_losses != c.epoch_losses


def test_gfsod_mode_reports_both_partitions(ds):
    base = fresh_model()
    train_base(base, ds, TCFG, seed=0)
    tuned, rec = finetune_novel(base, ds, k=2, tcfg=TCFG, run_seed=0,
                                mode="gfsod")
    assert tuned.head_w.shape == (8, 16)
    assert rec.stage == "gfsod"
    assert 0.0 <= rec.acc_base <= 1.0 and 0.0 <= rec.acc_novel <= 1.0
    n_b, n_n = ds.base_eval_x.shape[0], ds.novel_eval_x.shape[0]
    expect = (rec.acc_base * n_b + rec.acc_novel * n_n) / (n_b + n_n)
    assert abs(rec.accuracy - expect) < 1e-12


def test_unknown_mode_rejected(ds):
    with pytest.raises(ValueError):
        finetune_novel(fresh_model(), ds, k=1, tcfg=TCFG, run_seed=0,
                       mode="episodic")


def test_episode_shots_vary_by_seed_not_by_call():
    a1, _ = novel_shots(SPEC, run_seed=0, k=2)
    a2, _ = novel_shots(SPEC, run_seed=0, k=2)
    b, _ = novel_shots(SPEC, run_seed=1, k=2)
    np.testing.assert_array_equal(a1, a2)
    assert np.abs(a1 - b).max() > 0


def test_ablation_grid_and_median_table(tmp_path):
    records, medians = ablation_suite(
        seeds=(0, 1), ks=(1, 2), variants=("baseline", "csm"), tcfg=TCFG,
        spec=SPEC, model_kw=MODEL_KW, workers=1, save_dir=str(tmp_path))
    # one base row per variant plus one row per (variant, seed, k)
    assert len(records) == 2 + 2 * 2 * 2
    assert set(medians) == {("baseline", 1), ("baseline", 2), ("csm", 1), ("csm", 2)}
    table = median_table(medians, variants=("baseline", "csm"), ks=(1, 2))
    assert table[0] == ["variant", "K=1", "K=2"]
    assert [row[0] for row in table[1:]] == ["baseline", "csm"]
    ckpts = sorted(p.name for p in tmp_path.iterdir())
    assert "baseline_base.ckpt" in ckpts and "csm_s1_k2.ckpt" in ckpts
    assert len(ckpts) == 2 + 8


def test_ledger_roundtrip_and_determinism_compare(tmp_path):
    rec = RunRecord(config_hash="abc", stage="novel", variant="csm", seed=1,
                    k=2, steps=10, epoch_losses=(1.5, 0.25), accuracy=0.75,
                    acc_base=float("nan"), acc_novel=0.75, wall_time_s=3.25)
    path = tmp_path / "ledger.csv"
    append_records(path, [rec])
    append_records(path, [rec])
    rows = read_ledger(path)
    assert len(rows) == 2
    assert rows[0]["accuracy"] == "0.75"
    assert rows[0]["epoch_losses"] == "1.5;0.25"
    assert rows_equal_ignoring_walltime(rows[0], rows[1])
    other = dict(rows[1], accuracy="0.5")
    assert not rows_equal_ignoring_walltime(rows[0], other)


def test_config_digest_distinguishes():
    a = config_digest(TCFG, SPEC)
    assert a == config_digest(TCFG, SPEC)
    assert a != config_digest(TrainConfig(novel_steps=11), SPEC)
    assert len(a) == 12


def test_record_row_matches_header():
    rec = RunRecord(config_hash="abc", stage="base", variant="sfm", seed=0,
                    k=0, steps=5, epoch_losses=(2.0,), accuracy=0.5,
                    acc_base=0.5, acc_novel=float("nan"), wall_time_s=1.0)
    row = record_row(rec)
    assert len(row) == 13
    assert row[1] == "base" and row[5] == "5"
