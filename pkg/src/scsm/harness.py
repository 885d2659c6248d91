"""Two-stage few-shot protocol on the synthetic shape task.

Stage one trains everything on the twelve base classes. Stage two clones
the base model, swaps in a fresh head, freezes the backbone, and fine-tunes
on K shots per novel class; the freeze contract is re-checked against a
byte snapshot after every optimizer step. The ablation suite runs the
variant grid and reduces per-seed accuracies to the median table.

All randomness is drawn from named streams split off (seed, stream-id), so
any job — including the fanned-out ablation workers — reproduces
bit-identically regardless of scheduling.
"""

import csv
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import ModelConfig, clone_tree, init_model, logits, new_head
from .block import apply_freeze, check_frozen, policy_for_stage, snapshot_bytes
from .checkpoint import save_checkpoint
from .optim import SGD
from .params import named_params
from .shapes import (base_shots, default_episodes, novel_shots, sample_hashes,
                     synthesize_dataset)

# rng stream ids (never reuse across purposes)
_BASE_BATCHES, _NOVEL_BATCHES = 23, 29

ABLATION_VARIANTS = ("baseline", "csm", "sfm_csm")
DEFAULT_KS = (1, 2, 5, 10)


class ContaminationError(RuntimeError):
    """Novel or evaluation samples leaked into a training stream."""


@dataclass(frozen=True)
class TrainConfig:
    base_steps: int = 2400
    novel_steps: int = 800
    batch_size: int = 16
    base_lr: float = 0.01
    novel_lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    scan_variant: str = "sequential"


@dataclass
class RunRecord:
    config_hash: str
    stage: str          # base | novel | gfsod
    variant: str
    seed: int
    k: int              # 0 for the base stage
    steps: int
    epoch_losses: tuple
    accuracy: float
    acc_base: float     # partition metrics; nan outside gfsod
    acc_novel: float
    wall_time_s: float


def config_digest(*objs):
    """Short stable hash of dataclass reprs; ties ledger rows to configs."""
    blob = "\x1f".join(repr(o) for o in objs).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def prepare_inputs(x):
    """Center raw [0,1] images to [-1,1]; the normalization-free backbone
    trains far better on zero-mean inputs."""
    return x * 2.0 - 1.0


def evaluate(model, x, y, batch=50, scan_variant="sequential"):
    """Mean accuracy, evaluated without graph recording."""
    correct = 0
    with T.no_grad():
        for i in range(0, x.shape[0], batch):
            out = logits(model, T.Tensor(prepare_inputs(x[i:i + batch])),
                         scan_variant=scan_variant)
            correct += int((out.data.argmax(axis=1) == y[i:i + batch]).sum())
    return correct / x.shape[0]


def _train_loop(model, x, y, steps, lr, tcfg, seed, stream,
                policy=None, frozen_ref=None):
    """Shuffled-epoch SGD for a fixed step count; returns per-epoch mean
    losses. When a policy and reference snapshot are given, the freeze
    contract is verified after every step."""
    opt = SGD(named_params(model), lr=lr, momentum=tcfg.momentum,
              weight_decay=tcfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
    n = x.shape[0]
    bs = min(tcfg.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    epoch_losses = []
    bucket = []
    for _ in range(steps):
        if pos + bs > n:
            epoch_losses.append(float(np.mean(bucket)))
            bucket = []
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        opt.zero_grad()
        out = logits(model, T.Tensor(prepare_inputs(x[idx])),
                     scan_variant=tcfg.scan_variant)
        loss = T.cross_entropy_logits(out, y[idx])
        loss.backward()
        opt.step()
        bucket.append(loss.item())
        if policy is not None:
            check_frozen(policy, model, frozen_ref)
    if bucket:
        epoch_losses.append(float(np.mean(bucket)))
    return tuple(epoch_losses)


def _check_disjoint(train_x, held_x, what):
    if sample_hashes(train_x) & sample_hashes(held_x):
        raise ContaminationError(f"{what} samples appear in the training stream")


def train_base(model, ds, tcfg, seed, config_hash=""):
    """Stage one: train all parameters on the base split. Raises
    ContaminationError if novel or evaluation samples are present."""
    t0 = time.perf_counter()
    _check_disjoint(ds.base_x, ds.novel_x, "novel-class")
    _check_disjoint(ds.base_x, ds.novel_eval_x, "novel-class evaluation")
    _check_disjoint(ds.base_x, ds.base_eval_x, "evaluation")
    apply_freeze(policy_for_stage("base"), model)
    losses = _train_loop(model, ds.base_x, ds.base_y, tcfg.base_steps,
                         tcfg.base_lr, tcfg, seed, _BASE_BATCHES)
    acc = evaluate(model, ds.base_eval_x, ds.base_eval_y,
                   scan_variant=tcfg.scan_variant)
    return RunRecord(config_hash=config_hash, stage="base",
                     variant=model.cfg.variant, seed=seed, k=0,
                     steps=tcfg.base_steps, epoch_losses=losses, accuracy=acc,
                     acc_base=acc, acc_novel=float("nan"),
                     wall_time_s=time.perf_counter() - t0)


def finetune_novel(base_model, ds, k, tcfg, run_seed, mode="novel",
                   config_hash=""):
    """Stage two: clone the base model, fit a fresh head on K shots per
    novel class with the backbone frozen. mode="gfsod" trains on a balanced
    union (K shots of every base and novel class) and reports both
    partitions. Returns (fine-tuned model, RunRecord)."""
    if mode not in ("novel", "gfsod"):
        raise ValueError(f"unknown fine-tuning mode {mode!r}")
    t0 = time.perf_counter()
    spec = ds.spec
    sx, sy = novel_shots(spec, run_seed, k)
    _check_disjoint(sx, ds.novel_eval_x, "novel-class evaluation")
    _check_disjoint(sx, ds.base_eval_x, "evaluation")
    n_base = len(spec.base_classes)
    if mode == "gfsod":
        bx, by = base_shots(ds, run_seed, k)
        sx = np.concatenate([bx, sx])
        sy = np.concatenate([by, sy + n_base])
        n_head = n_base + len(spec.novel_classes)
    else:
        n_head = len(spec.novel_classes)

    model = clone_tree(base_model)
    new_head(model, n_head, seed=run_seed)
    policy = policy_for_stage("novel")
    apply_freeze(policy, model)
    ref = snapshot_bytes(model, paths_filter=lambda p: p.startswith("backbone"))
    losses = _train_loop(model, sx, sy, tcfg.novel_steps, tcfg.novel_lr, tcfg,
                         run_seed, _NOVEL_BATCHES, policy=policy, frozen_ref=ref)
    check_frozen(policy, model, ref)

    if mode == "gfsod":
        acc_base = evaluate(model, ds.base_eval_x, ds.base_eval_y,
                            scan_variant=tcfg.scan_variant)
        acc_novel = evaluate(model, ds.novel_eval_x, ds.novel_eval_y + n_base,
                             scan_variant=tcfg.scan_variant)
        n_b, n_n = ds.base_eval_x.shape[0], ds.novel_eval_x.shape[0]
        acc = (acc_base * n_b + acc_novel * n_n) / (n_b + n_n)
    else:
        acc_base = float("nan")
        acc_novel = evaluate(model, ds.novel_eval_x, ds.novel_eval_y,
                             scan_variant=tcfg.scan_variant)
        acc = acc_novel
    record = RunRecord(config_hash=config_hash, stage=mode,
                       variant=base_model.cfg.variant, seed=run_seed, k=k,
                       steps=tcfg.novel_steps, epoch_losses=losses,
                       accuracy=acc, acc_base=acc_base, acc_novel=acc_novel,
                       wall_time_s=time.perf_counter() - t0)
    return model, record


# ------------------------------------------------------------- ablation


def _run_variant(variant, seeds, ks, tcfg, spec, model_kw, save_dir):
    """All runs for one variant: one base training plus every (seed, K)
    fine-tune. Executed either inline or in a worker process."""
    ds = synthesize_dataset(spec)
    mcfg = ModelConfig(variant=variant, n_classes=len(spec.base_classes),
                       **model_kw)
    chash = config_digest(mcfg, tcfg, spec)
    model = init_model(mcfg, seed=spec.seed)
    records = [train_base(model, ds, tcfg, seed=spec.seed, config_hash=chash)]
    if save_dir:
        save_checkpoint(os.path.join(save_dir, f"{variant}_base.ckpt"), model)
    for seed in seeds:
        for k in ks:
            tuned, rec = finetune_novel(model, ds, k, tcfg, run_seed=seed,
                                        config_hash=chash)
            records.append(rec)
            if save_dir:
                save_checkpoint(os.path.join(
                    save_dir, f"{variant}_s{seed}_k{k}.ckpt"), tuned)
    return records


def ablation_suite(seeds=(0, 1, 2, 3, 4), ks=DEFAULT_KS,
                   variants=ABLATION_VARIANTS, tcfg=None, spec=None,
                   model_kw=None, workers=None, save_dir=None):
    """Variant x seed x K grid. Returns (records, medians) where medians
    maps (variant, k) to the median novel accuracy over seeds. Variants fan
    out to worker processes when more than one worker is available; results
    are identical either way."""
    tcfg = tcfg or TrainConfig()
    spec = spec or default_episodes()
    model_kw = dict(model_kw or {})
    if save_dir:
        os.makedirs(save_dir, exist_ok=True)
    if workers is None:
        workers = min(len(variants), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_variant, v, tuple(seeds), tuple(ks),
                                   tcfg, spec, model_kw, save_dir)
                       for v in variants]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_variant(v, tuple(seeds), tuple(ks), tcfg, spec,
                               model_kw, save_dir) for v in variants]
    records = [r for chunk in chunks for r in chunk]
    medians = {}
    for v in variants:
        for k in ks:
            accs = [r.accuracy for r in records
                    if r.variant == v and r.stage != "base" and r.k == k]
            medians[(v, k)] = float(np.median(accs))
    return records, medians


def median_table(medians, variants=ABLATION_VARIANTS, ks=DEFAULT_KS):
    """Rows: variant; columns: K. The Table-IV-shaped summary."""
    rows = [["variant"] + [f"K={k}" for k in ks]]
    for v in variants:
        rows.append([v] + [f"{medians[(v, k)]:.4f}" for k in ks])
    return rows


# ------------------------------------------------------------- csv ledger

LEDGER_HEADER = ("config_hash", "stage", "variant", "seed", "k", "steps",
                 "accuracy", "acc_base", "acc_novel", "first_epoch_loss",
                 "last_epoch_loss", "epoch_losses", "wall_time_s")


def record_row(r):
    return (r.config_hash, r.stage, r.variant, str(r.seed), str(r.k),
            str(r.steps), repr(float(r.accuracy)), repr(float(r.acc_base)),
            repr(float(r.acc_novel)), repr(float(r.epoch_losses[0])),
            repr(float(r.epoch_losses[-1])),
            ";".join(repr(float(l)) for l in r.epoch_losses),
            f"{r.wall_time_s:.3f}")


def append_records(path, records):
    """Append RunRecords to the CSV ledger, writing the header when the
    file is new. Floats are written with round-tripping repr, so identical
    runs produce identical rows (wall_time_s excepted)."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        out = csv.writer(fh)
        if fresh:
            out.writerow(LEDGER_HEADER)
        for r in records:
            out.writerow(record_row(r))


def read_ledger(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LEDGER_HEADER:
        raise ValueError(f"{path} is not a run ledger")
    return [dict(zip(LEDGER_HEADER, row)) for row in rows[1:]]


def rows_equal_ignoring_walltime(a, b):
    """Ledger-row comparison for determinism checks (wall time varies)."""
    keys = [k for k in LEDGER_HEADER if k != "wall_time_s"]
    return all(a[k] == b[k] for k in keys)
