"""Self-contained correctness checks, runnable any time from the CLI.

Each check re-derives its expected values independently (closed forms,
brute-force recurrences, finite differences) rather than comparing the
library to itself, so a passing run certifies the numerical core on the
machine at hand. The registry is shared with the test suite; the command
line reports one line per check and fails with the first failing name.
"""

import math
import os
import time
from collections import namedtuple
from functools import lru_cache

import numpy as np

from . import ssm
from . import tensor as T
from .backbone import BackboneConfig, ModelConfig, init_model
from .block import ScsmConfig, init_scsm, scsm_forward
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, load_config, parse_config, serialize_config
from .csm import CsmConfig, channel_sequence_sensitivity, init_csm
from .harness import (LEDGER_HEADER, TrainConfig, finetune_novel, read_ledger,
                      record_row, rows_equal_ignoring_walltime, train_base)
from .imageio import read_pgm, write_pgm
from .params import named_params, param_digest
from .shapes import default_episodes, synthesize_dataset
from .tensor import Tensor

CheckResult = namedtuple("CheckResult", "name ok detail seconds")

CHECKS = []


def _check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def run_checks(names=None, out_root=None):
    """Run the registered checks (all by default) and return CheckResults.

    With out_root, also cross-check every ledger row's embedded config hash
    against the serialized config file stored beside the ledger.
    """
    selected = list(CHECKS)
    if out_root is not None:
        selected.append(("ledger_config_hashes", lambda: check_ledger(out_root)))
    if names:
        known = {n for n, _ in selected}
        bad = sorted(set(names) - known)
        if bad:
            raise ValueError(f"unknown checks: {', '.join(bad)}")
        selected = [(n, f) for n, f in selected if n in names]
    results = []
    for name, fn in selected:
        t0 = time.perf_counter()
        try:
            detail = fn() or ""
            ok = True
        except Exception as exc:  # a check failing is data, not a crash
            detail = f"{type(exc).__name__}: {exc}"
            ok = False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results


# ------------------------------------------------------------ kernel oracles

@_check("zoh_closed_form")
def zoh_closed_form(n_pairs=10_000, tol=1e-12, seed=101):
    """Discretization against the scalar exp/expm1 closed form, including a
    band of |a*dt| values straddling the series-branch boundary."""
    rng = np.random.default_rng(seed)
    a = -np.exp(rng.uniform(np.log(1e-9), np.log(1e4), size=n_pairs))
    dt = np.exp(rng.uniform(np.log(1e-5), np.log(10.0), size=n_pairs))
    # force ~5% of the pairs to land within a decade of the branch point
    k = n_pairs // 20
    dt[:k] = np.exp(rng.uniform(np.log(0.2e-6), np.log(5e-6), size=k)) / -a[:k]
    worst = 0.0
    for ai, di in zip(a, dt):
        got_a, got_b = ssm.zoh_coeffs(np.array([ai]), di)
        z = di * ai
        worst = max(worst,
                    abs(got_a[0] - math.exp(z)),
                    abs(got_b[0] - di * (math.expm1(z) / z)))
    if worst >= tol:
        raise AssertionError(f"max abs err {worst:.3e} >= {tol:g}")
    return f"{n_pairs} pairs, max abs err {worst:.1e}"


@_check("scan_equivalence")
def scan_equivalence(instances=200, max_len=4096, max_d=64, tol=1e-10, seed=102):
    """Work-efficient parallel scan against the sequential recurrence on
    random instances spanning short and long sequences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.no_grad():
        for i in range(instances):
            length = int(np.exp(rng.uniform(0.0, np.log(max_len))))
            d = int(rng.integers(1, max_d + 1))
            b = int(rng.integers(1, 4))
            a_d = Tensor(rng.uniform(0.05, 0.999, size=d))
            disc = ssm.Discretized(a_d=a_d, b_d_t=Tensor(rng.normal(size=(b, length, d))))
            c_t = Tensor(rng.normal(size=(b, length, d)))
            x = Tensor(rng.normal(size=(b, length, d)))
            ys = ssm.ssm_scan_sequential(disc, c_t, x).data
            yp = ssm.ssm_scan_parallel(disc, c_t, x).data
            worst = max(worst, float(np.max(np.abs(ys - yp))))
            if worst >= tol:
                raise AssertionError(
                    f"instance {i} (L={length}, D={d}): gap {worst:.3e} >= {tol:g}")
    return f"{instances} instances, max gap {worst:.1e}"


@_check("scan_unroll")
def scan_unroll(instances=20, tol=1e-10, seed=103):
    """The scan node against a brute-force python recurrence (L<=16, D<=8)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        length = int(rng.integers(1, 17))
        d = int(rng.integers(1, 9))
        b = int(rng.integers(1, 3))
        a_d = rng.uniform(0.05, 0.999, size=d)
        b_d_t = rng.normal(size=(b, length, d))
        c_t = rng.normal(size=(b, length, d))
        x = rng.normal(size=(b, length, d))
        disc = ssm.Discretized(a_d=Tensor(a_d), b_d_t=Tensor(b_d_t))
        got = ssm.ssm_scan_sequential(disc, Tensor(c_t), Tensor(x)).data
        h = np.zeros((b, d))
        for t_i in range(length):
            h = a_d * h + b_d_t[:, t_i] * x[:, t_i]
            worst = max(worst, float(np.max(np.abs(got[:, t_i] - c_t[:, t_i] * h))))
    if worst >= tol:
        raise AssertionError(f"max abs err {worst:.3e} >= {tol:g}")
    return f"{instances} instances, max abs err {worst:.1e}"


# ------------------------------------------------------------- block oracles

def _rand_block(rng, variant="sfm_csm", c_in=8, hw=4, p=2, conv_k=2, perturb=1.0):
    cfg = ScsmConfig(variant=variant, c_in=c_in, hw=hw, c_e=max(1, c_in // 4),
                     p=p, conv_k=conv_k, a_trainable=True)
    w = init_scsm(cfg, rng)
    if perturb:
        for _, t in named_params(w):
            t.data = t.data + perturb * rng.normal(size=t.data.shape) * 0.2
    return cfg, w


@_check("block_identity_at_init")
def block_identity_at_init(tol=1e-15, seed=104):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for variant in ("sfm", "csm", "sfm_csm"):
        cfg, w = _rand_block(rng, variant, perturb=0.0)
        x = Tensor(rng.normal(size=(2, cfg.c_in, cfg.hw, cfg.hw)))
        y = scsm_forward(x, w, cfg)
        scale = float(np.max(np.abs(x.data)))
        gap = float(np.max(np.abs(y.data - x.data))) / scale
        worst = max(worst, gap)
        if gap > tol:
            raise AssertionError(f"{variant}: relative deviation {gap:.3e} > {tol:g}")
    return f"3 variants, max relative deviation {worst:.1e}"


@_check("channel_causality")
def channel_causality(instances=20, seed=105):
    """Exact zero sensitivity of output channel i to later input channels j>i
    on randomly perturbed (post-init) weights."""
    rng = np.random.default_rng(seed)
    for i in range(instances):
        c_e = int(rng.integers(2, 7))
        p = int(rng.integers(2, 4))
        cfg = CsmConfig(p=p, conv_k=int(rng.integers(1, 4)), a_trainable=True)
        w = init_csm(cfg, rng)
        for _, t in named_params(w):
            t.data = t.data + rng.normal(size=t.data.shape) * 0.3
        t_in = rng.normal(size=(c_e, cfg.pool_len))
        sens = channel_sequence_sensitivity(t_in, w, cfg)
        upper = sens[np.triu_indices(c_e, k=1)]
        if upper.size and float(np.max(np.abs(upper))) != 0.0:
            raise AssertionError(f"instance {i}: nonzero sensitivity above the diagonal")
    return f"{instances} instances, strict upper triangle all zero"


@_check("block_gradients")
def block_gradients(entries_per_tensor=3, tol=1e-4, eps=1e-5, seed=106):
    """Central finite differences on a sample of entries of every parameter
    of a perturbed full block (both attention and channel-scan paths live)."""
    rng = np.random.default_rng(seed)
    cfg, w = _rand_block(rng, "sfm_csm")
    x = Tensor(rng.normal(size=(2, cfg.c_in, cfg.hw, cfg.hw)), requires_grad=True)
    proj = rng.normal(size=(2, cfg.c_in, cfg.hw, cfg.hw))

    def build_loss():
        return T.sum_(scsm_forward(x, w, cfg) * Tensor(proj))

    def loss_value():
        with T.no_grad():
            return float(build_loss().data)

    params = list(named_params(w)) + [("x", x)]
    for _, t in params:
        t.grad = None
    build_loss().backward()
    worst = 0.0
    for name, t in params:
        if t.grad is None:
            raise AssertionError(f"no gradient reached {name}")
        flat = t.data.reshape(-1)
        gflat = np.asarray(t.grad).reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size),
                           replace=False)
        for idx in picks:
            keep = flat[idx]
            flat[idx] = keep + eps
            fp = loss_value()
            flat[idx] = keep - eps
            fm = loss_value()
            flat[idx] = keep
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[idx] - num) / max(1.0, abs(gflat[idx]))
            worst = max(worst, err)
            if err >= tol:
                raise AssertionError(f"{name}[{idx}]: rel err {err:.3e} >= {tol:g}")
    return f"{len(params)} tensors spot-checked, max rel err {worst:.1e}"


# --------------------------------------------------------- training contract

@lru_cache(maxsize=1)
def _tiny_world():
    spec = default_episodes(seed=7, n_base=6, k_shots=3, n_eval=4)
    ds = synthesize_dataset(spec)
    mcfg = ModelConfig(variant="sfm_csm", n_classes=len(spec.base_classes),
                       backbone=BackboneConfig(stage_channels=(8, 8, 8)),
                       p=2, conv_k=2)
    tcfg = TrainConfig(base_steps=6, novel_steps=8, batch_size=8)
    model = init_model(mcfg, seed=spec.seed)
    train_base(model, ds, tcfg, seed=spec.seed)
    return spec, ds, model, tcfg


@_check("freeze_contract")
def freeze_contract():
    _, ds, model, tcfg = _tiny_world()
    before = param_digest(model, match=lambda p: p.startswith("backbone"))
    tuned, _ = finetune_novel(model, ds, k=2, tcfg=tcfg, run_seed=0)
    after_base = param_digest(model, match=lambda p: p.startswith("backbone"))
    after_tuned = param_digest(tuned, match=lambda p: p.startswith("backbone"))
    if before != after_base or before != after_tuned:
        raise AssertionError("backbone bytes changed during novel fine-tuning")
    return f"{tcfg.novel_steps} steps, backbone digest {before[:12]} unchanged"


@_check("run_determinism")
def run_determinism():
    _, ds, model, tcfg = _tiny_world()
    _, rec1 = finetune_novel(model, ds, k=2, tcfg=tcfg, run_seed=1)
    _, rec2 = finetune_novel(model, ds, k=2, tcfg=tcfg, run_seed=1)
    rows = [dict(zip(LEDGER_HEADER, record_row(r))) for r in (rec1, rec2)]
    if not rows_equal_ignoring_walltime(*rows):
        raise AssertionError("identical seed reproduced different metrics")
    return f"repeat run identical (accuracy {rec1.accuracy:.3f})"


@_check("checkpoint_roundtrip")
def checkpoint_roundtrip(seed=107, tmp=None):
    import tempfile
    rng = np.random.default_rng(seed)
    cfg, w = _rand_block(rng, "sfm_csm")
    with tempfile.TemporaryDirectory(dir=tmp) as td:
        path = os.path.join(td, "w.ckpt")
        save_checkpoint(path, w)
        stored = load_checkpoint(path)
        live = dict(named_params(w))
        if set(stored) != set(live):
            raise AssertionError("path sets differ after round trip")
        for key, arr in stored.items():
            if arr.tobytes() != live[key].data.tobytes():
                raise AssertionError(f"bytes differ at {key}")
        other = init_scsm(ScsmConfig(variant="csm", c_in=8, hw=4, p=2, conv_k=2),
                          rng)
        try:
            from .checkpoint import restore_checkpoint
            restore_checkpoint(path, other)
        except CheckpointError:
            pass
        else:
            raise AssertionError("restore accepted mismatched parameter paths")
    return f"{len(stored)} tensors bit-identical; mismatch rejected"


@_check("pgm_roundtrip")
def pgm_roundtrip(seed=108, tmp=None):
    import tempfile
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(9, 7), dtype=np.uint8)
    with tempfile.TemporaryDirectory(dir=tmp) as td:
        path = os.path.join(td, "m.pgm")
        write_pgm(path, img)
        back = read_pgm(path)
    if not np.array_equal(img, back):
        raise AssertionError("PGM round trip altered pixel bytes")
    return "9x7 map round-trips bit-exactly"


@_check("config_hash_stability")
def config_hash_stability():
    rc = RunConfig()
    if parse_config(serialize_config(rc)) != rc:
        raise AssertionError("canonical serialization does not round-trip")
    h1, h2 = config_hash(rc), config_hash(parse_config(serialize_config(rc)))
    if h1 != h2:
        raise AssertionError("config hash not reproducible")
    try:
        parse_config("no_such_key = 1")
    except Exception:
        pass
    else:
        raise AssertionError("unknown config key was accepted")
    return f"round-trip stable, hash {h1}"


# --------------------------------------------------------- artifact auditing

def check_ledger(out_root):
    """Re-hash the serialized config behind every ledger row and compare with
    the hash embedded in the row. Missing config files are failures too."""
    ledger = os.path.join(out_root, "ledger.csv")
    if not os.path.exists(ledger):
        return f"no ledger at {ledger}; nothing to cross-check"
    rows = read_ledger(ledger)
    seen = set()
    for row in rows:
        h = row["config_hash"]
        if not h or h in seen:
            continue
        seen.add(h)
        cfg_path = os.path.join(out_root, "configs", f"{h}.cfg")
        if not os.path.exists(cfg_path):
            raise AssertionError(f"row references config {h} but {cfg_path} is missing")
        if config_hash(load_config(cfg_path)) != h:
            raise AssertionError(f"config file {cfg_path} no longer hashes to {h}")
    return f"{len(rows)} rows, {len(seen)} distinct configs cross-checked"
