"""Command-line front end: ``scsm <command> [--config FILE] [overrides]``.

Commands
--------
train-base       stage-one training on the base split; saves a checkpoint
finetune-novel   stage-two K-shot fine-tune starting from the base checkpoint
eval             re-evaluate a saved checkpoint on the base or novel split
ablation         variant/seed/K grid reduced to a median table (CSV + SVG)
probe            fit the channel probe on the shot images, save its weights
retention        masked-accuracy retention curves per variant (CSV + SVG)
export-maps      PGM dumps of the top-weighted channel maps
bench-scan       sequential vs parallel scan timing (CSV)
verify           run every oracle check; exit 3 naming the first failure

Every training run appends to one ledger (``ledger.csv``) under the output
root, and the exact configuration is serialized to ``configs/<hash>.cfg``
with the hash embedded in each row, so any row traces back to its config.
``--out`` overrides the config file's ``out_dir``; the ``SCSM_OUTPUT_ROOT``
environment variable overrides both.  All ledger appends happen on the main
process after any worker fan-out has been joined.

Errors print one machine-parsable ``error: <class>: <detail>`` line.
Usage problems and bad inputs exit 2; a failed verification exits 3.
"""

import argparse
import csv
import os
import sys

import numpy as np

from .backbone import init_model
from .checkpoint import (CheckpointError, load_checkpoint, restore_checkpoint,
                         save_checkpoint)
from .config import (ConfigError, RunConfig, config_hash, episode_spec,
                     load_config, model_config, output_root, override,
                     save_config, train_config)
from .harness import (ABLATION_VARIANTS, append_records, evaluate,
                      finetune_novel, median_table, prepare_inputs,
                      train_base)
from .harness import ablation_suite as _ablation_suite
from .params import set_trainable
from .probe import (append_retention, channel_weights, degradation_area,
                    export_channel_maps, init_probe, retention_curve,
                    train_probe)
from .shapes import novel_shots, synthesize_dataset
from .ssm import benchmark
from .svg import render_line_chart
from .verify import run_checks
from . import tensor as T
from .backbone import stage_maps


class CliError(Exception):
    """Carries the machine-parsable error class and the exit code."""

    def __init__(self, label, detail, code=2):
        super().__init__(detail)
        self.label = label
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# --------------------------------------------------------------- plumbing


def _resolve_config(args):
    """Config file (if any) + command-line overrides -> RunConfig."""
    cfg = load_config(args.config) if args.config else RunConfig()
    return override(
        cfg,
        out_dir=args.out,
        variant=args.variant,
        seed=args.seed,
        seeds=_seed_list(args.seeds),
        ks=args.ks,
        k_shots=args.k,
        stage=args.mode,
        scan_variant=args.scan,
        workers=args.workers,
        probe_stage=args.stage,
        qs=args.qs,
        top_k=args.top_k,
    )


def _seed_list(text):
    """``5`` means seeds 0..4; ``3,7`` (comma present) means exactly those,
    so a single explicit seed is written with a trailing comma: ``7,``."""
    if text is None:
        return None
    if "," in text:
        return ",".join(p for p in (s.strip() for s in text.split(",")) if p)
    try:
        n = int(text)
    except ValueError:
        return text  # let the config parser produce the error message
    return ",".join(str(s) for s in range(n))


def _prepared_root(cfg):
    root = output_root(cfg)
    os.makedirs(os.path.join(root, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(root, "configs"), exist_ok=True)
    return root


def _ledger(root, cfg, records, chash):
    save_config(os.path.join(root, "configs", f"{chash}.cfg"), cfg)
    for r in records:
        r.config_hash = chash
    append_records(os.path.join(root, "ledger.csv"), records)


def _dataset(cfg, root):
    spec = episode_spec(cfg)
    return spec, synthesize_dataset(spec, cache_dir=os.path.join(root, "data"))


def _base_ckpt(root, variant):
    return os.path.join(root, "checkpoints", f"{variant}_base.ckpt")


def _tuned_ckpt(root, variant, seed, k):
    return os.path.join(root, "checkpoints", f"{variant}_s{seed}_k{k}.ckpt")


def _probe_ckpt(root, variant, seed, k):
    return os.path.join(root, "checkpoints", f"probe_{variant}_s{seed}_k{k}.ckpt")


def _need(path, hint):
    if not os.path.exists(path):
        raise CliError("checkpoint", f"missing checkpoint {path} ({hint})")
    return path


def _restore_model(cfg, path, n_classes=None):
    """Rebuild a model of the configured shape from a checkpoint. The head
    width is read off the stored bias unless the caller pins it."""
    weights = load_checkpoint(path)
    if "head_b" not in weights:
        raise CliError("checkpoint", f"{path} does not hold a model (no head)")
    n = n_classes or weights["head_b"].shape[0]
    model = init_model(model_config(cfg, n_classes=n), seed=cfg.seed)
    restore_checkpoint(path, model)
    return model


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)


# --------------------------------------------------------------- commands


def _cmd_train_base(cfg, args):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    model = init_model(model_config(cfg, n_classes=len(spec.base_classes)),
                       seed=cfg.seed)
    rec = train_base(model, ds, train_config(cfg), seed=cfg.seed)
    path = _base_ckpt(root, cfg.variant)
    save_checkpoint(path, model)
    _ledger(root, cfg, [rec], config_hash(cfg))
    print(f"train-base variant={cfg.variant} seed={cfg.seed} "
          f"base-accuracy={rec.accuracy:.4f} checkpoint={path}")
    return 0


def _cmd_finetune(cfg, args):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    base_path = _base_ckpt(root, cfg.variant)
    _need(base_path, "run train-base first")
    model = _restore_model(cfg, base_path, n_classes=len(spec.base_classes))
    run_seed = cfg.seeds[0]
    tuned, rec = finetune_novel(model, ds, cfg.k_shots, train_config(cfg),
                                run_seed=run_seed, mode=cfg.stage)
    path = _tuned_ckpt(root, cfg.variant, run_seed, cfg.k_shots)
    save_checkpoint(path, tuned)
    _ledger(root, cfg, [rec], config_hash(cfg))
    print(f"finetune-novel variant={cfg.variant} seed={run_seed} "
          f"k={cfg.k_shots} mode={cfg.stage} accuracy={rec.accuracy:.4f} "
          f"checkpoint={path}")
    return 0


def _cmd_eval(cfg, args):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    path = args.ckpt or _base_ckpt(root, cfg.variant)
    _need(path, "nothing to evaluate")
    model = _restore_model(cfg, path)
    n_out = model.head_b.data.shape[0]
    n_base, n_novel = len(spec.base_classes), len(spec.novel_classes)
    if args.split == "base":
        if n_out not in (n_base, n_base + n_novel):
            raise CliError("config", f"checkpoint head has {n_out} outputs; "
                           f"the base split needs {n_base} (or "
                           f"{n_base + n_novel} for a gfsod head)")
        x, y = ds.base_eval_x, ds.base_eval_y
    else:
        if n_out == n_novel:
            x, y = ds.novel_eval_x, ds.novel_eval_y
        elif n_out == n_base + n_novel:
            x, y = ds.novel_eval_x, ds.novel_eval_y + n_base
        else:
            raise CliError("config", f"checkpoint head has {n_out} outputs; "
                           f"the novel split needs {n_novel} (or "
                           f"{n_base + n_novel} for a gfsod head)")
    acc = evaluate(model, x, y, scan_variant=cfg.scan_variant)
    print(f"eval checkpoint={path} split={args.split} accuracy={acc:.4f}")
    return 0


def _cmd_ablation(cfg, args):
    root = _prepared_root(cfg)
    spec = episode_spec(cfg)
    mcfg = model_config(cfg)
    model_kw = dict(heads=mcfg.heads, c_e_ratio=mcfg.c_e_ratio, p=mcfg.p,
                    d=mcfg.d, conv_k=mcfg.conv_k,
                    scale_scores=mcfg.scale_scores,
                    square_input=mcfg.square_input,
                    dt_reading=mcfg.dt_reading, a_trainable=mcfg.a_trainable)
    records, medians = _ablation_suite(
        seeds=cfg.seeds, ks=cfg.ks, variants=ABLATION_VARIANTS,
        tcfg=train_config(cfg), spec=spec, model_kw=model_kw,
        workers=cfg.workers or None,
        save_dir=os.path.join(root, "checkpoints"))
    _ledger(root, cfg, records, config_hash(cfg))
    rows = median_table(medians, ks=cfg.ks)
    _write_csv(os.path.join(root, "ablation_medians.csv"), rows[0], rows[1:])
    series = {v: [(k, medians[(v, k)]) for k in cfg.ks]
              for v in ABLATION_VARIANTS}
    render_line_chart(series, title="Median novel accuracy by variant",
                      x_label="shots K", y_label="accuracy",
                      path=os.path.join(root, "ablation.svg"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return 0


def _finetuned_with_probe(cfg, root, spec, ds, variant, run_seed):
    """Fine-tuned model + probe for one (variant, seed), reusing checkpoints
    when present and creating (and ledgering) them when not."""
    records = []
    base_path = _base_ckpt(root, variant)
    vcfg = override(cfg, variant=variant)
    if os.path.exists(base_path):
        base = _restore_model(vcfg, base_path,
                              n_classes=len(spec.base_classes))
    else:
        base = init_model(model_config(vcfg, n_classes=len(spec.base_classes)),
                          seed=cfg.seed)
        records.append(train_base(base, ds, train_config(cfg), seed=cfg.seed))
        save_checkpoint(base_path, base)
    tuned_path = _tuned_ckpt(root, variant, run_seed, cfg.k_shots)
    if os.path.exists(tuned_path):
        tuned = _restore_model(vcfg, tuned_path)
    else:
        tuned, rec = finetune_novel(base, ds, cfg.k_shots, train_config(cfg),
                                    run_seed=run_seed)
        records.append(rec)
        save_checkpoint(tuned_path, tuned)
    set_trainable(tuned, False)
    sx, sy = novel_shots(spec, run_seed, cfg.k_shots)
    probe = train_probe(tuned, sx, sy, stage=cfg.probe_stage,
                        steps=cfg.probe_steps, lr=cfg.probe_lr, seed=run_seed)
    if records:
        _ledger(root, vcfg, records, config_hash(vcfg))
    return tuned, probe, sx


def _cmd_probe(cfg, args):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    run_seed = cfg.seeds[0]
    tuned, probe, sx = _finetuned_with_probe(cfg, root, spec, ds, cfg.variant,
                                             run_seed)
    path = _probe_ckpt(root, cfg.variant, run_seed, cfg.k_shots)
    save_checkpoint(path, probe)
    with T.no_grad():
        f = stage_maps(tuned, T.Tensor(prepare_inputs(sx)),
                       scan_variant=cfg.scan_variant)[cfg.probe_stage]
        mean_w = channel_weights(probe, f).data.mean(axis=0)
    top = np.argsort(-mean_w, kind="stable")[:cfg.top_k]
    listing = " ".join(f"{ch}:{mean_w[ch]:.3f}" for ch in top)
    print(f"probe variant={cfg.variant} seed={run_seed} stage={cfg.probe_stage} "
          f"top-channels {listing} checkpoint={path}")
    return 0


def _cmd_retention(cfg, args, variants=None):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    variants = variants or ((cfg.variant,) if args.variant else
                            ("sfm", "sfm_csm"))
    csv_path = os.path.join(root, "retention.csv")
    medians = {}
    for variant in variants:
        areas = []
        curves = []
        for run_seed in cfg.seeds:
            tuned, probe, _ = _finetuned_with_probe(cfg, root, spec, ds,
                                                    variant, run_seed)
            report = retention_curve(tuned, probe, ds.novel_eval_x,
                                     ds.novel_eval_y, qs=cfg.qs,
                                     stage=cfg.probe_stage,
                                     scan_variant=cfg.scan_variant)
            append_retention(csv_path, variant, run_seed, cfg.k_shots, report)
            areas.append(degradation_area(report))
            curves.append(report.accuracies)
        med_curve = np.median(np.array(curves), axis=0)
        medians[variant] = float(np.median(areas))
        print(f"retention variant={variant} seeds={len(cfg.seeds)} "
              f"k={cfg.k_shots} median-area={medians[variant]:+.4f} "
              f"median-curve {' '.join(f'{q}:{a:.3f}' for q, a in zip(cfg.qs, med_curve))}")
    rows = _read_retention(csv_path)
    series = _retention_series(rows, variants, cfg)
    render_line_chart(series, title="Retention by kept-channel fraction",
                      x_label="kept channels (%)", y_label="novel accuracy",
                      path=os.path.join(root, "retention.svg"))
    return 0


def _read_retention(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [dict(zip(rows[0], r)) for r in rows[1:]]


def _retention_series(rows, variants, cfg):
    """Median accuracy per (variant, q) from the retention CSV."""
    series = {}
    for variant in variants:
        pts = []
        for q in cfg.qs:
            accs = [float(r["accuracy"]) for r in rows
                    if r["variant"] == variant and int(r["q"]) == q
                    and int(r["k"]) == cfg.k_shots]
            if accs:
                pts.append((q, float(np.median(accs))))
        if pts:
            series[variant] = pts
    return series


def _cmd_export_maps(cfg, args):
    root = _prepared_root(cfg)
    spec, ds = _dataset(cfg, root)
    run_seed = cfg.seeds[0]
    tuned_path = _need(_tuned_ckpt(root, cfg.variant, run_seed, cfg.k_shots),
                       "run finetune-novel first")
    probe_path = _need(_probe_ckpt(root, cfg.variant, run_seed, cfg.k_shots),
                       "run probe first")
    tuned = _restore_model(cfg, tuned_path)
    stage = range(len(tuned.backbone.stages))[cfg.probe_stage]
    n_ch = tuned.backbone.stages[stage].w.data.shape[0]
    probe = init_probe(n_ch, np.random.default_rng(0))
    restore_checkpoint(probe_path, probe)
    out_dir = os.path.join(root, "maps")
    paths = export_channel_maps(tuned, probe, ds.novel_eval_x,
                                top_k=cfg.top_k, out_dir=out_dir,
                                stage=cfg.probe_stage,
                                scan_variant=cfg.scan_variant)
    print(f"export-maps wrote {len(paths)} PGM maps to {out_dir}")
    return 0


def _cmd_bench(cfg, args):
    root = _prepared_root(cfg)
    workers = cfg.workers if cfg.workers >= 1 else 4
    res = benchmark(length=args.length, d=args.dim, batch=args.batch,
                    workers=workers, repeats=args.repeats, seed=cfg.seed)
    rows = [("sequential", res["L"], res["D"], res["batch"],
             repr(res["sequential_ns_per_element"]), repr(res["checksum"])),
            ("parallel", res["L"], res["D"], res["batch"],
             repr(res["parallel_ns_per_element"]), repr(res["checksum"]))]
    _write_csv(os.path.join(root, "bench.csv"),
               ("variant", "L", "D", "batch", "ns_per_element", "checksum"),
               rows)
    for name in ("sequential", "parallel"):
        print(f"bench-scan {name} L={res['L']} D={res['D']} "
              f"batch={res['batch']} ns-per-element="
              f"{res[f'{name}_ns_per_element']:.3f}")
    print(f"bench-scan parallel/sequential ratio="
          f"{res['parallel_ns'] / res['sequential_ns']:.3f} "
          f"workers={workers} max-gap={res['max_abs_gap']:.2e} "
          f"checksum={res['checksum']!r}")
    return 0


def _cmd_verify(cfg, args):
    root = output_root(cfg)
    results = run_checks(out_root=root if os.path.isdir(root) else None)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:28s} {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise CliError("verify", failed[0], code=3)
    print(f"verify: all {len(results)} checks passed")
    return 0


# ------------------------------------------------------------------ parser


_COMMANDS = {
    "train-base": _cmd_train_base,
    "finetune-novel": _cmd_finetune,
    "eval": _cmd_eval,
    "ablation": _cmd_ablation,
    "probe": _cmd_probe,
    "retention": _cmd_retention,
    "export-maps": _cmd_export_maps,
    "bench-scan": _cmd_bench,
    "verify": _cmd_verify,
}


def _build_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="flat key = value file")
    g.add_argument("--out", metavar="DIR", help="output root (out_dir)")
    g.add_argument("--variant",
                   choices=("baseline", "sfm", "csm", "sfm_csm"))
    g.add_argument("--seed", metavar="N", help="master seed (data + base)")
    g.add_argument("--seeds", metavar="N|LIST",
                   help="run seeds: a bare count N means 0..N-1; "
                        "a comma list is used as given")
    g.add_argument("--ks", metavar="LIST", help="shot counts, e.g. 1,2,5,10")
    g.add_argument("--k", metavar="N", help="shots per class (k_shots)")
    g.add_argument("--mode", choices=("novel", "gfsod"),
                   help="fine-tuning stage flavour")
    g.add_argument("--scan", choices=("sequential", "parallel"),
                   help="scan kernel used by training and eval")
    g.add_argument("--workers", metavar="N", help="worker fan-out (0 = auto)")
    g.add_argument("--stage", metavar="I", help="probed stage index")
    g.add_argument("--qs", metavar="LIST", help="retention levels (percent)")
    g.add_argument("--top-k", dest="top_k", metavar="N",
                   help="channels listed / exported")

    parser = _Parser(prog="scsm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    for name in _COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--ckpt", metavar="FILE",
                           help="checkpoint to evaluate (default: base)")
            p.add_argument("--split", choices=("base", "novel"),
                           default="base")
        if name == "bench-scan":
            p.add_argument("--length", type=int, default=4096)
            p.add_argument("--dim", type=int, default=64)
            p.add_argument("--batch", type=int, default=8)
            p.add_argument("--repeats", type=int, default=3)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: {exc.label}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
