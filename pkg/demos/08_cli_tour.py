"""Driving the whole system through the command-line front end.

Every capability is reachable from the `scsm` console command; this script
calls the same entry point in-process on a deliberately tiny configuration
and walks the artifact tree it leaves behind. Counts are shrunken to make
the tour fast — accuracy numbers here mean nothing, the point is the
plumbing: checkpoints, the run ledger, config hashing, CSV/SVG/PGM outputs,
and the verifier.
"""

import os
import tempfile

from scsm.cli import main

root = tempfile.mkdtemp(prefix="scsm_tour_")
cfg_path = os.path.join(root, "tour.cfg")
with open(cfg_path, "w") as fh:
    fh.write(f"""
# tiny tour configuration; every key is optional and defaulted
variant     = sfm_csm
seeds       = 0,1
ks          = 1,3
k_shots     = 3
n_base      = 12
n_eval      = 8
base_steps  = 60
novel_steps = 40
probe_steps = 60
batch_size  = 8
top_k       = 3
out_dir     = {os.path.join(root, "runs")}
""".lstrip())


def run(*argv):
    code = main(list(argv))
    print(f"  $ scsm {' '.join(argv)}  ->  exit {code}")
    return code


print(f"workspace: {root}")
run("train-base", "--config", cfg_path)
run("finetune-novel", "--config", cfg_path, "--k", "3")
run("eval", "--config", cfg_path, "--split", "novel",
    "--ckpt", os.path.join(root, "runs", "checkpoints", "sfm_csm_s0_k3.ckpt"))
run("ablation", "--config", cfg_path)
run("probe", "--config", cfg_path, "--k", "3")
run("retention", "--config", cfg_path, "--k", "3")
run("export-maps", "--config", cfg_path, "--k", "3")
run("bench-scan", "--config", cfg_path, "--length", "512", "--dim", "16",
    "--batch", "2", "--repeats", "1")
run("verify", "--config", cfg_path)

# errors are one-line and machine-parsable, with documented exit codes
print("a deliberate mistake — fine-tuning where no base model was trained:")
os.environ["SCSM_OUTPUT_ROOT"] = os.path.join(root, "empty")
run("finetune-novel", "--config", cfg_path, "--k", "1")
del os.environ["SCSM_OUTPUT_ROOT"]

print("\nartifacts:")
for dirpath, dirnames, filenames in sorted(os.walk(root)):
    dirnames.sort()
    rel = os.path.relpath(dirpath, root)
    for name in sorted(filenames)[:6]:
        print("  ", os.path.join(rel, name))
    if len(filenames) > 6:
        print(f"   {rel}/... ({len(filenames) - 6} more)")
print("done: one entry point, reproducible artifacts, honest exit codes")
