"""The residual adapter block that combines both mixers.

One block = spatial attention feeding the channel-sequence scan, wrapped in
a residual connection whose expansion projection starts at zero. A freshly
built block is therefore an exact identity map — it can be dropped into a
pretrained backbone without changing a single activation — and only starts
contributing once training moves the expansion off zero.
"""

import numpy as np

from scsm import tensor as T
from scsm.block import ScsmConfig, init_scsm, scsm_forward
from scsm.params import named_params, uniform_init
from scsm.tensor import Tensor

rng = np.random.default_rng(5)

for variant in ("sfm", "csm", "sfm_csm"):
    cfg = ScsmConfig(variant=variant, c_in=32, hw=6, p=4)
    w = init_scsm(cfg, rng)
    x = Tensor(rng.normal(size=(2, 32, 6, 6)))
    y = scsm_forward(x, w, cfg)
    names = [p for p, _ in named_params(w)]
    print(f"{variant:8s}: {len(names):2d} tensors, "
          f"identity gap at init = {np.abs(y.data - x.data).max():.1f}")

# -- gradient coverage once the zero-init maps are perturbed --------------------
cfg = ScsmConfig(variant="sfm_csm", c_in=32, hw=6, p=4)
w = init_scsm(cfg, rng)
w.expand_w.data[:] = uniform_init(rng, w.expand_w.shape, cfg.width).data
w.csm.w_out.data[:] = uniform_init(rng, w.csm.w_out.shape, cfg.p * cfg.p).data

x = Tensor(rng.normal(size=(2, 32, 6, 6)))
y = scsm_forward(x, w, cfg)
loss = T.sum_(T.mul(y, y))
loss.backward()
dead = [p for p, t in named_params(w)
        if t.requires_grad and (t.grad is None or not np.abs(t.grad).any())]
live = sum(1 for _, t in named_params(w) if t.requires_grad)
print(f"full variant after perturbation: gradient reaches "
      f"{live - len(dead)}/{live} trainable tensors {dead or ''}")
print("done: drop-in residual block, exact identity until trained")
