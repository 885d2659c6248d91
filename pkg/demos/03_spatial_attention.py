"""Multi-head attention over the spatial patch grid.

The spatial module compresses the channel axis with a 1x1 conv and runs
multi-head self-attention across the flattened H*W patch sequence. Because
there is no positional encoding, the module is permutation-equivariant:
shuffle the patches and the outputs shuffle the same way. That property is
demonstrated numerically below.
"""

import numpy as np

from scsm import tensor as T
from scsm.sfm import default_sfm_config, init_sfm, sfm_forward, to_patch_sequence
from scsm.tensor import Tensor

rng = np.random.default_rng(3)
cfg = default_sfm_config(c_in=32, ratio=4, heads=2)
w = init_sfm(cfg, rng)
print(f"config: {cfg.c_in} channels compressed to {cfg.c_e}, "
      f"{cfg.heads} heads of width {cfg.d_head}")

x = Tensor(rng.normal(size=(2, 32, 6, 6)))
y = sfm_forward(x, w, cfg)
print(f"forward: image features {x.shape} -> patch sequence {y.shape} "
      f"(S=H*W, B, C_e)")

# -- permutation equivariance -------------------------------------------------
# Shuffle the 36 patch positions of the input, run again, and un-shuffle the
# output: it should match the original run exactly.
perm = rng.permutation(36)
xs = to_patch_sequence(x).data          # [S, B, C]
xp = Tensor(xs[perm].transpose(1, 2, 0).reshape(2, 32, 6, 6))
yp = sfm_forward(xp, w, cfg)
unshuffled = np.empty_like(yp.data)
unshuffled[perm] = yp.data
gap = np.abs(unshuffled - y.data).max()
print(f"permutation equivariance: max|gap| after un-shuffling = {gap:.2e}")

# -- attention is a convex mixture --------------------------------------------
# Each output position is a weighted average of value vectors, so a constant
# input over patches must stay constant over patches.
const = Tensor(np.broadcast_to(rng.normal(size=(2, 32, 1, 1)),
                               (2, 32, 6, 6)).copy())
yc = sfm_forward(const, w, cfg).data
print(f"constant input -> per-patch spread of the output: "
      f"{np.ptp(yc, axis=0).max():.2e}")

# -- gradients reach every projection -----------------------------------------
loss = T.sum_(T.mul(y, y))
loss.backward()
flat = [np.abs(g.grad).max() for g in [w.compress_w, w.w_m] + list(w.wq + w.wk + w.wv)]
print(f"backward: smallest max|grad| over projections = {min(flat):.2e}")

print("done: attention mixes patches, order does not matter")
