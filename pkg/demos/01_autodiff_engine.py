"""Tour of the reverse-mode engine that everything else is built on.

The engine records a tape of operations on Tensor objects and replays it
backwards to accumulate gradients. This script walks through the life of a
small computation: forward, backward, a finite-difference cross-check, and
the bookkeeping rules (grad starts as None, no_grad suspends recording).
"""

import numpy as np

from scsm import tensor as T
from scsm.tensor import Tensor

rng = np.random.default_rng(7)

# -- forward: a two-layer MLP squashed to a scalar loss ----------------------
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 5)) * 0.5, requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 2)) * 0.5, requires_grad=True)

hidden = T.relu(T.matmul(x, w1))
out = T.matmul(hidden, w2)
loss = T.mean_(T.mul(out, out))
print(f"forward: x{x.shape} -> hidden{hidden.shape} -> out{out.shape} "
      f"-> loss {loss.item():.6f}")

# -- gradients are None until backward runs ----------------------------------
print(f"before backward: w1.grad is {w1.grad}")
loss.backward()
print(f"after  backward: |w1.grad| mean {np.abs(w1.grad).mean():.6f}, "
      f"|w2.grad| mean {np.abs(w2.grad).mean():.6f}")

# -- cross-check one entry against central finite differences ----------------
eps = 1e-6
i, j = 1, 2


def loss_at(v):
    keep = w1.data[i, j]
    w1.data[i, j] = v
    with T.no_grad():
        val = T.mean_(T.mul(T.matmul(T.relu(T.matmul(x, w1)), w2),
                            T.matmul(T.relu(T.matmul(x, w1)), w2))).item()
    w1.data[i, j] = keep
    return val


fd = (loss_at(w1.data[i, j] + eps) - loss_at(w1.data[i, j] - eps)) / (2 * eps)
print(f"w1[{i},{j}]: analytic {w1.grad[i, j]:+.8f}  finite-diff {fd:+.8f}  "
      f"gap {abs(w1.grad[i, j] - fd):.2e}")

# -- no_grad really does suspend the tape ------------------------------------
with T.no_grad():
    silent = T.matmul(x, w1)
print(f"inside no_grad nothing is recorded: parents={len(silent._parents)}, "
      f"backward hook={silent._backward}")

# -- zeroing resets the buffer to None, and backward accumulates fresh -------
w1.zero_grad()
w2.zero_grad()
loss2 = T.sum_(T.matmul(T.relu(T.matmul(x, w1)), w2))
loss2.backward()
print(f"after zero_grad + new backward: |w1.grad| mean "
      f"{np.abs(w1.grad).mean():.6f}")

print("done: analytic and numeric gradients agree to a few parts in 1e8")
