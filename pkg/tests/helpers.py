"""Shared test oracles.

The gradient oracle is central finite differences, step 1e-5, float64,
computed element by element with no reference to the library's backward
code. Relative error uses max(1, |analytic|) in the denominator so tiny
gradients are judged on absolute error.
"""
import numpy as np

FD_EPS = 1e-5
TOL_NONLINEAR = 1e-4
TOL_LINEAR = 1e-6


def numeric_grad(f, x, eps=FD_EPS):
    """Central-difference gradient of the scalar function f with respect to
    the ndarray x, which f reads by reference (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        fp = float(f())
        flat[i] = keep - eps
        fm = float(f())
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_grads(build_loss, tensors, tol=TOL_NONLINEAR, eps=FD_EPS):
    """Backward once through build_loss(), then compare every tensor's
    accumulated gradient against the finite-difference oracle.

    tensors: iterable of (name, Tensor) pairs; each Tensor must require grad
    and be a leaf read by build_loss through its .data buffer.
    """
    tensors = list(tensors)
    for _, t in tensors:
        t.grad = None
    loss = build_loss()
    loss.backward()
    worst = {}
    for name, t in tensors:
        assert t.grad is not None, f"no gradient reached {name}"
        num = numeric_grad(lambda: build_loss().data, t.data, eps=eps)
        err = rel_err(t.grad, num)
        worst[name] = err
        assert err < tol, f"{name}: rel err {err:.3e} >= {tol:g}"
    return worst
