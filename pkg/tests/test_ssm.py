import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from scsm import ssm
from scsm import tensor as T
from scsm.tensor import Tensor
from helpers import check_grads, TOL_NONLINEAR


def test_hippo_legs_matches_outer_product_form():
    # independent construction: sqrt(2n+1) outer product below the diagonal,
    # -(n+1) on it
    for n in (1, 2, 3, 8, 17):
        p = np.sqrt(2.0 * np.arange(n) + 1.0)
        want = -(np.tril(np.outer(p, p), -1) + np.diag(np.arange(1.0, n + 1.0)))
        assert_allclose(ssm.hippo_legs(n), want, atol=0)


def test_hippo_legs_d2_values():
    assert_allclose(ssm.hippo_legs(2), [[-1.0, 0.0], [-math.sqrt(3.0), -2.0]], atol=0)


def test_hippo_is_strictly_lower_triangular_with_negative_diag():
    a = ssm.hippo_legs(12)
    assert_array_equal(np.triu(a, 1), np.zeros((12, 12)))
    assert (np.diag(a) == -np.arange(1.0, 13.0)).all()


def test_s4d_real_init_is_hippo_diagonal():
    for d in (1, 2, 5, 64):
        assert_array_equal(ssm.s4d_real_init(d), np.diag(ssm.hippo_legs(d)))


def test_compute_dt_readings():
    assert ssm.compute_dt(ssm.s4d_real_init(2)) == 0.7071067811865475
    assert ssm.compute_dt(ssm.s4d_real_init(4)) == 0.5
    assert ssm.compute_dt(ssm.s4d_real_init(4), reading="min_magnitude") == 1.0
    with pytest.raises(ValueError):
        ssm.compute_dt([-1.0], reading="nonsense")
    with pytest.raises(T.DimensionError):
        ssm.compute_dt([0.0])


def test_zoh_frozen_example():
    a_d, bfac = ssm.zoh_coeffs(np.array([-1.0]), 0.1)
    assert abs(a_d[0] - 0.9048374180359595) < 1e-16
    assert abs(bfac[0] - 0.09516258196404043) < 1e-16


def test_zoh_matches_scalar_closed_form():
    rng = np.random.default_rng(23)
    a = -np.exp(rng.uniform(np.log(1e-8), np.log(1e4), size=2000))
    dt = np.exp(rng.uniform(np.log(1e-4), np.log(10.0), size=2000))
    for ai, di in zip(a, dt):
        got_a, got_b = ssm.zoh_coeffs(np.array([ai]), di)
        z = di * ai
        want_a = math.exp(z)
        want_b = di * (math.expm1(z) / z)
        assert abs(got_a[0] - want_a) < 1e-12
        assert abs(got_b[0] - want_b) < 1e-12


def test_zoh_series_boundary_is_continuous():
    for sign in (1.0, -1.0):
        lo = ssm.zoh_coeffs(np.array([sign * (1e-6 - 1e-12)]), 1.0)
        hi = ssm.zoh_coeffs(np.array([sign * (1e-6 + 1e-12)]), 1.0)
        assert abs(lo[1][0] - hi[1][0]) < 1e-10
        assert abs(lo[0][0] - hi[0][0]) < 1e-10


def _random_scan(rng, b, length, d):
    a_d = Tensor(rng.uniform(0.05, 0.99, size=d))
    disc = ssm.Discretized(a_d=a_d, b_d_t=Tensor(rng.normal(size=(b, length, d))))
    c_t = Tensor(rng.normal(size=(b, length, d)))
    x = Tensor(rng.normal(size=(b, length, d)))
    return disc, c_t, x


def test_scan_matches_unrolled_recurrence():
    rng = np.random.default_rng(24)
    disc, c_t, x = _random_scan(rng, 2, 4, 3)
    y = ssm.ssm_scan_sequential(disc, c_t, x).data
    # hand-unrolled oracle
    a = disc.a_d.data
    bx = disc.b_d_t.data * x.data
    h1 = bx[:, 0]
    h2 = a * h1 + bx[:, 1]
    h3 = a * h2 + bx[:, 2]
    h4 = a * h3 + bx[:, 3]
    want = np.stack([h1, h2, h3, h4], axis=1) * c_t.data
    assert_allclose(y, want, atol=1e-15)


def test_scan_initial_state_is_zero():
    rng = np.random.default_rng(25)
    disc, c_t, x = _random_scan(rng, 1, 5, 4)
    y = ssm.ssm_scan_sequential(disc, c_t, x).data
    assert_allclose(y[:, 0], c_t.data[:, 0] * disc.b_d_t.data[:, 0] * x.data[:, 0], atol=0)


def test_parallel_agrees_with_sequential():
    rng = np.random.default_rng(26)
    for length in (1, 2, 3, 5, 17, 64, 100, 513):
        disc, c_t, x = _random_scan(rng, 2, length, 6)
        ys = ssm.ssm_scan_sequential(disc, c_t, x).data
        yp = ssm.ssm_scan_parallel(disc, c_t, x).data
        assert np.max(np.abs(ys - yp)) < 1e-10


def test_parallel_is_worker_count_invariant():
    rng = np.random.default_rng(27)
    disc, c_t, x = _random_scan(rng, 7, 130, 5)
    outs = [ssm.ssm_scan_parallel(disc, c_t, x, workers=w).data for w in (None, 1, 2, 3, 7)]
    for o in outs[1:]:
        assert_array_equal(o, outs[0])


def test_scan_rejects_bad_shapes():
    rng = np.random.default_rng(28)
    disc, c_t, x = _random_scan(rng, 2, 4, 3)
    with pytest.raises(T.DimensionError):
        ssm.ssm_scan_sequential(disc, c_t, Tensor(np.zeros((2, 4, 5))))
    with pytest.raises(T.DimensionError):
        ssm.ssm_scan_sequential(disc, Tensor(np.zeros((2, 3, 3))), x)
    empty = ssm.Discretized(a_d=disc.a_d, b_d_t=Tensor(np.zeros((2, 0, 3))))
    with pytest.raises(T.DimensionError):
        ssm.ssm_scan_sequential(empty, Tensor(np.zeros((2, 0, 3))), Tensor(np.zeros((2, 0, 3))))


def test_scan_gradients_match_finite_differences():
    rng = np.random.default_rng(29)
    b, length, d = 2, 6, 3
    a = Tensor(-rng.uniform(0.5, 2.0, size=d), requires_grad=True)
    b_t = Tensor(rng.normal(size=(b, length, d)), requires_grad=True)
    c_t = Tensor(rng.normal(size=(b, length, d)), requires_grad=True)
    x = Tensor(rng.normal(size=(b, length, d)), requires_grad=True)
    mix = rng.normal(size=(b, length, d))
    dt = 0.37

    def loss():
        disc = ssm.zoh_discretize(a, dt, b_t)
        return T.sum_(T.mul(ssm.ssm_scan_sequential(disc, c_t, x), mix))

    check_grads(loss, [("a", a), ("b_t", b_t), ("c_t", c_t), ("x", x)], tol=TOL_NONLINEAR)


def test_parallel_backward_matches_sequential_backward():
    rng = np.random.default_rng(30)
    b, length, d = 3, 33, 4
    mix = rng.normal(size=(b, length, d))
    grads = []
    for variant in (ssm.ssm_scan_sequential, lambda d_, c_, x_: ssm.ssm_scan_parallel(d_, c_, x_, workers=2)):
        rng2 = np.random.default_rng(31)
        a_d = Tensor(rng2.uniform(0.05, 0.95, size=d), requires_grad=True)
        b_t = Tensor(rng2.normal(size=(b, length, d)), requires_grad=True)
        c_t = Tensor(rng2.normal(size=(b, length, d)), requires_grad=True)
        x = Tensor(rng2.normal(size=(b, length, d)), requires_grad=True)
        disc = ssm.Discretized(a_d=a_d, b_d_t=b_t)
        T.sum_(T.mul(variant(disc, c_t, x), mix)).backward()
        grads.append((a_d.grad, b_t.grad, c_t.grad, x.grad))
    for gs, gp in zip(*grads):
        assert_allclose(gs, gp, atol=1e-9)


def test_benchmark_reports_agreement():
    out = ssm.benchmark(length=256, d=8, batch=4, workers=2, repeats=1)
    assert out["max_abs_gap"] < 1e-10
    assert out["sequential_ns"] > 0 and out["parallel_ns"] > 0
