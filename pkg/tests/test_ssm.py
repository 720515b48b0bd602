import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmamba.gradcheck import finite_difference_grads, group_rel_errors, random_instance
from vlmamba.ssm import (SERIES_THRESHOLD, DiscreteParams, SelectiveScanParams, SsmParams,
                         discretize_zoh, scan_parallel, scan_sequential, selective_params,
                         selective_scan, selective_scan_backward)
from vlmamba.tensor_core import Prng, TensorError

from oracles import selective_scan_loop

LN2 = math.log(2.0)


def _random_params(rng, di, n, dtype=np.float64):
    return SelectiveScanParams(
        a_diag=-np.exp(rng.normal((di, n), 0.5, dtype)),
        d=rng.normal(di, 1.0, dtype),
        w_delta=rng.normal(di, 0.5, dtype),
        bias_delta=0.3,
        w_b=rng.normal((di, n), 1.0, dtype),
        w_c=rng.normal((di, n), 1.0, dtype),
    )


# --- discretization ---------------------------------------------------------

def test_zoh_closed_form():
    dp = discretize_zoh(np.array([-1.0]), np.array([1.0]), np.array([LN2]))
    assert abs(dp.a_bar[0, 0] - 0.5) < 1e-12
    assert abs(dp.b_bar[0, 0] - 0.5) < 1e-12


def test_zoh_small_step_limit():
    # at delta = 1e-8, 1 - a_bar is itself ~1e-8, so a_bar is held to its
    # first-order form 1 + delta * a
    dp = discretize_zoh(np.array([-1.0]), np.array([2.0]), np.array([1e-8]))
    assert abs(dp.a_bar[0, 0] - (1.0 - 1e-8)) < 1e-9
    assert abs(dp.a_bar[0, 0] - 1.0) <= 1e-8
    assert abs(dp.b_bar[0, 0] - 2e-8) < 1e-9


def test_zoh_series_continuous_at_threshold():
    a = np.array([-1.0])
    left = discretize_zoh(a, np.array([1.0]), np.array([SERIES_THRESHOLD * (1 - 1e-9)]))
    right = discretize_zoh(a, np.array([1.0]), np.array([SERIES_THRESHOLD * (1 + 1e-9)]))
    assert abs(left.b_bar[0, 0] - right.b_bar[0, 0]) < 1e-9


def test_zoh_zero_a_uses_series():
    dp = discretize_zoh(np.array([0.0]), np.array([3.0]), np.array([0.5]))
    assert dp.a_bar[0, 0] == 1.0
    assert dp.b_bar[0, 0] == pytest.approx(1.5, abs=1e-15)


def test_zoh_rejects_nonpositive_delta():
    with pytest.raises(TensorError, match="positive"):
        discretize_zoh(np.array([-1.0]), np.array([1.0]), np.array([0.1, 0.0]))


def test_euler_mode():
    dp = discretize_zoh(np.array([-1.0, -2.0]), np.array([1.0, 3.0]), np.array([0.1]), mode="euler")
    np.testing.assert_allclose(dp.b_bar[0], [0.1, 0.3], rtol=1e-15)
    np.testing.assert_allclose(dp.a_bar[0], np.exp([-0.1, -0.2]), rtol=1e-15)


def test_discrete_transition_in_unit_interval():
    rng = Prng(5)
    a = -np.exp(rng.normal((3, 8), 1.0, np.float64))
    delta = np.exp(rng.normal(20, 1.0, np.float64))
    dp = discretize_zoh(a, rng.normal((20, 8), 1.0, np.float64), delta)
    assert dp.a_bar.shape == (20, 3, 8)
    assert np.all((dp.a_bar > 0) & (dp.a_bar < 1))


def test_zoh_reproduces_ode_solution():
    # h' = a h + b x with constant x and h(0) = 0 has h(t) = b x (e^{a t} - 1) / a
    a, b, x, step = -0.7, 1.3, 0.9, 0.05
    params = SsmParams(np.array([a]), np.array([b]), np.array([1.0]))
    L = 200
    dp = discretize_zoh(params.a_diag, params.b, np.full(L, step))
    _, h = scan_sequential(dp, params.c, 0.0, np.full(L, x))
    t = step * np.arange(1, L + 1)
    exact = b * x * np.expm1(a * t) / a
    assert np.max(np.abs(h[:, 0] - exact)) < 1e-10


def test_ssm_params_require_negative_a():
    with pytest.raises(TensorError):
        SsmParams(np.array([-1.0, 0.5]), np.ones(2), np.ones(2))
    p = SsmParams.from_log(np.array([0.0, 1.0]), np.ones(2), np.ones(2))
    assert np.all(p.a_diag < 0) and p.n == 2


# --- scans ------------------------------------------------------------------

def _halves(L):
    return DiscreteParams(np.full((L, 1), 0.5), np.full((L, 1), 0.5))


def test_scan_sequential_hand_example():
    y, _ = scan_sequential(_halves(3), np.array([1.0]), 0.0, np.array([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(y, [0.5, 0.25, 1.125], rtol=0, atol=1e-15)


def test_scan_zero_input():
    y, h = scan_sequential(_halves(4), np.array([1.0]), 0.7, np.zeros(4))
    assert not y.any() and not h.any()


def test_scan_pure_skip():
    x = np.array([1.0, -2.0, 3.5])
    for scan in (scan_sequential, scan_parallel):
        y, _ = scan(_halves(3), np.array([0.0]), 1.0, x)
        assert np.array_equal(y, x)


def test_scan_length_mismatch():
    with pytest.raises(TensorError, match="length mismatch"):
        scan_sequential(_halves(3), np.array([1.0]), 0.0, np.zeros(4))


def test_parallel_single_step_bitwise():
    rng = Prng(8)
    dp = DiscreteParams(rng.uniform(4).reshape(1, 4).astype(np.float32), rng.normal((1, 4), 1.0, np.float32))
    c, x = rng.normal(4, 1.0, np.float32), rng.normal(1, 1.0, np.float32)
    ys, hs = scan_sequential(dp, c, 0.5, x)
    yp, hp = scan_parallel(dp, c, 0.5, x)
    assert ys.tobytes() == yp.tobytes() and hs.tobytes() == hp.tobytes()


def test_parallel_cumulative_sum_degenerate():
    L = 37
    dp = DiscreteParams(np.ones((L, 1)), np.ones((L, 1)))
    _, h = scan_parallel(dp, np.array([1.0]), 0.0, np.ones(L))
    assert h[:, 0].tolist() == list(range(1, L + 1))


@settings(max_examples=40, deadline=None)
@given(L=st.sampled_from([1, 2, 3, 5, 64, 100, 1024]), n=st.sampled_from([1, 4, 16]),
       seed=st.integers(0, 2**32), dtype=st.sampled_from([np.float32, np.float64]))
def test_parallel_matches_sequential(L, n, seed, dtype):
    rng = Prng(seed)
    dp = DiscreteParams((0.5 + 0.5 * rng.uniform(L * n)).reshape(L, n).astype(dtype),
                        rng.normal((L, n), 1.0, dtype))
    c, x = rng.normal((L, n), 1.0, dtype), rng.normal(L, 1.0, dtype)
    ys, _ = scan_sequential(dp, c, 0.25, x)
    yp, _ = scan_parallel(dp, c, 0.25, x)
    tol = 1e-5 if dtype == np.float32 else 1e-10
    assert np.max(np.abs(ys - yp)) <= tol * max(np.max(np.abs(ys)), 1e-30)


def test_causality_bitwise():
    rng = Prng(12)
    L, t0 = 100, 41
    dp = DiscreteParams((0.9 + 0.1 * rng.uniform(L * 3)).reshape(L, 3), rng.normal((L, 3), 1.0, np.float64))
    c = rng.normal((L, 3), 1.0, np.float64)
    x = rng.normal(L, 1.0, np.float64)
    x2 = x.copy()
    x2[t0 + 1:] = rng.normal(L - t0 - 1, 5.0, np.float64)
    for scan in (scan_sequential, scan_parallel):
        assert scan(dp, c, 0.1, x)[0][:t0 + 1].tobytes() == scan(dp, c, 0.1, x2)[0][:t0 + 1].tobytes()


def test_stability_long_sequence():
    L = 16384
    rng = Prng(13)
    a = -np.exp(rng.normal((4, 16), 1.0, np.float32))
    delta = np.full(L, 0.1, np.float32)
    dp = discretize_zoh(a, np.ones(16, np.float32), delta)
    x = np.clip(rng.normal((L, 4), 1.0, np.float32), -3, 3)
    _, h = scan_sequential(dp, np.ones(16, np.float32), 0.0, x)
    assert np.all(np.isfinite(h))
    bound = np.max(np.abs(dp.b_bar)) * 3 / (1 - np.max(dp.a_bar))
    assert np.max(np.abs(h)) <= bound * (1 + 1e-5)


# --- selective parameterization ----------------------------------------------

def test_selective_params_zero_input():
    di, n = 3, 5
    z = np.zeros((7, di))
    sel = selective_params(z, np.ones(di), 0.0, np.ones((di, n)), np.ones((di, n)))
    np.testing.assert_allclose(sel.delta, LN2, rtol=1e-15)
    sel = selective_params(z, np.ones(di), -2.0, np.ones((di, n)), np.ones((di, n)))
    np.testing.assert_allclose(sel.delta, math.log1p(math.exp(-2.0)), rtol=1e-15)
    assert not sel.b_t.any() and not sel.c_t.any()


def test_selective_params_positive_delta():
    rng = Prng(2)
    x = rng.normal((50, 4), 10.0, np.float64)
    sel = selective_params(x, rng.normal(4, 3.0, np.float64), -5.0, np.ones((4, 2)), np.ones((4, 2)))
    assert np.all(sel.delta > 0)


def test_selective_params_shape_mismatch():
    with pytest.raises(TensorError):
        selective_params(np.zeros((3, 4)), np.ones(3), 0.0, np.ones((4, 2)), np.ones((4, 2)))


def test_selective_scan_matches_loop_oracle():
    rng = Prng(21)
    p = _random_params(rng, 4, 8)
    x = rng.normal((64, 4), 1.0, np.float64)
    ref = selective_scan_loop(x, p.a_diag, p.d, p.w_delta, p.bias_delta, p.w_b, p.w_c)
    for method in ("sequential", "parallel"):
        np.testing.assert_allclose(selective_scan(x, p, method=method), ref, rtol=1e-5, atol=1e-8)


def test_selective_scan_single_channel_reduction():
    rng = Prng(22)
    p = _random_params(rng, 1, 6)
    x = rng.normal((20, 1), 1.0, np.float64)
    sel = selective_params(x, p.w_delta, p.bias_delta, p.w_b, p.w_c)
    dp = discretize_zoh(p.a_diag[0], sel.b_t, sel.delta)
    y, _ = scan_sequential(dp, sel.c_t, p.d[0], x[:, 0])
    assert np.array_equal(selective_scan(x, p)[:, 0], y)


def test_selective_scan_channel_permutation():
    rng = Prng(23)
    p = _random_params(rng, 5, 4)
    x = rng.normal((30, 5), 1.0, np.float64)
    perm = np.array([3, 0, 4, 1, 2])
    q = SelectiveScanParams(p.a_diag[perm], p.d[perm], p.w_delta[perm], p.bias_delta,
                            p.w_b[perm], p.w_c[perm])
    np.testing.assert_allclose(selective_scan(x[:, perm], q), selective_scan(x, p)[:, perm],
                               rtol=1e-12, atol=1e-14)


def test_selective_scan_f32_close_to_f64():
    rng = Prng(24)
    p = _random_params(rng, 3, 8)
    x = rng.normal((128, 3), 1.0, np.float64)
    p32 = SelectiveScanParams(*(np.asarray(v, np.float32) if isinstance(v, np.ndarray) else v
                                for v in (p.a_diag, p.d, p.w_delta, p.bias_delta, p.w_b, p.w_c)))
    y64 = selective_scan(x, p)
    y32 = selective_scan(x.astype(np.float32), p32)
    assert y32.dtype == np.float32
    assert np.max(np.abs(y32 - y64)) < 1e-4 * max(1.0, np.max(np.abs(y64)))


# --- backward -----------------------------------------------------------------

def test_backward_zero_cotangent():
    rng = Prng(30)
    p = _random_params(rng, 2, 3)
    x = rng.normal((9, 2), 1.0, np.float64)
    grads = selective_scan_backward(x, p, np.zeros_like(x)).groups()
    assert all(not np.any(g) for g in grads.values())


def test_backward_scalar_instance():
    rng = Prng(31)
    x, p, g = random_instance(rng, 3, 1, 1)
    analytic = selective_scan_backward(x, p, g).groups()
    numeric = finite_difference_grads(x, p, g, h=1e-5)
    for k in analytic:
        assert np.max(np.abs(analytic[k] - numeric[k])) < 1e-6, k


@pytest.mark.parametrize("mode", ["zoh_exact", "euler"])
def test_backward_random_instance(mode):
    rng = Prng(32)
    x, p, g = random_instance(rng, 32, 2, 4)
    errs = group_rel_errors(selective_scan_backward(x, p, g, mode).groups(),
                            finite_difference_grads(x, p, g, 1e-5, mode))
    assert max(errs.values()) < 1e-4, errs


def test_backward_through_series_branch():
    # a tiny |delta * a| exercises the series derivative
    rng = Prng(33)
    x, p, g = random_instance(rng, 6, 2, 3)
    p = SelectiveScanParams(np.full_like(p.a_diag, -1e-6), p.d, p.w_delta, p.bias_delta, p.w_b, p.w_c)
    errs = group_rel_errors(selective_scan_backward(x, p, g).groups(),
                            finite_difference_grads(x, p, g, 1e-5))
    errs.pop("a_diag")  # finite differences step across the series threshold here
    assert max(errs.values()) < 1e-4, errs


def test_backward_shape_mismatch():
    rng = Prng(34)
    p = _random_params(rng, 2, 3)
    with pytest.raises(TensorError):
        selective_scan_backward(np.zeros((4, 2)), p, np.zeros((5, 2)))
