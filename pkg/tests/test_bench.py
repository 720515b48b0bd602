import csv

import numpy as np
import pytest

from vlmamba.bench import (BenchReport, BenchRow, attention_baseline, attention_flops, loglog_fit,
                           run_scaling, scan_flops)
from vlmamba.tensor_core import Prng, TensorError

from oracles import causal_attention_loop


def _weights(d, seed=0):
    rng = Prng(seed)
    return [rng.normal((d, d), d ** -0.5, np.float64) for _ in range(3)]


def test_attention_single_position():
    wq, wk, wv = _weights(4)
    x = Prng(1).normal((1, 4), 1.0, np.float64)
    np.testing.assert_allclose(attention_baseline(x, wq, wk, wv), x @ wv, rtol=1e-15)


def test_attention_uniform_scores_give_causal_mean():
    d, L = 4, 9
    x = Prng(2).normal((L, d), 1.0, np.float64)
    zero = np.zeros((d, d))
    wv = _weights(d, 3)[2]
    out = attention_baseline(x, zero, zero, wv)
    v = x @ wv
    expected = np.cumsum(v, axis=0) / np.arange(1, L + 1)[:, None]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-14)


def test_attention_matches_loop_oracle():
    wq, wk, wv = _weights(6, 4)
    x = Prng(5).normal((17, 6), 1.0, np.float64)
    np.testing.assert_allclose(attention_baseline(x, wq, wk, wv), causal_attention_loop(x, wq, wk, wv),
                               rtol=1e-10, atol=1e-12)


def test_attention_causal():
    wq, wk, wv = _weights(4, 6)
    x = Prng(7).normal((12, 4), 1.0, np.float64)
    x2 = x.copy()
    x2[6:] += 2.0
    assert np.array_equal(attention_baseline(x, wq, wk, wv)[:6], attention_baseline(x2, wq, wk, wv)[:6])


def test_attention_shape_mismatch():
    with pytest.raises(TensorError):
        attention_baseline(np.zeros((3, 4)), np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))


@pytest.mark.parametrize("L", [1, 7, 256, 4096])
def test_scan_flops_double_exactly(L):
    assert scan_flops(2 * L, 16, 16) == 2 * scan_flops(L, 16, 16)


def test_scan_flops_grow_with_state_and_width():
    # Theta(L * D * N): per-step count is affine in D*N with D-only terms
    base = scan_flops(10, 8, 8)
    assert scan_flops(10, 16, 8) > base and scan_flops(10, 8, 16) > base
    dn = scan_flops(1, 8, 16) - scan_flops(1, 8, 8)
    assert dn == 8 * 8 * (4 + 5 + 3 + 2)


@pytest.mark.parametrize("L", [256, 1024, 8192])
def test_attention_flops_quadratic(L):
    c1, c2 = attention_flops(L, 16), attention_flops(2 * L, 16)
    assert c2["quadratic"] == 4 * c1["quadratic"]
    assert c2["linear"] == 2 * c1["linear"]
    ratio = c2["total"] / c1["total"]
    # the projection term is the only departure from exactly 4
    assert 4 - 2 * c1["linear"] / c1["total"] == pytest.approx(ratio, rel=1e-12)


def test_loglog_fit_recovers_power():
    L = np.array([100, 200, 400, 800, 1600])
    slope, r2 = loglog_fit(L, 3.0 * L ** 1.5)
    assert slope == pytest.approx(1.5, abs=1e-12) and r2 == pytest.approx(1.0)


def test_run_scaling_contract(tmp_path):
    report = run_scaling([8, 16, 32, 64, 128], repeats=3, kernels=["selective_scan", "attention"],
                         d_inner=4, n=4, d_model=4)
    assert [r.L for r in report.kernel_rows("attention")] == [8, 16, 32, 64, 128]
    assert set(report.fits) == {"selective_scan", "attention"}
    assert all(r.inner >= 1 and r.median_ns > 0 for r in report.rows)
    report.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0].keys()) == ["kernel", "L", "median_ns", "flops"]
    assert len(rows) == 10


def test_run_scaling_enlarges_inner_loop():
    report = run_scaling([1, 2, 3, 4, 5], repeats=1, kernels=["attention"], d_model=2)
    assert report.rows[0].inner > 1


@pytest.mark.parametrize("lengths", [[1, 2, 3, 4], [1, 2, 2, 3, 4], [5, 4, 3, 2, 1]])
def test_run_scaling_rejects_bad_lengths(lengths):
    with pytest.raises(TensorError):
        run_scaling(lengths, repeats=1)


def test_report_csv_formatting(tmp_path):
    r = BenchReport([BenchRow("attention", 4, 1234.6, 99, 1)])
    r.write_csv(tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text().splitlines() == ["kernel,L,median_ns,flops",
                                                             "attention,4,1235,99"]
