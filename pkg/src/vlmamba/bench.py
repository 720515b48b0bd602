"""Sequence-length scaling of the selective scan against naive causal
self-attention: exact operation counters, wall-clock timing, and log-log
slope fits."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .ssm import SelectiveScanParams, selective_scan
from .tensor_core import Prng, TensorError

KERNELS = ("selective_scan", "attention")
MIN_SAMPLE_NS = 2_000_000  # one timing sample must span at least this long


def attention_baseline(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray) -> np.ndarray:
    """Causal ``softmax(Q K^T / sqrt(D)) V`` with the full ``L x L`` score matrix."""
    if x.ndim != 2 or wq.shape != (x.shape[1], x.shape[1]) or wk.shape != wq.shape or wv.shape != wq.shape:
        raise TensorError(f"attention: x {x.shape} with wq {wq.shape}, wk {wk.shape}, wv {wv.shape}")
    L, d = x.shape
    q, k, v = x @ wq, x @ wk, x @ wv
    s = q @ k.T
    s *= x.dtype.type(1.0 / np.sqrt(d))
    idx = np.arange(L)
    s[idx[None, :] > idx[:, None]] = -np.inf
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return s @ v


def scan_flops(L: int, d_inner: int, n: int) -> int:
    """Exact operation count of one :func:`selective_scan` call (``zoh_exact``)."""
    per_step = (
        2 * d_inner + 1 + 3          # delta logit, bias, softplus
        + 2 * 2 * d_inner * n        # B_t and C_t projections
        + 5 * d_inner * n            # delta*a, exp, expm1, divide, times B
        + 3 * d_inner * n            # u = b_bar*x, h = a_bar*h + u
        + 2 * d_inner * n            # <c, h>
        + 2 * d_inner                # + d*x
    )
    return L * per_step


def attention_flops(L: int, d: int) -> dict[str, int]:
    """Exact operation counts of :func:`attention_baseline`, split by growth order."""
    quadratic = L * L * (2 * d + 1 + 5 + 2 * d)  # QK^T, scale, softmax (mask, max, sub, exp, sum+div), PV
    linear = 3 * L * d * 2 * d  # Q, K, V projections
    return {"quadratic": quadratic, "linear": linear, "total": quadratic + linear}


@dataclass
class BenchRow:
    kernel: str
    L: int
    median_ns: float
    flops: int
    inner: int  # calls per timing sample


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    fits: dict[str, tuple[float, float]] = field(default_factory=dict)  # kernel -> (slope, r2)

    def kernel_rows(self, kernel: str) -> list[BenchRow]:
        return [r for r in self.rows if r.kernel == kernel]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "L", "median_ns", "flops"])
            for r in self.rows:
                w.writerow([r.kernel, r.L, f"{r.median_ns:.0f}", r.flops])


def loglog_fit(lengths, times) -> tuple[float, float]:
    """Least-squares slope of log(time) against log(L), and its R^2."""
    lx, ly = np.log(np.asarray(lengths, float)), np.log(np.asarray(times, float))
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def _time_call(fn, repeats: int) -> tuple[float, int]:
    fn()  # warmup, discarded
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= MIN_SAMPLE_NS or inner >= 1 << 16:
            break
        inner *= 2
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter_ns() - t0) / inner)
    return statistics.median(samples), inner


def _scan_case(L, d_inner, n, rng):
    x = rng.normal((L, d_inner), 1.0, np.float32)
    p = SelectiveScanParams(
        a_diag=-np.tile(np.arange(1, n + 1, dtype=np.float32), (d_inner, 1)),
        d=np.ones(d_inner, np.float32),
        w_delta=rng.normal(d_inner, 0.1, np.float32), bias_delta=-3.0,
        w_b=rng.normal((d_inner, n), d_inner ** -0.5, np.float32),
        w_c=rng.normal((d_inner, n), d_inner ** -0.5, np.float32))
    return lambda: selective_scan(x, p)


def _attention_case(L, d, rng):
    x = rng.normal((L, d), 1.0, np.float32)
    wq, wk, wv = (rng.normal((d, d), d ** -0.5, np.float32) for _ in range(3))
    return lambda: attention_baseline(x, wq, wk, wv)


def run_scaling(lengths, repeats: int = 7, kernels=KERNELS, d_inner: int = 16, n: int = 16,
                d_model: int = 16, seed: int = 0) -> BenchReport:
    lengths = [int(v) for v in lengths]
    if len(lengths) < 5:
        raise TensorError("run_scaling needs at least 5 sequence lengths")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise TensorError("lengths must be strictly increasing")
    unknown = set(kernels) - set(KERNELS)
    if unknown:
        raise TensorError(f"unknown kernels {sorted(unknown)}")
    rng = Prng(seed)
    report = BenchReport()
    with threadpool_limits(limits=1):
        for kernel in kernels:
            for L in lengths:
                if kernel == "selective_scan":
                    fn, flops = _scan_case(L, d_inner, n, rng), scan_flops(L, d_inner, n)
                else:
                    fn, flops = _attention_case(L, d_model, rng), attention_flops(L, d_model)["total"]
                med, inner = _time_call(fn, repeats)
                report.rows.append(BenchRow(kernel, L, med, flops, inner))
            rows = report.kernel_rows(kernel)
            report.fits[kernel] = loglog_fit([r.L for r in rows], [r.median_ns for r in rows])
    return report
