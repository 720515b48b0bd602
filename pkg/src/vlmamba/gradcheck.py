"""Central finite-difference check of :func:`selective_scan_backward`."""
from __future__ import annotations

import dataclasses

import numpy as np

from .ssm import SelectiveScanParams, selective_scan, selective_scan_backward
from .tensor_core import Prng

GROUPS = ("x_seq", "a_diag", "d", "w_delta", "bias_delta", "w_b", "w_c")


def random_instance(rng: Prng, L: int, d_inner: int, n: int):
    """f64 inputs, params and cotangent for one selective scan."""
    u = rng.uniform(d_inner * n).reshape(d_inner, n)
    params = SelectiveScanParams(
        a_diag=-np.exp(rng.normal((d_inner, n), 0.5, np.float64)) * (0.5 + u),
        d=rng.normal(d_inner, 1.0, np.float64),
        w_delta=rng.normal(d_inner, 0.5, np.float64),
        bias_delta=float(rng.normal(1, 0.5, np.float64)[0]),
        w_b=rng.normal((d_inner, n), 1.0, np.float64),
        w_c=rng.normal((d_inner, n), 1.0, np.float64),
    )
    x = rng.normal((L, d_inner), 1.0, np.float64)
    g = rng.normal((L, d_inner), 1.0, np.float64)
    return x, params, g


def finite_difference_grads(x, params: SelectiveScanParams, grad_y, h: float = 1e-5,
                            mode: str = "zoh_exact") -> dict[str, np.ndarray]:
    """Gradient of ``sum(grad_y * y)`` by central differences, one scalar at a time."""

    def loss(xv, p):
        return float(np.sum(grad_y * selective_scan(xv, p, mode)))

    out = {}
    for group in GROUPS:
        base = x if group == "x_seq" else getattr(params, group)
        base = np.atleast_1d(np.asarray(base, dtype=np.float64))
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                pert = base.copy()
                pert[idx] += sign * h
                if group == "x_seq":
                    vals.append(loss(pert, params))
                else:
                    v = float(pert[0]) if group == "bias_delta" else pert
                    vals.append(loss(x, dataclasses.replace(params, **{group: v})))
            grad[idx] = (vals[0] - vals[1]) / (2.0 * h)
        out[group] = grad
    return out


def group_rel_errors(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> dict[str, float]:
    """Per group: ``max|analytic - numeric| / max(max|numeric|, 1e-12)``."""
    errs = {}
    for g in GROUPS:
        a, n = np.atleast_1d(analytic[g]), np.atleast_1d(numeric[g])
        errs[g] = float(np.max(np.abs(a - n)) / max(float(np.max(np.abs(n))), 1e-12))
    return errs


def run_gradcheck(seed: int = 0, instances: int = 20, max_l: int = 32, max_inner: int = 4,
                  max_n: int = 8, h: float = 1e-5, mode: str = "zoh_exact") -> dict[str, float]:
    """Worst per-group relative error over random instances."""
    rng = Prng(seed)
    worst = {g: 0.0 for g in GROUPS}
    for _ in range(instances):
        sizes = rng.uniform(3)
        L = 1 + int(sizes[0] * max_l)
        di = 1 + int(sizes[1] * max_inner)
        n = 1 + int(sizes[2] * max_n)
        x, params, g = random_instance(rng, L, di, n)
        analytic = selective_scan_backward(x, params, g, mode).groups()
        errs = group_rel_errors(analytic, finite_difference_grads(x, params, g, h, mode))
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    return worst
