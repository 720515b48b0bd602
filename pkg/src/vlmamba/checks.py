"""Invariant suites run by ``vlmamba check``. Each check returns
``(passed, detail)``; suites are small enough to finish in seconds."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import bench, gradcheck
from .mamba_block import init_mamba_layer, init_mamba_lm, mamba_lm_forward
from .mmc import MmcConfig, connector_forward, init_connector
from .pipeline import (ModelConfig, build_model, demo_image, encode_image, generate_greedy,
                       generate_ids)
from .ssm import DiscreteParams, discretize_zoh, scan_parallel, scan_sequential
from .tensor_core import Prng, matmul, rms_norm, softplus, silu
from .vision import PatchGrid, patchify, unpatchify
from .vision_scan import VssWeights, scan_orders, vss_forward

Check = Callable[[], tuple[bool, str]]
SUITES: dict[str, dict[str, Check]] = {}


def check(suite: str, name: str):
    def deco(fn):
        SUITES.setdefault(suite, {})[name] = fn
        return fn
    return deco


@check("tensor", "matmul associativity (f64)")
def _assoc():
    rng = Prng(1)
    a, b, c, d = (rng.normal((4, 4), 1.0, np.float64) for _ in range(4))
    l = matmul(matmul(matmul(a, b), c), d)
    r = matmul(a, matmul(b, matmul(c, d)))
    err = np.linalg.norm(l - r) / np.linalg.norm(r)
    return err < 1e-10, f"rel err {err:.2e}"


@check("tensor", "softplus/silu monotone")
def _mono():
    x = np.linspace(-1, 40, 5001)
    ok = np.all(np.diff(softplus(x)) >= 0) and np.all(np.diff(silu(x)) >= 0)
    return bool(ok), "grid [-1, 40]"


@check("tensor", "rms_norm unit rms")
def _rms():
    x = Prng(2).normal((16, 32), 3.0, np.float64)
    y = rms_norm(x, np.ones(32), eps=0.0)
    dev = np.max(np.abs(np.sqrt(np.mean(y * y, axis=-1)) - 1))
    return dev < 1e-6, f"max dev {dev:.2e}"


@check("scan", "parallel == sequential")
def _par():
    rng = Prng(3)
    worst = 0.0
    for L in (1, 2, 64, 1024):
        a = 0.5 + 0.5 * rng.uniform(L * 16).reshape(L, 16)
        dp = DiscreteParams(a, rng.normal((L, 16), 1.0, np.float64))
        x, c = rng.normal(L, 1.0, np.float64), rng.normal((L, 16), 1.0, np.float64)
        ys, _ = scan_sequential(dp, c, 0.3, x)
        yp, _ = scan_parallel(dp, c, 0.3, x)
        worst = max(worst, np.max(np.abs(ys - yp)) / max(np.max(np.abs(ys)), 1e-30))
    return worst < 1e-10, f"max rel err {worst:.2e}"


@check("scan", "ZOH closed form")
def _zoh():
    dp = discretize_zoh(np.array([-1.0]), np.array([1.0]), np.array([np.log(2.0)]))
    err = max(abs(dp.a_bar[0, 0] - 0.5), abs(dp.b_bar[0, 0] - 0.5))
    return err < 1e-12, f"err {err:.2e}"


@check("scan", "causality")
def _causal():
    rng = Prng(4)
    L = 50
    dp = DiscreteParams(0.9 * np.ones((L, 4)), rng.normal((L, 4), 1.0, np.float64))
    x, c = rng.normal(L, 1.0, np.float64), np.ones(4)
    x2 = x.copy()
    x2[30:] += 1.0
    ok = all(np.array_equal(f(dp, c, 0.0, x)[0][:30], f(dp, c, 0.0, x2)[0][:30])
             for f in (scan_sequential, scan_parallel))
    return ok, "prefix [0, 30) bitwise"


@check("scan", "gradient vs finite differences")
def _grad():
    worst = max(gradcheck.run_gradcheck(seed=0, instances=3).values())
    return worst < 1e-4, f"max rel err {worst:.2e}"


@check("lm", "causality of logits")
def _lm_causal():
    lm = init_mamba_lm(Prng(5), d_model=16, n_layers=2, d_state=4)
    toks = list(range(40, 60))
    alt = toks[:12] + [7] * 8
    ok = np.array_equal(mamba_lm_forward(toks, None, lm)[:12], mamba_lm_forward(alt, None, lm)[:12])
    return ok, "positions [0, 12) bitwise"


@check("vision", "patchify bijection")
def _patch():
    img = Prng(6).uniform(16 * 24 * 3).reshape(16, 24, 3)
    ok = np.array_equal(unpatchify(patchify(img, 4), 4, 6, 4), img)
    return ok, "16x24 image, P=4"


@check("vision_scan", "perm o inv identity")
def _perm():
    for gh in range(1, 17):
        for gw in range(1, 17):
            for o in scan_orders("CSM", gh, gw):
                if not np.array_equal(o.perm[o.inv], np.arange(gh * gw)):
                    return False, f"{o.name} on {gh}x{gw}"
    return True, "all grids up to 16x16"


def _small_vss(d=8, seed=7):
    return VssWeights([init_mamba_layer(Prng(seed), d, d_state=4)])


@check("vision_scan", "CSM transpose symmetry")
def _transpose():
    w = _small_vss()
    f = Prng(8).normal((3 * 5, 8), 1.0, np.float32)
    g = PatchGrid(3, 5, f)
    gt = PatchGrid(5, 3, f.reshape(3, 5, 8).transpose(1, 0, 2).reshape(15, 8))
    a = vss_forward(g, "CSM", w).reshape(3, 5, 8).transpose(1, 0, 2).reshape(15, 8)
    b = vss_forward(gt, "CSM", w)
    err = float(np.max(np.abs(a - b)))
    return err < 1e-6, f"max abs diff {err:.2e}"


@check("vision_scan", "gh=1 collapse CSM = 2 BSM")
def _collapse():
    w = _small_vss()
    g = PatchGrid(1, 9, Prng(9).normal((9, 8), 1.0, np.float32))
    err = float(np.max(np.abs(vss_forward(g, "CSM", w) - 2 * vss_forward(g, "BSM", w))))
    return err < 1e-6, f"max abs diff {err:.2e}"


@check("vision_scan", "VSS non-causal")
def _noncausal():
    w = _small_vss()
    f = Prng(10).normal((16, 8), 1.0, np.float32)
    f2 = f.copy()
    f2[-1] += 1.0
    diffs = [float(np.max(np.abs(vss_forward(PatchGrid(4, 4, f), m, w)[0]
                                 - vss_forward(PatchGrid(4, 4, f2), m, w)[0]))) for m in ("BSM", "CSM")]
    return min(diffs) > 0, f"first-patch diffs {diffs[0]:.2e}, {diffs[1]:.2e}"


@check("mmc", "branch-zeroed dataflow")
def _mmc():
    cfg = MmcConfig("VSS_L2", "CSM", 8, 12)
    w = init_connector(Prng(11), cfg, d_state=4)
    w.vss.layers[0].w_out = np.zeros_like(w.vss.layers[0].w_out)
    grid = PatchGrid(3, 3, Prng(12).normal((9, 8), 1.0, np.float32))
    v_prime = matmul(grid.features, w.w_lin1)
    ref = matmul(rms_norm(v_prime, w.norm), w.w_lin2)
    err = float(np.max(np.abs(connector_forward(cfg, w, grid) - ref)))
    return err < 1e-6, f"max abs diff {err:.2e}"


@check("pipeline", "deterministic generation")
def _det():
    cfg = ModelConfig(d_model=16, d_vision=16, n_layers=1, d_state=4, image_size=8, patch=4)
    img = demo_image(cfg)
    outs = {generate_greedy(cfg, img, "hi", 4).encode("utf-8", "surrogateescape") for _ in range(2)}
    return len(outs) == 1, "2 runs byte-identical"


@check("pipeline", "image sensitivity")
def _sens():
    cfg = ModelConfig(d_model=16, d_vision=16, n_layers=1, d_state=4, image_size=8, patch=4)
    m = build_model(cfg)
    _, l1 = generate_ids(m, encode_image(m, demo_image(cfg, 1)), "q", 1)
    _, l2 = generate_ids(m, encode_image(m, demo_image(cfg, 2)), "q", 1)
    diff = float(np.max(np.abs(l1 - l2)))
    return diff > 0, f"first-step logit diff {diff:.2e}"


@check("bench", "operation counters")
def _flops():
    ok = all(bench.scan_flops(2 * L, 16, 16) == 2 * bench.scan_flops(L, 16, 16) for L in (256, 1024))
    ok &= all(bench.attention_flops(2 * L, 16)["quadratic"] == 4 * bench.attention_flops(L, 16)["quadratic"]
              for L in (256, 1024))
    return ok, "scan x2, attention x4 per doubling"


def run_suites(names) -> list[tuple[str, str, bool, str]]:
    results = []
    for suite in names:
        for name, fn in SUITES[suite].items():
            try:
                ok, detail = fn()
            except Exception as e:  # a crashing check is a failing check
                ok, detail = False, f"{type(e).__name__}: {e}"
            results.append((suite, name, bool(ok), detail))
    return results
