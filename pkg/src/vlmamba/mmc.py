"""Multimodal connectors mapping patch features into the LM embedding space.

Three variants:

* ``MLP``      out = Linear(GELU(Linear(V)))
* ``VSS_MLP``  out = MLP(Norm(VSS(V) + V))
* ``VSS_L2``   V' = Linear1(V);  out = Linear2(Norm(VSS(GELU(V')) + V'))

Norm is RMSNorm. The skip connection always adds the tensor that entered
the VSS branch *before* any activation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mamba_block import NORM_EPS, init_mamba_layer
from .tensor_core import Prng, TensorError, gelu, matmul, rms_norm
from .vision import PatchGrid
from .vision_scan import MECHANISMS, VssWeights, vss_forward

VARIANTS = ("MLP", "VSS_MLP", "VSS_L2")


@dataclass(frozen=True)
class MmcConfig:
    variant: str = "VSS_L2"
    mechanism: str = "CSM"
    d_in: int = 64
    d_model: int = 64
    hidden: int | None = None  # defaults to d_model

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise TensorError(f"unknown connector variant {self.variant!r}; expected one of {VARIANTS}")
        if self.mechanism not in MECHANISMS:
            raise TensorError(f"unknown scan mechanism {self.mechanism!r}")

    @property
    def mlp_hidden(self) -> int:
        return self.d_model if self.hidden is None else self.hidden


@dataclass
class MlpWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class MmcWeights:
    mlp: MlpWeights | None = None  # MLP and VSS_MLP
    vss: VssWeights | None = None  # VSS_MLP and VSS_L2
    norm: np.ndarray | None = None  # VSS_MLP and VSS_L2
    w_lin1: np.ndarray | None = None  # VSS_L2
    w_lin2: np.ndarray | None = None  # VSS_L2

    def check(self, cfg: MmcConfig) -> None:
        if cfg.variant == "MLP":
            if self.vss is not None:
                raise TensorError("MLP connector must not carry VSS weights")
            if self.mlp is None:
                raise TensorError("MLP connector needs MLP weights")
        else:
            if self.vss is None or self.norm is None:
                raise TensorError(f"{cfg.variant} connector needs VSS weights and a norm gain")
            if cfg.variant == "VSS_MLP" and self.mlp is None:
                raise TensorError("VSS_MLP connector needs MLP weights")
            if cfg.variant == "VSS_L2" and (self.w_lin1 is None or self.w_lin2 is None):
                raise TensorError("VSS_L2 connector needs both linear layers")


def _linear(x, w, b=None):
    if x.shape[-1] != w.shape[0]:
        raise TensorError(f"linear: input dim {x.shape[-1]} does not match weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else y + b


def mmc_mlp(grid: PatchGrid, w1, b1, w2, b2) -> np.ndarray:
    return _linear(gelu(_linear(grid.features, w1, b1)), w2, b2)


def mmc_vss_mlp(grid: PatchGrid, mechanism: str, vss: VssWeights, norm_gain, w1, b1, w2, b2,
                method: str = "sequential", trace: dict | None = None) -> np.ndarray:
    v_img = grid.features
    v_scan = vss_forward(grid, mechanism, vss, method, trace)
    mixed = rms_norm(v_scan + v_img, norm_gain, NORM_EPS)
    return mmc_mlp(grid.with_features(mixed), w1, b1, w2, b2)


def mmc_vss_l2(grid: PatchGrid, mechanism: str, w_lin1, vss: VssWeights, norm_gain, w_lin2,
               method: str = "sequential", trace: dict | None = None) -> np.ndarray:
    v_prime = _linear(grid.features, w_lin1)
    if trace is not None:
        trace["mmc.v_prime"] = v_prime.copy()
    v_scan = vss_forward(grid.with_features(gelu(v_prime)), mechanism, vss, method, trace)
    return _linear(rms_norm(v_scan + v_prime, norm_gain, NORM_EPS), w_lin2)


def connector_forward(cfg: MmcConfig, w: MmcWeights, grid: PatchGrid,
                      method: str = "sequential", trace: dict | None = None) -> np.ndarray:
    w.check(cfg)
    if grid.d != cfg.d_in:
        raise TensorError(f"patch dim {grid.d} does not match connector d_in={cfg.d_in}")
    if cfg.variant == "MLP":
        m = w.mlp
        out = mmc_mlp(grid, m.w1, m.b1, m.w2, m.b2)
    elif cfg.variant == "VSS_MLP":
        m = w.mlp
        out = mmc_vss_mlp(grid, cfg.mechanism, w.vss, w.norm, m.w1, m.b1, m.w2, m.b2, method, trace)
    else:
        out = mmc_vss_l2(grid, cfg.mechanism, w.w_lin1, w.vss, w.norm, w.w_lin2, method, trace)
    if trace is not None:
        trace["mmc.out"] = out.copy()
    return out


def init_connector(rng: Prng, cfg: MmcConfig, d_state: int = 16, expand: int = 2,
                   conv_width: int = 4, shared_vss: bool = True, mode: str = "zoh_exact",
                   dtype=np.float32) -> MmcWeights:
    def vss_at(dim):
        n = 1 if shared_vss else len(MECHANISMS[cfg.mechanism])
        layers = [init_mamba_layer(rng, dim, d_state, expand, conv_width, dtype) for _ in range(n)]
        return VssWeights(layers, mode)

    def mlp(d_in):
        h = cfg.mlp_hidden
        return MlpWeights(rng.normal((d_in, h), d_in ** -0.5, dtype), np.zeros(h, dtype),
                          rng.normal((h, cfg.d_model), h ** -0.5, dtype),
                          np.zeros(cfg.d_model, dtype))

    if cfg.variant == "MLP":
        return MmcWeights(mlp=mlp(cfg.d_in))
    if cfg.variant == "VSS_MLP":
        return MmcWeights(mlp=mlp(cfg.d_in), vss=vss_at(cfg.d_in), norm=np.ones(cfg.d_in, dtype))
    return MmcWeights(
        vss=vss_at(cfg.d_model), norm=np.ones(cfg.d_model, dtype),
        w_lin1=rng.normal((cfg.d_in, cfg.d_model), cfg.d_in ** -0.5, dtype),
        w_lin2=rng.normal((cfg.d_model, cfg.d_model), cfg.d_model ** -0.5, dtype),
    )
