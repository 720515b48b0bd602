"""2D scan mechanisms over a patch grid and the vision selective-scan (VSS)
module built on them.

A scan order is a permutation of row-major patch indices: ``perm[k]`` is the
patch visited at step ``k``. The bidirectional mechanism (BSM) uses the
row-major order forwards and backwards; the cross mechanism (CSM) adds the
column-major order in both directions. Each direction is run through a Mamba
layer, mapped back to row-major order with the inverse permutation, and the
directions are summed in a fixed order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mamba_block import MambaLayerWeights, mamba_layer_forward
from .tensor_core import TensorError
from .vision import PatchGrid


@dataclass(frozen=True)
class ScanOrder:
    name: str
    perm: np.ndarray
    inv: np.ndarray

    def __post_init__(self):
        n = self.perm.shape[0]
        if self.inv.shape != (n,) or not np.array_equal(self.perm[self.inv], np.arange(n)):
            raise TensorError(f"scan order {self.name!r}: inv is not the inverse of perm")

    @classmethod
    def from_perm(cls, name: str, perm) -> "ScanOrder":
        perm = np.asarray(perm, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.shape[0])):
            raise TensorError(f"scan order {name!r} is not a permutation")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        return cls(name, perm, inv)

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Row-major features -> sequence in visiting order."""
        return features[self.perm]

    def restore(self, seq: np.ndarray) -> np.ndarray:
        """Sequence in visiting order -> row-major features."""
        return seq[self.inv]


def _row_major(gh, gw):
    return np.arange(gh * gw)


def _col_major(gh, gw):
    return np.arange(gh * gw).reshape(gh, gw).T.reshape(-1)


# name -> builder of perm for a (gh, gw) grid; new traversals (e.g. diagonal
# zig-zags) register here and become available to custom mechanisms
ORDER_BUILDERS: dict[str, Callable[[int, int], np.ndarray]] = {
    "row_fwd": _row_major,
    "row_bwd": lambda gh, gw: _row_major(gh, gw)[::-1],
    "col_fwd": _col_major,
    "col_bwd": lambda gh, gw: _col_major(gh, gw)[::-1],
}

MECHANISMS: dict[str, tuple[str, ...]] = {
    "BSM": ("row_fwd", "row_bwd"),
    "CSM": ("row_fwd", "row_bwd", "col_fwd", "col_bwd"),
}


def scan_orders(mechanism: str, gh: int, gw: int) -> list[ScanOrder]:
    if mechanism not in MECHANISMS:
        raise TensorError(f"unknown scan mechanism {mechanism!r}; expected one of {sorted(MECHANISMS)}")
    if gh < 1 or gw < 1:
        raise TensorError(f"grid dims must be positive, got {gh}x{gw}")
    return [ScanOrder.from_perm(n, ORDER_BUILDERS[n](gh, gw)) for n in MECHANISMS[mechanism]]


@dataclass
class VssWeights:
    """Mamba layer(s) of the VSS module: one shared layer, or one per direction."""

    layers: list[MambaLayerWeights]
    mode: str = "zoh_exact"

    def __post_init__(self):
        if not self.layers:
            raise TensorError("VSS needs at least one Mamba layer")
        dims = {l.d_model for l in self.layers}
        if len(dims) != 1:
            raise TensorError(f"VSS layers disagree on model dim: {sorted(dims)}")

    @property
    def shared(self) -> bool:
        return len(self.layers) == 1

    @property
    def d_model(self) -> int:
        return self.layers[0].d_model

    def layer_for(self, direction: int) -> MambaLayerWeights:
        if self.shared:
            return self.layers[0]
        if direction >= len(self.layers):
            raise TensorError(f"no VSS layer for direction {direction}; have {len(self.layers)}")
        return self.layers[direction]


def vss_direction_outputs(grid: PatchGrid, mechanism: str, w: VssWeights,
                          method: str = "sequential", trace: dict | None = None,
                          prefix: str = "vss.") -> list[np.ndarray]:
    """Per-direction outputs, each already restored to row-major order."""
    if grid.d != w.d_model:
        raise TensorError(f"patch dim {grid.d} does not match VSS model dim {w.d_model}")
    outs = []
    for i, order in enumerate(scan_orders(mechanism, grid.gh, grid.gw)):
        seq = mamba_layer_forward(order.apply(grid.features), w.layer_for(i), w.mode, method,
                                  trace, f"{prefix}{order.name}.")
        outs.append(order.restore(seq))
    return outs


def vss_forward(grid: PatchGrid, mechanism: str, w: VssWeights, method: str = "sequential",
                trace: dict | None = None, prefix: str = "vss.") -> np.ndarray:
    outs = vss_direction_outputs(grid, mechanism, w, method, trace, prefix)
    # fwd+bwd per axis first, then across axes: with a shared layer this makes
    # grid transposition and the single-row CSM collapse exact in floating point
    pairs = [outs[i] + outs[i + 1] if i + 1 < len(outs) else outs[i] for i in range(0, len(outs), 2)]
    total = pairs[0]
    for p in pairs[1:]:
        total = total + p
    if trace is not None:
        trace[prefix + "merged"] = total.copy()
    return total
