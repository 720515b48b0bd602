"""Patch features for the connector: a toy patchify-and-project encoder and
VLMF feature-file I/O."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import TensorError, VlmfError, load_vlmf, matmul, save_vlmf


@dataclass(frozen=True)
class PatchGrid:
    """``gh x gw`` patch features stored in row-major patch order."""

    gh: int
    gw: int
    features: np.ndarray  # (gh*gw, d)

    def __post_init__(self):
        if self.gh < 1 or self.gw < 1:
            raise TensorError(f"grid dims must be positive, got {self.gh}x{self.gw}")
        if self.features.ndim != 2 or self.features.shape[0] != self.gh * self.gw:
            raise TensorError(f"features {self.features.shape} do not hold {self.gh}x{self.gw} patches")

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def as_grid(self) -> np.ndarray:
        return self.features.reshape(self.gh, self.gw, self.d)

    def with_features(self, features: np.ndarray) -> "PatchGrid":
        return PatchGrid(self.gh, self.gw, features)


def check_image(img: np.ndarray, patch: int) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise TensorError(f"image must be (H, W, 3), got {img.shape}")
    h, w, _ = img.shape
    if patch < 1 or h % patch or w % patch:
        raise TensorError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Cut ``(H, W, 3)`` into row-major patches, each flattened to ``3*P*P``."""
    check_image(img, patch)
    h, w, _ = img.shape
    gh, gw = h // patch, w // patch
    blocks = img.reshape(gh, patch, gw, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, patch * patch * 3)


def unpatchify(patches: np.ndarray, gh: int, gw: int, patch: int) -> np.ndarray:
    blocks = patches.reshape(gh, gw, patch, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * patch, gw * patch, 3)


def patchify_encode(img: np.ndarray, patch: int, w_proj: np.ndarray) -> PatchGrid:
    flat = patchify(img, patch)
    if w_proj.ndim != 2 or w_proj.shape[0] != flat.shape[1]:
        raise TensorError(f"w_proj must be ({flat.shape[1]}, d), got {w_proj.shape}")
    h, w, _ = img.shape
    return PatchGrid(h // patch, w // patch, matmul(flat.astype(w_proj.dtype), w_proj))


def _sidecar(path) -> Path:
    return Path(f"{os.fspath(path)}.grid.json")


def save_features(path, grid: PatchGrid, flat: bool = False) -> None:
    """Write ``[gh, gw, d]``, or ``[gh*gw, d]`` plus a ``.grid.json`` sidecar."""
    if flat:
        save_vlmf(path, grid.features)
        _sidecar(path).write_text(json.dumps({"gh": grid.gh, "gw": grid.gw}))
    else:
        save_vlmf(path, grid.as_grid())


def load_features(path) -> PatchGrid:
    arr = load_vlmf(path)
    if arr.ndim == 3:
        gh, gw, d = arr.shape
        return PatchGrid(gh, gw, arr.reshape(gh * gw, d))
    if arr.ndim == 2:
        side = _sidecar(path)
        if not side.exists():
            raise VlmfError(f"dims: 2-d feature file {path} needs grid dims in {side.name}")
        meta = json.loads(side.read_text())
        gh, gw = int(meta["gh"]), int(meta["gw"])
        if gh * gw != arr.shape[0]:
            raise VlmfError(f"dims: sidecar grid {gh}x{gw} does not match {arr.shape[0]} stored patches")
        return PatchGrid(gh, gw, arr)
    raise VlmfError(f"ndim: feature file must be 2-d or 3-d, got {arr.ndim}")
