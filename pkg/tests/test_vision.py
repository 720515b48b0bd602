import json

import numpy as np
import pytest

from vlmamba.tensor_core import Prng, TensorError, VlmfError, save_vlmf, vlmf_bytes
from vlmamba.vision import (PatchGrid, load_features, patchify, patchify_encode, save_features,
                            unpatchify)


def _image(h, w, seed=0):
    return Prng(seed).uniform(h * w * 3).reshape(h, w, 3).astype(np.float32)


def test_single_patch_grid():
    grid = patchify_encode(_image(4, 4), 4, np.ones((48, 5), np.float32))
    assert (grid.gh, grid.gw, grid.d) == (1, 1, 5)


def test_zero_projection():
    grid = patchify_encode(_image(8, 12), 4, np.zeros((48, 6), np.float32))
    assert (grid.gh, grid.gw) == (2, 3)
    assert not grid.features.any()


def test_constant_image_identical_patches():
    img = np.full((8, 8, 3), 0.3, np.float32)
    grid = patchify_encode(img, 2, Prng(1).normal((12, 4), 1.0, np.float32))
    assert np.all(grid.features == grid.features[0])


def test_patch_layout_row_major():
    img = _image(4, 6)
    flat = patchify(img, 2)
    # patch (r=1, c=2) sits at row-major index 1*3+2 and holds pixels [2:4, 4:6]
    assert np.array_equal(flat[5], img[2:4, 4:6].reshape(-1))


def test_patchify_is_bijection():
    img = _image(12, 8, seed=3)
    flat = patchify_encode(img, 4, np.eye(48, dtype=np.float32)).features
    assert np.array_equal(unpatchify(flat, 3, 2, 4), img)


def test_non_divisible_image():
    with pytest.raises(TensorError, match="not divisible"):
        patchify_encode(_image(10, 8), 4, np.ones((48, 2), np.float32))


def test_grid_dims_contract():
    for h, w, p in [(8, 8, 2), (12, 4, 4), (6, 9, 3)]:
        grid = patchify_encode(_image(h, w), p, np.ones((3 * p * p, 1), np.float32))
        assert (grid.gh, grid.gw) == (h // p, w // p)


def test_feature_roundtrip(tmp_path):
    grid = PatchGrid(3, 4, Prng(2).normal((12, 7), 1.0, np.float32))
    save_features(tmp_path / "f.vlmf", grid)
    back = load_features(tmp_path / "f.vlmf")
    assert (back.gh, back.gw) == (3, 4)
    assert back.features.tobytes() == grid.features.tobytes()


def test_feature_roundtrip_flat_with_sidecar(tmp_path):
    grid = PatchGrid(2, 5, Prng(3).normal((10, 3), 1.0, np.float64))
    save_features(tmp_path / "f.vlmf", grid, flat=True)
    assert json.loads((tmp_path / "f.vlmf.grid.json").read_text()) == {"gh": 2, "gw": 5}
    back = load_features(tmp_path / "f.vlmf")
    assert (back.gh, back.gw) == (2, 5)
    assert back.features.tobytes() == grid.features.tobytes()


def test_flat_without_sidecar(tmp_path):
    save_vlmf(tmp_path / "f.vlmf", np.ones((4, 2), np.float32))
    with pytest.raises(VlmfError, match="dims"):
        load_features(tmp_path / "f.vlmf")


def test_sidecar_dim_mismatch(tmp_path):
    save_vlmf(tmp_path / "f.vlmf", np.ones((4, 2), np.float32))
    (tmp_path / "f.vlmf.grid.json").write_text('{"gh": 3, "gw": 3}')
    with pytest.raises(VlmfError, match="dims"):
        load_features(tmp_path / "f.vlmf")


def test_truncated_file(tmp_path):
    (tmp_path / "f.vlmf").write_bytes(vlmf_bytes(np.ones((2, 2, 3), np.float32))[:-3])
    with pytest.raises(VlmfError, match="unexpected end of data"):
        load_features(tmp_path / "f.vlmf")


def test_wrong_magic(tmp_path):
    (tmp_path / "f.vlmf").write_bytes(b"NOPE" + vlmf_bytes(np.ones((2, 2, 3), np.float32))[4:])
    with pytest.raises(VlmfError, match="VLMF"):
        load_features(tmp_path / "f.vlmf")
