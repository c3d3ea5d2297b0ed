import filecmp
import logging

import numpy as np
import pytest
import torch
from PIL import Image

from rgbdsod.data import (RGB_MEAN, RGB_STD, DataError, RGBDDataset, SampleTriplet, collate,
                          derive_edge_label, encode_prediction, generate_synthetic_dataset,
                          list_dataset, load_triplet, preprocess, render_scene, save_prediction)


def _edge_oracle(mask: np.ndarray) -> np.ndarray:
    """Pixel is an edge if its clamped 3x3 neighbourhood contains both labels."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            vals = {bool(mask[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)])
                    for dy in (-1, 0, 1) for dx in (-1, 0, 1)}
            out[y, x] = len(vals) == 2
    return out


def _write(root, sid, rgb, depth, gt):
    for sub in ("rgb", "depth", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, "RGB").save(root / "rgb" / f"{sid}.png")
    Image.fromarray(depth, "L").save(root / "depth" / f"{sid}.png")
    Image.fromarray(gt, "L").save(root / "gt" / f"{sid}.png")


def test_edge_label_matches_neighbourhood_oracle(rng):
    for _ in range(30):
        mask = rng.random((12, 15)) < rng.uniform(0.1, 0.9)
        got = derive_edge_label(mask[None].astype(np.float32))[0]
        np.testing.assert_array_equal(got.astype(bool), _edge_oracle(mask))


def test_edge_of_square():
    gt = np.zeros((1, 8, 8), np.float32)
    gt[0, 2:6, 2:6] = 1
    e = derive_edge_label(gt)[0]
    # two-pixel band: the square's outer ring plus the ring just outside it
    assert e.sum() == (6 * 6 - 2 * 2)
    assert e[3:5, 3:5].sum() == 0 and e[0].sum() == 0


def test_empty_and_full_masks_have_no_edge():
    assert derive_edge_label(np.zeros((1, 5, 5))).sum() == 0
    assert derive_edge_label(np.ones((1, 5, 5))).sum() == 0


def test_load_triplet_and_missing_maps(tmp_path, rng):
    rgb = rng.integers(0, 256, (10, 12, 3), dtype=np.uint8)
    _write(tmp_path, "a", rgb, np.full((10, 12), 7, np.uint8), np.zeros((10, 12), np.uint8))
    t = load_triplet(tmp_path / "rgb/a.png", tmp_path / "depth/a.png", tmp_path / "gt/a.png")
    assert t.rgb.shape == (3, 10, 12) and t.depth.shape == (1, 10, 12)
    np.testing.assert_allclose(t.rgb, rgb.transpose(2, 0, 1) / 255.0, atol=1e-7)
    t2 = load_triplet(tmp_path / "rgb/a.png", None, None)
    assert not t2.depth.any() and not t2.gt.any() and t2.id == "a"


def test_dimension_mismatch(tmp_path):
    _write(tmp_path, "a", np.zeros((8, 8, 3), np.uint8), np.zeros((8, 9), np.uint8),
           np.zeros((8, 8), np.uint8))
    with pytest.raises(DataError, match="dimension mismatch"):
        load_triplet(tmp_path / "rgb/a.png", tmp_path / "depth/a.png", tmp_path / "gt/a.png")


def test_wrong_channel_count(tmp_path):
    (tmp_path / "rgb").mkdir()
    Image.fromarray(np.zeros((8, 8), np.uint8), "L").save(tmp_path / "rgb/a.png")
    with pytest.raises(DataError, match="a.png"):
        load_triplet(tmp_path / "rgb/a.png", None, None)


def test_sixteen_bit_depth(tmp_path):
    (tmp_path / "rgb").mkdir()
    Image.fromarray(np.zeros((4, 4, 3), np.uint8), "RGB").save(tmp_path / "rgb/a.png")
    d = np.arange(16, dtype=np.uint16).reshape(4, 4) * 4000
    Image.fromarray(d).save(tmp_path / "d.png")
    t = load_triplet(tmp_path / "rgb/a.png", tmp_path / "d.png", None)
    np.testing.assert_allclose(t.depth[0], d / 65535.0, atol=1e-6)


def _triplet(rng, h=20, w=20):
    gt = (rng.random((1, h, w)) > 0.5).astype(np.float32)
    return SampleTriplet(rng.random((3, h, w)).astype(np.float32),
                         rng.random((1, h, w)).astype(np.float32), gt, derive_edge_label(gt), "x")


def test_preprocess_normalization(rng):
    t = _triplet(rng, 16, 16)
    x = preprocess(t, 16)
    mean = torch.tensor(RGB_MEAN).view(3, 1, 1)
    std = torch.tensor(RGB_STD).view(3, 1, 1)
    torch.testing.assert_close(x.rgb_norm * std + mean, torch.from_numpy(t.rgb))
    d = x.depth_norm * std + mean
    assert torch.allclose(d[0], d[1], atol=1e-6) and torch.allclose(d[1], d[2], atol=1e-6)
    assert abs(d.min().item()) < 1e-6 and abs(d.max().item() - 1) < 1e-6
    torch.testing.assert_close(x.gt_resized, torch.from_numpy(t.gt))


def test_preprocess_resizes(rng):
    x = preprocess(_triplet(rng, 20, 28), 32)
    assert x.rgb_norm.shape == (3, 32, 32) and x.depth_norm.shape == (3, 32, 32)
    assert x.gt_resized.shape == (1, 32, 32) and x.edge_resized.shape == (1, 32, 32)
    assert 0 <= x.gt_resized.min() and x.gt_resized.max() <= 1


def test_constant_depth_warns(rng, caplog):
    t = _triplet(rng, 8, 8)
    t.depth[:] = 0.3
    with caplog.at_level(logging.WARNING):
        x = preprocess(t, 8)
    assert "constant depth" in caplog.text
    d = x.depth_norm * torch.tensor(RGB_STD).view(3, 1, 1) + torch.tensor(RGB_MEAN).view(3, 1, 1)
    torch.testing.assert_close(d, torch.full_like(d, 0.5))


def test_encode_prediction_rounding():
    v = np.array([[0.0, 1.0, 0.5, 127.5 / 255, 1 / 510, 1.0 + 5e-7]])
    np.testing.assert_array_equal(encode_prediction(v)[0], [0, 255, 128, 128, 1, 255])
    with pytest.raises(DataError):
        encode_prediction(np.array([[1.01]]))
    with pytest.raises(DataError):
        encode_prediction(np.array([[-0.1]]))


def test_save_prediction_round_trip(tmp_path, rng):
    v = rng.random((1, 9, 7))
    p = save_prediction(v, tmp_path / "p.png")
    back = np.asarray(Image.open(p))
    assert back.shape == (9, 7)
    assert np.abs(back / 255.0 - v[0]).max() <= 0.5 / 255 + 1e-12


def test_list_dataset_errors(tmp_path):
    with pytest.raises(DataError, match="missing directory"):
        list_dataset(tmp_path)
    _write(tmp_path, "a", np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8),
           np.zeros((4, 4), np.uint8))
    Image.fromarray(np.zeros((4, 4, 3), np.uint8), "RGB").save(tmp_path / "rgb/b.png")
    with pytest.raises(DataError, match="b"):
        list_dataset(tmp_path)


def test_dataset_and_collate(synth_root):
    ds = RGBDDataset(synth_root / "train", 64)
    assert len(ds) == 8 and ds.ids == [f"{i:05d}" for i in range(8)]
    b = collate([ds[0], ds[1]])
    assert b["rgb"].shape == (2, 3, 64, 64) and b["edge"].shape == (2, 1, 64, 64)
    assert b["id"] == ["00000", "00001"]


def test_generator_is_deterministic(tmp_path):
    generate_synthetic_dataset(5, 11, 32, tmp_path / "a")
    generate_synthetic_dataset(5, 11, 32, tmp_path / "b")
    generate_synthetic_dataset(2, 11, 32, tmp_path / "c", start=3)
    for sub in ("rgb", "depth", "gt"):
        cmp = filecmp.dircmp(tmp_path / "a" / sub, tmp_path / "b" / sub)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        for sid in ("00003", "00004"):
            assert filecmp.cmp(tmp_path / "a" / sub / f"{sid}.png",
                               tmp_path / "c" / sub / f"{sid}.png", shallow=False)


def test_generator_seed_changes_output():
    a = render_scene(np.random.default_rng([1, 0]), 32)
    b = render_scene(np.random.default_rng([2, 0]), 32)
    assert not np.array_equal(a[0], b[0])


def test_generator_invariants():
    """Over 200 scenes: the salient object is non-trivial and nearest the camera."""
    for i in range(200):
        rgb, depth, gt = render_scene(np.random.default_rng([7, i]), 64)
        assert rgb.shape == (64, 64, 3) and depth.shape == gt.shape == (64, 64)
        assert set(np.unique(gt)) <= {0, 255}
        fg = gt == 255
        assert 0.02 <= fg.mean() <= 0.5
        assert fg.reshape(-1)[np.argmax(depth)]
        # mean depth on the object clearly exceeds the background
        assert depth[fg].mean() > depth[~fg].mean() + 0.2 * 255
