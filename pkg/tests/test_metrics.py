import csv
import json

import numpy as np
import pytest
from PIL import Image

from rgbdsod.metrics import (MetricError, evaluate_dataset, evaluate_maps, f_max, f_measure,
                             mae, pr_arrays, pr_at_threshold, pr_curve, s_measure, to_uint8)

from sm_oracle import structure_measure


def _brute_fmax(S8, G):
    """Try every cut S8 >= v for each distinct value v, plus the empty cut."""
    fg = G.astype(bool)
    best = 0.0
    cuts = [S8 >= v for v in np.unique(S8)] + [np.zeros_like(fg)]
    for pos in cuts:
        tp = np.sum(pos & fg)
        fp = np.sum(pos & ~fg)
        p = tp / (tp + fp) if tp + fp else 1.0
        r = tp / fg.sum()
        f = 1.3 * p * r / (0.3 * p + r) if (0.3 * p + r) > 0 else 0.0
        best = max(best, f)
    return best


def _random_gt(rng, shape):
    while True:
        g = rng.random(shape) < rng.uniform(0.1, 0.7)
        if 0 < g.sum() < g.size:
            return g


# --- MAE -----------------------------------------------------------------

def test_mae_hand_example():
    S = np.array([[1, 0], [0.5, 0.5]])
    G = np.array([[1, 0], [0, 1]])
    assert mae(S, G) == pytest.approx(0.25, abs=1e-15)


def test_mae_trivial_and_symmetric(rng):
    G = rng.random((5, 6))
    assert mae(G, G) == 0.0
    assert mae(np.ones((3, 3)), np.zeros((3, 3))) == 1.0
    S = rng.random((5, 6))
    assert mae(S, G) == mae(G, S)


def test_mae_matches_direct_formula(rng):
    for _ in range(20):
        S, G = rng.random((7, 9)), rng.random((7, 9))
        direct = sum(abs(S[i, j] - G[i, j]) for i in range(7) for j in range(9)) / 63
        assert abs(mae(S, G) - direct) < 1e-12


def test_mae_shape_mismatch():
    with pytest.raises(MetricError):
        mae(np.zeros((2, 2)), np.zeros((2, 3)))


# --- precision / recall / F ------------------------------------------------

def test_pr_examples():
    G = np.zeros((4, 4), bool)
    G[:2] = True
    assert pr_at_threshold(255 * G.astype(np.uint8), G, 128) == (1.0, 1.0)
    p, r = pr_at_threshold(np.full((4, 4), 3, np.uint8), G, 0)
    assert (p, r) == (0.5, 1.0)
    assert pr_at_threshold(np.zeros((4, 4), np.uint8), G, 200) == (1.0, 0.0)


def test_pr_empty_gt_rejected():
    with pytest.raises(MetricError):
        pr_at_threshold(np.zeros((3, 3), np.uint8), np.zeros((3, 3), bool), 10)


def test_f_measure_examples():
    assert f_measure(1.0, 0.5) == pytest.approx(0.8125, abs=1e-15)
    assert f_measure(0.7, 0.0) == 0.0
    assert f_measure(0.0, 0.0) == 0.0
    for p in (0.1, 0.37, 0.9):
        assert f_measure(p, p) == pytest.approx(p, abs=1e-15)
        assert f_measure(p, p, beta2=2.0) == pytest.approx(p, abs=1e-15)


def test_f_max_uniform_prediction():
    G = np.zeros((4, 4), bool)
    G[:, :2] = True
    assert f_max(np.full((4, 4), 128, np.uint8), G) == pytest.approx(1.3 * 0.5 / 1.15, abs=1e-12)
    assert f_max(255 * G.astype(np.uint8), G) == 1.0


def test_f_max_equals_exhaustive_search(rng):
    for _ in range(100):
        G = _random_gt(rng, (8, 8))
        S8 = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        assert f_max(S8, G) == _brute_fmax(S8, G)


def test_pr_arrays_match_per_threshold(rng):
    G = _random_gt(rng, (8, 8))
    S8 = rng.integers(0, 256, (8, 8)).astype(np.uint8)
    P, R = pr_arrays(S8, G)
    for t in range(0, 256, 17):
        assert (P[t], R[t]) == pr_at_threshold(S8, G, t)


def test_recall_monotone_and_complete(rng):
    for _ in range(20):
        G = _random_gt(rng, (10, 10))
        curve = pr_curve(rng.integers(0, 256, (10, 10)).astype(np.uint8), G)
        assert len(curve) == 256 and [c[0] for c in curve] == list(range(256))
        R = np.array([c[2] for c in curve])
        assert R[0] == 1.0
        assert np.all(np.diff(R) <= 0)


# --- S-measure -----------------------------------------------------------

def test_s_measure_matches_reference_oracle(rng):
    for _ in range(100):
        G = _random_gt(rng, (16, 16))
        S = rng.random((16, 16))
        if rng.random() < 0.3:
            S = np.clip(G + rng.normal(0, 0.2, G.shape), 0, 1)
        expect = structure_measure(S.tolist(), G.tolist())
        assert abs(s_measure(S, G) - expect) < 1e-6


def test_s_measure_oracle_blob_shapes(rng):
    # compact objects, where centroid splits land in the interior
    yy, xx = np.mgrid[0:16, 0:16]
    for _ in range(20):
        cy, cx, r = rng.uniform(3, 13), rng.uniform(3, 13), rng.uniform(2, 5)
        G = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        if not 0 < G.sum() < G.size:
            continue
        S = np.clip(G * rng.uniform(0.5, 1) + rng.random(G.shape) * 0.3, 0, 1)
        assert abs(s_measure(S, G) - structure_measure(S.tolist(), G.tolist())) < 1e-6


def test_s_measure_conventions(rng):
    G = _random_gt(rng, (12, 12))
    assert s_measure(G.astype(float), G) == pytest.approx(1.0, abs=1e-9)
    zero = np.zeros((6, 6))
    assert s_measure(zero, zero.astype(bool)) == 1.0
    S = rng.random((6, 6))
    assert s_measure(S, np.zeros((6, 6), bool)) == pytest.approx(1 - S.mean())
    assert s_measure(S, np.ones((6, 6), bool)) == pytest.approx(S.mean())


def test_s_measure_range(rng):
    for _ in range(30):
        G = _random_gt(rng, (9, 11))
        v = s_measure(rng.random((9, 11)), G)
        assert 0.0 <= v <= 1.0


# --- dataset level -------------------------------------------------------

def _write_maps(d, maps):
    d.mkdir(parents=True, exist_ok=True)
    for sid, arr in maps.items():
        Image.fromarray(arr, "L").save(d / f"{sid}.png")


def test_evaluate_identical_dirs(tmp_path, rng):
    gts = {f"{i}": (255 * _random_gt(rng, (10, 12))).astype(np.uint8) for i in range(3)}
    _write_maps(tmp_path / "gt", gts)
    rep = evaluate_dataset(tmp_path / "gt", tmp_path / "gt")
    assert rep.mae == 0.0 and rep.f_max == 1.0
    assert rep.s_measure == pytest.approx(1.0, abs=1e-9)
    assert rep.n_images == 3 and rep.skipped == []


def test_evaluate_mean_mae():
    G = np.zeros((10, 10), np.uint8)
    G[:5] = 255
    S1 = G / 255.0
    S1[5:] = 0.2  # 50 pixels off by 0.2 -> 0.1
    S2 = G / 255.0
    S2[5:] = 0.6  # -> 0.3
    rep = evaluate_maps([("a", S1, G), ("b", S2, G)])
    assert rep.mae == pytest.approx(0.2, abs=1e-12)


def test_dataset_fmax_averages_then_maximizes(rng):
    items = []
    for i in range(4):
        G = (255 * _random_gt(rng, (8, 8))).astype(np.uint8)
        items.append((str(i), rng.integers(0, 256, (8, 8)) / 255.0, G))
    rep = evaluate_maps(items)
    Ps, Rs = zip(*(pr_arrays(to_uint8(S), G >= 128) for _, S, G in items))
    F = f_measure(np.mean(Ps, 0), np.mean(Rs, 0))
    assert rep.f_max == pytest.approx(float(F.max()), abs=1e-15)
    assert rep.f_max <= np.mean([f_max(to_uint8(S), G >= 128) for _, S, G in items]) + 1e-12


def test_empty_gt_skipped_for_pr(tmp_path):
    G = np.zeros((6, 6), np.uint8)
    full = G.copy()
    full[:3] = 255
    rep = evaluate_maps([("empty", np.zeros((6, 6)), G), ("ok", full / 255.0, full)])
    assert rep.skipped == ["empty"] and rep.f_max == 1.0 and rep.n_images == 2


def test_prediction_resized_to_gt(tmp_path):
    G = np.zeros((8, 8), np.uint8)
    G[:4] = 255
    rep = evaluate_maps([("a", np.ones((4, 4)), G)])
    assert rep.mae == pytest.approx(0.5)


def test_unmatched_stems(tmp_path, rng):
    _write_maps(tmp_path / "p", {"a": np.zeros((4, 4), np.uint8)})
    _write_maps(tmp_path / "g", {"b": np.zeros((4, 4), np.uint8)})
    with pytest.raises(MetricError, match="a, b"):
        evaluate_dataset(tmp_path / "p", tmp_path / "g")


def test_report_files(tmp_path, rng):
    G = (255 * _random_gt(rng, (8, 8))).astype(np.uint8)
    rep = evaluate_maps([("a", rng.random((8, 8)), G)])
    c = rep.write_csv(tmp_path / "pr.csv")
    rows = list(csv.reader(c.open()))
    assert rows[0] == ["threshold", "precision", "recall"] and len(rows) == 257
    j = json.loads(rep.write_json(tmp_path / "r.json", "toy", "pr.csv").read_text())
    assert set(j) == {"dataset", "n_images", "mae", "f_max", "s_measure", "skipped",
                      "pr_curve_csv"}
    for k in ("mae", "f_max", "s_measure"):
        assert 0 <= j[k] <= 1
