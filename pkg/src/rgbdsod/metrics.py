"""Salient-object-detection metrics: MAE, PR curve, F-measure / F-max, S-measure."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

BETA2 = 0.3
ALPHA = 0.5
N_THRESHOLDS = 256
_EPS = np.finfo(np.float64).eps


class MetricError(ValueError):
    pass


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def mae(S: np.ndarray, G: np.ndarray) -> float:
    S, G = np.asarray(S, np.float64), np.asarray(G, np.float64)
    _check_shapes(S, G)
    return float(np.mean(np.abs(S - G)))


def binarize_gt(G: np.ndarray) -> np.ndarray:
    """Foreground mask: >= 128 for 8-bit maps, >= 0.5 for real-valued ones."""
    G = np.asarray(G)
    if G.dtype == bool:
        return G
    if np.issubdtype(G.dtype, np.integer):
        return G >= 128
    return G >= 0.5


def to_uint8(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S)
    if S.dtype == np.uint8:
        return S
    return np.floor(255.0 * np.clip(S.astype(np.float64), 0, 1) + 0.5).astype(np.uint8)


def pr_at_threshold(S8: np.ndarray, G: np.ndarray, t: int) -> tuple[float, float]:
    """Precision/recall of the cut ``S8 >= t``; an empty prediction scores (1, 0)."""
    S8 = np.asarray(S8)
    fg = binarize_gt(G)
    _check_shapes(S8, fg)
    n_fg = int(fg.sum())
    if n_fg == 0:
        raise MetricError("ground truth has no foreground pixels")
    pos = S8 >= t
    tp = int(np.count_nonzero(pos & fg))
    fp = int(np.count_nonzero(pos & ~fg))
    p = tp / (tp + fp) if tp + fp else 1.0
    return p, tp / n_fg


def pr_arrays(S8: np.ndarray, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at every threshold 0..255 via cumulative histograms."""
    S8 = to_uint8(S8)
    fg = binarize_gt(G)
    _check_shapes(S8, fg)
    n_fg = int(fg.sum())
    if n_fg == 0:
        raise MetricError("ground truth has no foreground pixels")
    tp = np.cumsum(np.bincount(S8[fg], minlength=256)[::-1])[::-1].astype(np.float64)
    fp = np.cumsum(np.bincount(S8[~fg], minlength=256)[::-1])[::-1].astype(np.float64)
    npos = tp + fp
    precision = np.divide(tp, npos, out=np.ones_like(tp), where=npos > 0)
    return precision, tp / n_fg


def f_measure(P, R, beta2: float = BETA2):
    """(1+b2) P R / (b2 P + R), zero where both vanish. Accepts scalars or arrays."""
    P = np.asarray(P, np.float64)
    R = np.asarray(R, np.float64)
    num = (1 + beta2) * P * R
    den = beta2 * P + R
    F = np.divide(num, den, out=np.zeros(np.broadcast(P, R).shape), where=den > 0)
    return float(F) if F.ndim == 0 else F


def f_max(S8: np.ndarray, G: np.ndarray, beta2: float = BETA2) -> float:
    P, R = pr_arrays(S8, G)
    return float(np.max(f_measure(P, R, beta2)))


def pr_curve(S8: np.ndarray, G: np.ndarray) -> list[tuple[int, float, float]]:
    P, R = pr_arrays(S8, G)
    return [(t, float(P[t]), float(R[t])) for t in range(N_THRESHOLDS)]


# --------------------------------------------------------------------------
# structure measure


def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = float(x.mean())
    sigma = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + _EPS)


def s_object(S: np.ndarray, G: np.ndarray) -> float:
    u = G.mean()
    return float(u * _object_score(S[G]) + (1 - u) * _object_score(1.0 - S[~G]))


def _centroid(G: np.ndarray) -> tuple[int, int]:
    """1-based split indices (X along columns, Y along rows)."""
    rows, cols = G.shape
    total = G.sum()
    if total == 0:
        return _round_half_away(cols / 2), _round_half_away(rows / 2)
    i = np.arange(1, cols + 1)
    j = np.arange(1, rows + 1)
    X = _round_half_away(float((G.sum(axis=0) * i).sum() / total))
    Y = _round_half_away(float((G.sum(axis=1) * j).sum() / total))
    return X, Y


def _ssim(S: np.ndarray, G: np.ndarray) -> float:
    n = S.size
    if n == 0:
        return 0.0
    x, y = S.mean(), G.mean()
    sx2 = ((S - x) ** 2).sum() / (n - 1 + _EPS)
    sy2 = ((G - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((S - x) * (G - y)).sum() / (n - 1 + _EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx2 + sy2)
    if a != 0:
        return float(a / (b + _EPS))
    return 1.0 if b == 0 else 0.0


def s_region(S: np.ndarray, G: np.ndarray) -> float:
    X, Y = _centroid(G)
    rows, cols = G.shape
    Gf = G.astype(np.float64)
    area = rows * cols
    score = 0.0
    for rs, cs in ((slice(0, Y), slice(0, X)), (slice(0, Y), slice(X, None)),
                   (slice(Y, None), slice(0, X)), (slice(Y, None), slice(X, None))):
        s, g = S[rs, cs], Gf[rs, cs]
        if g.size:
            score += g.size / area * _ssim(s, g)
    return score


def s_measure(S: np.ndarray, G: np.ndarray, alpha: float = ALPHA) -> float:
    S = np.asarray(S, np.float64)
    G = binarize_gt(G)
    _check_shapes(S, G)
    y = G.mean()
    if y == 0:
        return float(1.0 - S.mean())
    if y == 1:
        return float(S.mean())
    q = alpha * s_object(S, G) + (1 - alpha) * s_region(S, G)
    return max(float(q), 0.0)


# --------------------------------------------------------------------------
# dataset evaluation


@dataclass
class EvalReport:
    mae: float
    f_max: float
    s_measure: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)
    n_images: int = 0
    skipped: list[str] = field(default_factory=list)

    @property
    def pr_curve(self) -> list[tuple[int, float, float]]:
        return [(t, float(self.precision[t]), float(self.recall[t])) for t in range(N_THRESHOLDS)]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["threshold,precision,recall"]
        lines += [f"{t},{p:.10f},{r:.10f}" for t, p, r in self.pr_curve]
        path.write_text("\n".join(lines) + "\n")
        return path

    def to_dict(self, dataset: str, pr_curve_csv: Optional[str]) -> dict:
        return {
            "dataset": dataset,
            "n_images": self.n_images,
            "mae": self.mae,
            "f_max": self.f_max,
            "s_measure": self.s_measure,
            "skipped": list(self.skipped),
            "pr_curve_csv": pr_curve_csv,
        }

    def write_json(self, path: str | Path, dataset: str, pr_curve_csv: Optional[str]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(dataset, pr_curve_csv), indent=2) + "\n")
        return path


def _png_map(directory: Path) -> dict[str, Path]:
    if (directory / "gt").is_dir():
        directory = directory / "gt"
    if not directory.is_dir():
        raise MetricError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() == ".png"}


def _read_gray(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise MetricError(f"cannot read {path}: {exc}") from exc
    if img.mode not in ("L", "1"):
        img = img.convert("L")
    return np.asarray(img.convert("L"), dtype=np.uint8)


def _resize_to(S: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if S.shape == shape:
        return S
    import torch
    import torch.nn.functional as F
    t = torch.from_numpy(S.astype(np.float64))[None, None]
    return F.interpolate(t, size=shape, mode="bilinear", align_corners=False)[0, 0].numpy()


def evaluate_maps(pairs) -> EvalReport:
    """Aggregate over (id, S in [0,1], G 8-bit) triples."""
    maes, sms, Ps, Rs, skipped, n = [], [], [], [], [], 0
    for sid, S, G8 in pairs:
        n += 1
        S = _resize_to(np.asarray(S, np.float64), G8.shape)
        maes.append(mae(S, G8 / 255.0))
        sms.append(s_measure(S, G8 >= 128))
        if not (G8 >= 128).any():
            skipped.append(sid)
            continue
        P, R = pr_arrays(to_uint8(S), G8 >= 128)
        Ps.append(P)
        Rs.append(R)
    if n == 0:
        raise MetricError("no images to evaluate")
    if Ps:
        P, R = np.mean(Ps, axis=0), np.mean(Rs, axis=0)
        fm = float(np.max(f_measure(P, R)))
    else:
        P, R, fm = np.ones(N_THRESHOLDS), np.zeros(N_THRESHOLDS), 0.0
    return EvalReport(mae=float(np.mean(maes)), f_max=fm, s_measure=float(np.mean(sms)),
                      precision=P, recall=R, n_images=n, skipped=skipped)


def evaluate_dataset(pred_dir: str | Path, gt_dir: str | Path) -> EvalReport:
    preds = _png_map(Path(pred_dir))
    gts = _png_map(Path(gt_dir))
    if not gts:
        raise MetricError(f"no ground-truth PNGs under {gt_dir}")
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise MetricError(f"unmatched ids between predictions and ground truth: {', '.join(missing)}")
    return evaluate_maps((sid, _read_gray(preds[sid]) / 255.0, _read_gray(gts[sid]))
                         for sid in sorted(gts))
