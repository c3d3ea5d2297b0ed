"""Running a trained model over files and directories."""

from __future__ import annotations

import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .data import list_dataset, load_triplet, preprocess, save_prediction
from .model import RGBDSaliencyNet


@torch.no_grad()
def predict_triplet(model: RGBDSaliencyNet, rgb_path, depth_path=None
                    ) -> tuple[np.ndarray, Optional[np.ndarray], tuple[torch.Tensor, ...]]:
    """Saliency (and edge) maps at the RGB image's own resolution.

    Also returns the model inputs so callers can re-run them (benchmarking).
    """
    model.eval()
    t = load_triplet(rgb_path, depth_path, None)
    x = preprocess(t, model.cfg.input_size, with_depth=depth_path is not None)
    rgb = x.rgb_norm[None]
    depth = x.depth_norm[None] if depth_path is not None else None
    out = model(rgb, depth)
    size = t.rgb.shape[1:]

    def back(p):
        if p is None:
            return None
        if tuple(p.shape[-2:]) != tuple(size):
            p = F.interpolate(p, size=size, mode="bilinear", align_corners=False)
        return p[0].clamp(0, 1).numpy()

    return back(out["saliency"]), back(out["edge"]), (rgb, depth)


@torch.no_grad()
def benchmark(model: RGBDSaliencyNet, rgb: torch.Tensor, depth: Optional[torch.Tensor],
              runs: int) -> float:
    """Mean wall-clock seconds per forward pass after one warm-up pass."""
    model.eval()
    model(rgb, depth)
    t0 = time.perf_counter()
    for _ in range(runs):
        model(rgb, depth)
    return (time.perf_counter() - t0) / runs


@torch.no_grad()
def predict_dataset(model: RGBDSaliencyNet, root: str | Path, out_dir: str | Path) -> list[Path]:
    """Write ``<out_dir>/<id>.png`` for every sample under ``root``."""
    entries = list_dataset(root, require_gt=False)
    out_dir = Path(out_dir)
    paths = []
    for sid, rgb_path, depth_path, _ in entries:
        sal, _, _ = predict_triplet(model, rgb_path,
                                    depth_path if model.cfg.uses_depth else None)
        paths.append(save_prediction(sal, out_dir / f"{sid}.png"))
    return paths
