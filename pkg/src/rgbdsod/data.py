"""RGB-D triplet I/O, preprocessing, edge labels and synthetic scenes."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

RGB_MEAN = (0.485, 0.456, 0.406)
RGB_STD = (0.229, 0.224, 0.225)
RGB_SUFFIXES = (".png", ".jpg", ".jpeg")

# synthetic depth sensor: blur radius (px at 64x64) and additive noise std
DEPTH_BLUR_SIGMA = 2.5
DEPTH_NOISE_STD = 0.03


class DataError(ValueError):
    pass


@dataclass
class SampleTriplet:
    rgb: np.ndarray    # [3,H,W] in [0,1]
    depth: np.ndarray  # [1,H,W] in [0,1]
    gt: np.ndarray     # [1,H,W] in [0,1]
    edge: np.ndarray   # [1,H,W] in {0,1}
    id: str


@dataclass
class ModelInput:
    rgb_norm: torch.Tensor    # [3,S,S]
    depth_norm: torch.Tensor  # [3,S,S]
    gt_resized: torch.Tensor  # [1,S,S]
    edge_resized: torch.Tensor
    id: str = ""


def _read_image(path: Path, channels: int) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if channels == 3:
        if img.mode != "RGB":
            raise DataError(f"{path}: expected 3-channel RGB image, got mode {img.mode}")
        return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    if img.mode in ("L", "1"):
        arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    elif img.mode in ("I;16", "I;16B", "I"):
        raw = np.asarray(img, dtype=np.float64)
        arr = (raw / 65535.0).astype(np.float32)
    else:
        raise DataError(f"{path}: expected single-channel image, got mode {img.mode}")
    return arr[None]


def load_triplet(rgb_path: str | Path, depth_path: Optional[str | Path],
                 gt_path: Optional[str | Path]) -> SampleTriplet:
    """Read one co-registered triplet; missing depth/gt paths yield zero maps."""
    rgb_path = Path(rgb_path)
    rgb = _read_image(rgb_path, 3)
    h, w = rgb.shape[1:]
    maps = {}
    for name, p in (("depth", depth_path), ("gt", gt_path)):
        if p is None:
            maps[name] = np.zeros((1, h, w), np.float32)
            continue
        arr = _read_image(Path(p), 1)
        if arr.shape[1:] != (h, w):
            raise DataError(
                f"dimension mismatch: {rgb_path.name} is {h}x{w} but {Path(p).name} is "
                f"{arr.shape[1]}x{arr.shape[2]}")
        maps[name] = arr
    gt = maps["gt"]
    return SampleTriplet(rgb, maps["depth"], gt, derive_edge_label(gt), rgb_path.stem)


def derive_edge_label(gt: np.ndarray) -> np.ndarray:
    """Binary boundary band: 3x3 dilation minus 3x3 erosion of the mask at 0.5."""
    mask = np.asarray(gt)[0] >= 0.5
    dil = ndimage.grey_dilation(mask.astype(np.uint8), size=(3, 3), mode="nearest")
    ero = ndimage.grey_erosion(mask.astype(np.uint8), size=(3, 3), mode="nearest")
    return (dil.astype(bool) & ~ero.astype(bool)).astype(np.float32)[None]


def _resize(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-2:] == (size, size):
        return x
    return F.interpolate(x[None], size=(size, size), mode="bilinear", align_corners=False)[0]


def normalize_rgb(x: torch.Tensor) -> torch.Tensor:
    mean = torch.tensor(RGB_MEAN, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(RGB_STD, dtype=x.dtype).view(3, 1, 1)
    return (x - mean) / std


def preprocess(t: SampleTriplet, size: int, with_depth: bool = True) -> ModelInput:
    """Resize to ``size`` and normalize; ``with_depth=False`` skips the depth channel."""
    rgb = _resize(torch.from_numpy(np.ascontiguousarray(t.rgb, np.float32)), size)
    depth = _resize(torch.from_numpy(np.ascontiguousarray(t.depth, np.float32)), size)
    gt = _resize(torch.from_numpy(np.ascontiguousarray(t.gt, np.float32)), size)
    edge = _resize(torch.from_numpy(np.ascontiguousarray(t.edge, np.float32)), size)

    lo, hi = depth.min(), depth.max()
    if not with_depth:
        depth = torch.zeros_like(depth)
    elif hi > lo:
        depth = (depth - lo) / (hi - lo)
    else:
        log.warning("sample %s: constant depth map, using 0.5", t.id or "<unnamed>")
        depth = torch.full_like(depth, 0.5)
    return ModelInput(
        rgb_norm=normalize_rgb(rgb),
        depth_norm=normalize_rgb(depth.expand(3, -1, -1).contiguous()),
        gt_resized=gt.clamp(0, 1),
        edge_resized=edge.clamp(0, 1),
        id=t.id,
    )


def encode_prediction(pred: np.ndarray | torch.Tensor, tol: float = 1e-6) -> np.ndarray:
    """[1,H,W] or [H,W] map in [0,1] -> uint8 image, round half up."""
    if isinstance(pred, torch.Tensor):
        pred = pred.detach().cpu().numpy()
    arr = np.asarray(pred, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[0]
    if arr.size and (arr.min() < -tol or arr.max() > 1 + tol):
        raise DataError(f"prediction values outside [0,1]: min {arr.min()}, max {arr.max()}")
    arr = np.clip(arr, 0.0, 1.0)
    return np.floor(255.0 * arr + 0.5).astype(np.uint8)


def save_prediction(pred: np.ndarray | torch.Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(encode_prediction(pred), mode="L").save(path)
    return path


# --------------------------------------------------------------------------
# dataset layout


def list_dataset(root: str | Path, require_gt: bool = True) -> list[tuple[str, Path, Path, Optional[Path]]]:
    """Match ``rgb/``, ``depth/`` and ``gt/`` files by stem, sorted by id."""
    root = Path(root)
    dirs = {name: root / name for name in ("rgb", "depth", "gt")}
    needed = ("rgb", "depth", "gt") if require_gt else ("rgb", "depth")
    for name in needed:
        if not dirs[name].is_dir():
            raise DataError(f"missing directory: {dirs[name]}")
    rgb = {p.stem: p for p in dirs["rgb"].iterdir() if p.suffix.lower() in RGB_SUFFIXES}
    depth = {p.stem: p for p in dirs["depth"].iterdir() if p.suffix.lower() == ".png"}
    gt = ({p.stem: p for p in dirs["gt"].iterdir() if p.suffix.lower() == ".png"}
          if dirs["gt"].is_dir() else {})
    if not rgb:
        raise DataError(f"no RGB images under {dirs['rgb']}")
    missing = sorted(set(rgb) ^ set(depth))
    if require_gt:
        missing = sorted(set(missing) | (set(rgb) ^ set(gt)))
    if missing:
        raise DataError(f"unmatched sample ids: {', '.join(missing)}")
    return [(k, rgb[k], depth[k], gt.get(k)) for k in sorted(rgb)]


class RGBDDataset(torch.utils.data.Dataset):
    """Preprocessed triplets held in memory (the toy corpora are small)."""

    def __init__(self, root: str | Path, size: int):
        self.root = Path(root)
        self.size = size
        self.entries = list_dataset(root)
        self._cache: dict[int, ModelInput] = {}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def __getitem__(self, index: int) -> ModelInput:
        if index not in self._cache:
            _, r, d, g = self.entries[index]
            self._cache[index] = preprocess(load_triplet(r, d, g), self.size)
        return self._cache[index]


def collate(batch: Sequence[ModelInput]) -> dict:
    return {
        "rgb": torch.stack([b.rgb_norm for b in batch]),
        "depth": torch.stack([b.depth_norm for b in batch]),
        "gt": torch.stack([b.gt_resized for b in batch]),
        "edge": torch.stack([b.edge_resized for b in batch]),
        "id": [b.id for b in batch],
    }


# --------------------------------------------------------------------------
# synthetic scenes


def _shape_mask(rng: np.random.Generator, size: int, lo: float, hi: float) -> np.ndarray:
    """A rectangle or circle lying fully inside the frame."""
    yy, xx = np.mgrid[0:size, 0:size]
    if rng.random() < 0.5:
        h = int(rng.integers(int(lo * size), int(hi * size) + 1))
        w = int(rng.integers(int(lo * size), int(hi * size) + 1))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    r = rng.uniform(lo * size * 0.6, hi * size * 0.6)
    cy = rng.uniform(r, size - r)
    cx = rng.uniform(r, size - r)
    return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r


def render_scene(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One scene as uint8 arrays (rgb [H,W,3], depth [H,W], gt [H,W])."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)

    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    rgb = c0[None, None] * (1 - ramp[..., None]) + c1[None, None] * ramp[..., None]
    d_lo = rng.uniform(0.05, 0.2)
    depth = d_lo + rng.uniform(0.05, 0.15) * ramp

    for _ in range(int(rng.integers(0, 3))):
        mask = _shape_mask(rng, size, 0.15, 0.45)
        ys, xs = np.nonzero(mask)
        base = rgb[int(ys.mean()), int(xs.mean())]
        rgb[mask] = np.clip(base * rng.uniform(0.9, 1.1, 3), 0, 1)
        depth[mask] = rng.uniform(0.4, 0.6)

    salient = _shape_mask(rng, size, 0.2, 0.6)
    rgb[salient] = rng.uniform(0.0, 1.0, 3)
    depth[salient] = rng.uniform(0.8, 1.0)

    # sensor-like depth: soft object boundaries plus mild noise
    depth = ndimage.gaussian_filter(depth, sigma=DEPTH_BLUR_SIGMA * size / 64, mode="nearest")
    depth = depth + rng.normal(0.0, DEPTH_NOISE_STD, depth.shape)
    rgb = rgb + rng.normal(0.0, 0.01, rgb.shape)

    to8 = lambda a: np.floor(255.0 * np.clip(a, 0, 1) + 0.5).astype(np.uint8)
    return to8(rgb), to8(depth), salient.astype(np.uint8) * 255


def generate_synthetic_dataset(count: int, seed: int, size: int, out_dir: str | Path,
                               start: int = 0) -> list[str]:
    """Write ``count`` scenes under out_dir/{rgb,depth,gt}; returns the id manifest.

    Scene ``i`` draws from a generator seeded with ``(seed, i)`` so any prefix of a
    larger run is reproduced exactly.
    """
    out = Path(out_dir)
    try:
        for sub in ("rgb", "depth", "gt"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    ids = []
    for i in range(start, start + count):
        rng = np.random.default_rng([seed, i])
        rgb, depth, gt = render_scene(rng, size)
        sid = f"{i:05d}"
        Image.fromarray(rgb, mode="RGB").save(out / "rgb" / f"{sid}.png")
        Image.fromarray(depth, mode="L").save(out / "depth" / f"{sid}.png")
        Image.fromarray(gt, mode="L").save(out / "gt" / f"{sid}.png")
        ids.append(sid)
    (out / "manifest.json").write_text(json.dumps(ids) + "\n")
    return ids
