"""Densely connected saliency decoder and the prediction heads."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fusion import ChannelAttention


def up(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def com_fuse(f_cm: torch.Tensor, f_res: torch.Tensor) -> torch.Tensor:
    """Common features: f_cm * f_res + f_cm."""
    if f_cm.shape != f_res.shape:
        raise ValueError(f"shape mismatch: {tuple(f_cm.shape)} vs {tuple(f_res.shape)}")
    return f_cm * f_res + f_cm


class PredictionHead(nn.Module):
    """conv3x3 -> ReLU -> conv3x3, bilinear upsampling by ``scale``, sigmoid.

    Upsampling happens on logits: interpolating probabilities caps how sharp a
    boundary (and how thin an edge band) can be at full resolution.
    """

    def __init__(self, in_channels: int, width: int, scale: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, max(width // 2, 1), 3, padding=1)
        self.conv2 = nn.Conv2d(max(width // 2, 1), 1, 3, padding=1)
        self.scale = scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.conv2(F.relu(self.conv1(x)))
        if self.scale != 1:
            z = F.interpolate(z, scale_factor=self.scale, mode="bilinear", align_corners=False)
        return torch.sigmoid(z)


class DenseSaliencyDecoder(nn.Module):
    """Decoding stages 4 -> 1 over the five cross-modal maps.

    Each stage i fuses the upsampled deeper encoder maps (``res``), mixes them
    with f_cm^i (``com``), concatenates every earlier decoding output when
    ``dense_history`` is set, and applies channel attention followed by a 3x3
    width reduction. Without history only stage 1 runs, as nothing else would
    read stages 2-4.
    """

    def __init__(self, in_channels: tuple[int, ...], width: int, dense_history: bool = True):
        super().__init__()
        self.width = width
        self.dense_history = dense_history
        self.stage_ids = (4, 3, 2, 1) if dense_history else (1,)
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_channels)
        self.res = nn.ModuleDict({str(i): nn.Conv2d((5 - i) * width, width, 3, padding=1)
                                  for i in self.stage_ids})
        self.ca = nn.ModuleDict({str(i): ChannelAttention(self._ca_channels(i))
                                 for i in self.stage_ids})
        self.reduce = nn.ModuleDict({str(i): nn.Conv2d(self._ca_channels(i), width, 3, padding=1)
                                     for i in self.stage_ids})

    def _ca_channels(self, i: int) -> int:
        hist = (4 - i) if self.dense_history else 0
        return (2 + hist) * self.width

    def project(self, f_cm: list[torch.Tensor]) -> list[torch.Tensor]:
        return [p(f) for p, f in zip(self.proj, f_cm)]

    def res_fuse(self, i: int, f_cm: list[torch.Tensor]) -> torch.Tensor:
        """Upsampled f_cm^{i+1..5} (projected), concatenated, 3x3 conv."""
        if i not in self.stage_ids:
            raise ValueError(f"decoding stage {i} not built (stages {self.stage_ids})")
        size = f_cm[i - 1].shape[-2:]
        deeper = [up(f_cm[j - 1], size) for j in range(i + 1, 6)]
        return F.relu(self.res[str(i)](torch.cat(deeper, dim=1)))

    def decode_stage(self, i: int, f_com: torch.Tensor, f_cm_i: torch.Tensor,
                     history: dict[int, torch.Tensor]) -> torch.Tensor:
        size = f_cm_i.shape[-2:]
        parts = [f_com, f_cm_i]
        if self.dense_history:
            missing = [j for j in range(i + 1, 5) if j not in history]
            if missing:
                raise KeyError(f"decoding stage {i} needs history of stages {missing}")
            parts += [up(history[j], size) for j in range(i + 1, 5)]
        f_ca = torch.cat(parts, dim=1)
        return F.relu(self.reduce[str(i)](self.ca[str(i)](f_ca)))

    def forward(self, f_cm: list[torch.Tensor]) -> dict[int, torch.Tensor]:
        f_cm = self.project(f_cm)
        history: dict[int, torch.Tensor] = {}
        for i in self.stage_ids:
            f_res = self.res_fuse(i, f_cm)
            f_com = com_fuse(f_cm[i - 1], f_res)
            history[i] = self.decode_stage(i, f_com, f_cm[i - 1], history)
        return history


class PlainDecoder(nn.Module):
    """Cascade without dense links: each stage sees only Up(prev) and f_cm^i."""

    def __init__(self, in_channels: tuple[int, ...], width: int):
        super().__init__()
        self.width = width
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_channels)
        self.stages = nn.ModuleList(nn.Conv2d(2 * width, width, 3, padding=1) for _ in range(4))

    def forward(self, f_cm: list[torch.Tensor]) -> dict[int, torch.Tensor]:
        f_cm = [p(f) for p, f in zip(self.proj, f_cm)]
        prev = f_cm[4]
        out: dict[int, torch.Tensor] = {}
        for i in (4, 3, 2, 1):
            x = torch.cat([up(prev, f_cm[i - 1].shape[-2:]), f_cm[i - 1]], dim=1)
            prev = out[i] = F.relu(self.stages[i - 1](x))
        return out


class SaliencyDecoder(nn.Module):
    """Decoder body plus saliency head (with skip features) and optional edge head."""

    def __init__(self, in_channels: tuple[int, ...], width: int, patch_size: int,
                 variant: str = "full"):
        super().__init__()
        if variant == "no_dsd":
            self.body: nn.Module = PlainDecoder(in_channels, width)
        else:
            self.body = DenseSaliencyDecoder(in_channels, width,
                                             dense_history=variant != "no_fdec")
        self.saliency_head = PredictionHead(2 * width, width, patch_size)
        self.edge_head: Optional[PredictionHead] = (
            None if variant == "no_edge" else PredictionHead(width, width, patch_size))

    def forward(self, f_cm: list[torch.Tensor], f_skip: torch.Tensor) -> dict:
        f_dec = self.body(f_cm)
        if f_dec[1].shape[-2:] != f_skip.shape[-2:]:
            raise ValueError("skip features and stage-1 decoding differ in resolution")
        s = self.saliency_head(torch.cat([f_dec[1], f_skip], dim=1))
        e = self.edge_head(f_dec[1]) if self.edge_head is not None else None
        return {"saliency": s, "edge": e, "f_dec": f_dec}
