"""Feature enhancement and modality fusion blocks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ChannelAttention(nn.Module):
    """Squeeze-excitation style reweighting: pool, C -> C/4 -> C, sigmoid, scale."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"channel attention needs >= {reduction} channels, got {channels}")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        w = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(w))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.weights(x)[:, :, None, None]


class SpatialGate(nn.Module):
    def __init__(self, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        m = x.amax(dim=1, keepdim=True)
        return x * torch.sigmoid(self.conv(m))


class AttentiveEnhancement(nn.Module):
    """Spatial gate from the channel-wise max map, then channel attention."""

    def __init__(self, channels: int):
        super().__init__()
        self.spatial = SpatialGate(3)
        self.channel = ChannelAttention(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.channel(self.spatial(x))


def early_fuse(fr: torch.Tensor, fd: torch.Tensor) -> torch.Tensor:
    if fr.shape != fd.shape:
        raise ValueError(f"shape mismatch: {tuple(fr.shape)} vs {tuple(fd.shape)}")
    return fr + fd + fr * fd


class ModalityGate(nn.Module):
    """Per-sample scalar gate in (0,1) from both branches' mean-pooled features."""

    def __init__(self, channels: int, dropout: float = 0.1):
        super().__init__()
        width = 2 * channels
        self.fc1 = nn.Linear(width, width)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(width, 1)
        nn.init.trunc_normal_(self.fc1.weight, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(self.fc1.bias)
        nn.init.trunc_normal_(self.fc2.weight, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, f_rd: torch.Tensor, f_dr: torch.Tensor) -> torch.Tensor:
        if f_rd.shape != f_dr.shape:
            raise ValueError(f"shape mismatch: {tuple(f_rd.shape)} vs {tuple(f_dr.shape)}")
        f_g = torch.cat([f_rd.mean(dim=(2, 3)), f_dr.mean(dim=(2, 3))], dim=1)
        return torch.sigmoid(self.fc2(self.drop(self.act(self.fc1(f_g)))))


def gma_fuse(f_rd: torch.Tensor, f_dr: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    if f_rd.shape != f_dr.shape:
        raise ValueError(f"shape mismatch: {tuple(f_rd.shape)} vs {tuple(f_dr.shape)}")
    g = g.view(g.shape[0], *([1] * (f_rd.ndim - 1)))
    return g * f_rd + (1 - g) * f_dr


class SkipConv(nn.Module):
    """Early-stage features projected, resized to stage-1 resolution and fused."""

    def __init__(self, in_channels: tuple[int, int, int], width: int):
        super().__init__()
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_channels)
        self.fuse = nn.Conv2d(3 * width, width, 3, padding=1)
        self.ca = ChannelAttention(width)

    def forward(self, f1: torch.Tensor, f2: torch.Tensor, f3: torch.Tensor) -> torch.Tensor:
        size = f1.shape[-2:]
        xs = []
        for proj, f in zip(self.proj, (f1, f2, f3)):
            x = proj(f)
            if x.shape[-2:] != size:
                x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
            xs.append(x)
        return self.ca(F.relu(self.fuse(torch.cat(xs, dim=1))))
