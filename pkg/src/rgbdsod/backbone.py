"""Hierarchical shifted-window transformer encoder (one per modality).

Stage 1 is the patch embedding. Stages 2-5 each run ``depths[s]`` window
blocks, alternating plain and shifted windows, with 2x2 patch merging in
front of stages 3-5. Internally tokens are kept channels-last as
``[B, H, W, C]``; stage outputs are handed out as ``[B, C, H, W]`` maps.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import RunConfig, derive_stage_geometry

MASK_VALUE = -1e4


def trunc_normal_init(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class DropPath(nn.Module):
    """Per-sample stochastic depth on the residual branch."""

    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        return x * x.new_empty(shape).bernoulli_(keep) / keep


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int, drop: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(drop)

    def forward(self, x):
        return self.drop(self.fc2(self.drop(self.act(self.fc1(x)))))


def window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    """[B,H,W,C] -> [B*nW, w*w, C]"""
    b, h, wd, c = x.shape
    x = x.view(b, h // w, w, wd // w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def window_reverse(windows: torch.Tensor, w: int, h: int, wd: int) -> torch.Tensor:
    """[B*nW, w*w, C] -> [B,H,W,C]"""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // w) * (wd // w))
    x = windows.view(b, h // w, wd // w, w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, wd, c)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside a window, with relative position bias."""

    def __init__(self, dim: int, window_size: int, num_heads: int,
                 attn_drop: float = 0.0, proj_drop: float = 0.0):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"{num_heads} heads do not divide dim {dim}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5

        w = window_size
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * w - 1) ** 2, num_heads))
        coords = torch.stack(torch.meshgrid(torch.arange(w), torch.arange(w), indexing="ij")).flatten(1)
        rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (w - 1)
        self.register_buffer("relative_position_index", rel[..., 0] * (2 * w - 1) + rel[..., 1],
                             persistent=False)

        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_drop = nn.Dropout(attn_drop)
        self.proj = nn.Linear(dim, dim)
        self.proj_drop = nn.Dropout(proj_drop)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02, a=-0.04, b=0.04)

        self.store_attn = False
        self.last_attn: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """x: [B*nW, N, C]; mask: [nW, N, N] additive (0 or MASK_VALUE)."""
        bw, n, c = x.shape
        qkv = self.qkv(x).reshape(bw, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        attn = attn + bias.view(n, n, -1).permute(2, 0, 1).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.num_heads, n, n) + mask[None, :, None].to(attn.dtype)
            attn = attn.view(-1, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        if self.store_attn:
            self.last_attn = attn.detach()
        attn = self.attn_drop(attn)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj_drop(self.proj(out))


class SwinBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, window_size: int, shifted: bool,
                 mlp_ratio: float = 4.0, drop: float = 0.0, attn_drop: float = 0.0,
                 drop_path: float = 0.0):
        super().__init__()
        self.window_size = window_size
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads, attn_drop, drop)
        self.drop_path = DropPath(drop_path)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop)

    def _mask(self, hp: int, wp: int, h: int, w: int, shift: int, device) -> torch.Tensor | None:
        ws = self.window_size
        pad = torch.zeros(hp, wp, device=device)
        pad[h:, :] = 1
        pad[:, w:] = 1
        region = torch.zeros(hp, wp, device=device)
        if shift:
            cnt = 0
            for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
                for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
                    region[hs, wsl] = cnt
                    cnt += 1
            pad = torch.roll(pad, (-shift, -shift), (0, 1))
        if not shift and hp == h and wp == w:
            return None
        pw = window_partition(pad[None, ..., None], ws)[..., 0]        # [nW, N]
        rw = window_partition(region[None, ..., None], ws)[..., 0]
        blocked = (rw[:, :, None] != rw[:, None, :]) | (pw[:, None, :] > 0)
        return torch.where(blocked, MASK_VALUE, 0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [B,H,W,C]"""
        b, h, w, c = x.shape
        ws = self.window_size
        shortcut = x
        x = self.norm1(x)
        pad_b, pad_r = (-h) % ws, (-w) % ws
        if pad_b or pad_r:
            x = F.pad(x, (0, 0, 0, pad_r, 0, pad_b))
        hp, wp = h + pad_b, w + pad_r
        # a single window already sees everything; shifting it would only split it
        shift = ws // 2 if self.shifted and (hp > ws or wp > ws) else 0
        if shift:
            x = torch.roll(x, (-shift, -shift), (1, 2))
        mask = self._mask(hp, wp, h, w, shift, x.device)
        out = self.attn(window_partition(x, ws), mask)
        x = window_reverse(out, ws, hp, wp)
        if shift:
            x = torch.roll(x, (shift, shift), (1, 2))
        x = x[:, :h, :w, :]
        x = shortcut + self.drop_path(x)
        return x + self.drop_path(self.mlp(self.norm2(x)))


class PatchEmbed(nn.Module):
    """Non-overlapping patch projection followed by layer norm."""

    def __init__(self, patch_size: int, in_chans: int, embed_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_chans, embed_dim, patch_size, stride=patch_size)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        p = self.patch_size
        if x.shape[-1] % p or x.shape[-2] % p:
            raise ValueError(f"input {tuple(x.shape[-2:])} not divisible by patch size {p}")
        x = self.proj(x)
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class PatchMerging(nn.Module):
    """[B,C,R,R] -> [B,2C,R/2,R/2] via 2x2 concat, norm, linear reduction."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"patch merging needs even resolution, got {h}x{w}")
        x = x.permute(0, 2, 3, 1)
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], -1)
        return self.reduction(self.norm(x)).permute(0, 3, 1, 2)


class EncoderStage(nn.Module):
    def __init__(self, dim: int, depth: int, num_heads: int, window_size: int, merge: bool,
                 mlp_ratio: float, drop: float, attn_drop: float, drop_path: list[float]):
        super().__init__()
        self.merge = PatchMerging(dim // 2) if merge else None
        self.blocks = nn.ModuleList(
            SwinBlock(dim, num_heads, window_size, shifted=bool(i % 2), mlp_ratio=mlp_ratio,
                      drop=drop, attn_drop=attn_drop, drop_path=drop_path[i])
            for i in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.merge is not None:
            x = self.merge(x)
        x = x.permute(0, 2, 3, 1)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x).permute(0, 3, 1, 2)


class SwinEncoder(nn.Module):
    """Five-stage pyramid for one modality.

    ``forward`` runs all stages; ``embed`` and ``stage`` let the caller interleave
    cross-modal interaction between stages.
    """

    def __init__(self, cfg: RunConfig, in_chans: int = 3):
        super().__init__()
        geo = derive_stage_geometry(cfg)
        self.geometry = geo
        self.patch_embed = PatchEmbed(cfg.patch_size, in_chans, cfg.embed_dim)
        total = sum(cfg.depths)
        rates = torch.linspace(0, cfg.drop_path_rate, total).tolist() if total else []
        self.stages = nn.ModuleList()
        start = 0
        for s in range(4):
            d = cfg.depths[s]
            self.stages.append(EncoderStage(
                geo.channels[s + 1], d, cfg.num_heads[s], cfg.window_size, merge=s > 0,
                mlp_ratio=cfg.mlp_ratio, drop=cfg.drop_rate, attn_drop=cfg.attn_drop_rate,
                drop_path=rates[start:start + d]))
            start += d
        trunc_normal_init(self)

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(image)

    def stage(self, index: int, x: torch.Tensor) -> torch.Tensor:
        """Run encoder stage ``index`` (2..5) on the previous stage's output."""
        return self.stages[index - 2](x)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        feats = [self.embed(image)]
        for i in range(2, 6):
            feats.append(self.stage(i, feats[-1]))
        return feats


def encode_modality(encoder: SwinEncoder, image: torch.Tensor) -> list[torch.Tensor]:
    return encoder(image)
