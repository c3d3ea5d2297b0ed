"""Token-domain attention blocks and cross-modality interaction.

Blocks here follow the post-norm layout ``LN(sublayer(y) + y)`` rather than the
pre-norm layout used inside the backbone.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .backbone import Mlp, trunc_normal_init


def tokenize(x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
    """[B,C,H,W] -> [B,H*W,C] in row-major order, plus the position table."""
    b, c, h, w = x.shape
    y = x.flatten(2).transpose(1, 2)
    if pos is not None:
        if pos.shape != (h * w, c):
            raise ValueError(f"position table {tuple(pos.shape)} does not match {(h * w, c)}")
        y = y + pos
    return y


def detokenize(y: torch.Tensor, h: int, w: int) -> torch.Tensor:
    b, n, c = y.shape
    if n != h * w:
        raise ValueError(f"{n} tokens cannot fill a {h}x{w} grid")
    return y.transpose(1, 2).reshape(b, c, h, w)


class MultiHeadAttention(nn.Module):
    """softmax(q k^T / sqrt(D/heads)) v per head, heads concatenated and projected."""

    def __init__(self, dim: int, num_heads: int, attn_drop: float = 0.0):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"{num_heads} heads do not divide dim {dim}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(attn_drop)
        self.store_attn = False
        self.last_attn: torch.Tensor | None = None

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor) -> torch.Tensor:
        if key.shape[1] != value.shape[1]:
            raise ValueError("key and value token counts differ")
        for t in (query, key, value):
            if t.shape[-1] != self.dim:
                raise ValueError(f"expected last dim {self.dim}, got {t.shape[-1]}")
        q, k, v = self._heads(self.q(query)), self._heads(self.k(key)), self._heads(self.v(value))
        attn = (q @ k.transpose(-2, -1)) / self.head_dim ** 0.5
        attn = attn.softmax(dim=-1)
        if self.store_attn:
            self.last_attn = attn.detach()
        out = self.attn_drop(attn) @ v
        b, _, n, _ = out.shape
        return self.proj(out.transpose(1, 2).reshape(b, n, self.dim))


class SelfAttentionBlock(nn.Module):
    """y* = LN(MHA(y, y, y) + y); y' = LN(MLP(y*) + y*)."""

    def __init__(self, dim: int, num_heads: int, drop: float = 0.1, mlp_ratio: float = 4.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads)
        self.drop = nn.Dropout(drop)
        self.norm1 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        y = self.norm1(self.drop(self.attn(y, y, y)) + y)
        return self.norm2(self.mlp(y) + y)


class CrossAttentionBlock(nn.Module):
    """One direction of cross attention: ``query`` attends over ``context``.

    The residual follows the query stream, so output length equals the
    query token count.
    """

    def __init__(self, dim: int, num_heads: int, drop: float = 0.1, mlp_ratio: float = 4.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads)
        self.drop = nn.Dropout(drop)
        self.norm1 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        y = self.norm1(self.drop(self.attn(query, context, context)) + query)
        return self.norm2(self.mlp(y) + y)


class CrossAttentionPair(nn.Module):
    """Exchanged-query attention between two streams.

    ``y_rd`` takes queries from depth and keys/values from RGB; ``y_dr`` the
    reverse.
    """

    def __init__(self, dim: int, num_heads: int, drop: float = 0.1, mlp_ratio: float = 4.0):
        super().__init__()
        self.rd = CrossAttentionBlock(dim, num_heads, drop, mlp_ratio)
        self.dr = CrossAttentionBlock(dim, num_heads, drop, mlp_ratio)

    def forward(self, y_r: torch.Tensor, y_d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if y_r.shape[-1] != y_d.shape[-1]:
            raise ValueError(f"dim mismatch: {y_r.shape[-1]} vs {y_d.shape[-1]}")
        return self.rd(y_d, y_r), self.dr(y_r, y_d)


class CrossModalityInteraction(nn.Module):
    """Cross attention then per-stream self attention, ``blocks`` times.

    Outputs are returned in branch order ``(rgb, depth)``. Each cross block
    keeps the residual of its query stream, so the RGB output is built from
    ``y_dr`` (RGB queries over depth context) and the depth output from
    ``y_rd``.
    """

    def __init__(self, dim: int, num_heads: int, resolution: int, blocks: int = 1,
                 drop: float = 0.1, mlp_ratio: float = 4.0):
        super().__init__()
        n = resolution * resolution
        self.pos_r = nn.Parameter(torch.zeros(n, dim))
        self.pos_d = nn.Parameter(torch.zeros(n, dim))
        self.cross = nn.ModuleList(CrossAttentionPair(dim, num_heads, drop, mlp_ratio)
                                   for _ in range(blocks))
        self.self_r = nn.ModuleList(SelfAttentionBlock(dim, num_heads, drop, mlp_ratio)
                                    for _ in range(blocks))
        self.self_d = nn.ModuleList(SelfAttentionBlock(dim, num_heads, drop, mlp_ratio)
                                    for _ in range(blocks))
        trunc_normal_init(self)

    def forward(self, f_r: torch.Tensor, f_d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f_r.shape != f_d.shape:
            raise ValueError(f"shape mismatch: {tuple(f_r.shape)} vs {tuple(f_d.shape)}")
        h, w = f_r.shape[-2:]
        rgb, dep = tokenize(f_r, self.pos_r), tokenize(f_d, self.pos_d)
        for cross, sa_r, sa_d in zip(self.cross, self.self_r, self.self_d):
            y_rd, y_dr = cross(rgb, dep)
            rgb, dep = sa_r(y_dr), sa_d(y_rd)
        return detokenize(rgb, h, w), detokenize(dep, h, w)


class JointStreamInteraction(nn.Module):
    """Both token sets concatenated into one sequence and self-attended jointly.

    Returns ``(f_r', f_d')``, split back in input order.
    """

    def __init__(self, dim: int, num_heads: int, resolution: int, blocks: int = 1,
                 drop: float = 0.1, mlp_ratio: float = 4.0):
        super().__init__()
        n = resolution * resolution
        self.pos_r = nn.Parameter(torch.zeros(n, dim))
        self.pos_d = nn.Parameter(torch.zeros(n, dim))
        # two joint blocks per unit, matching the block count of the exchanged-query form
        self.blocks = nn.ModuleList(SelfAttentionBlock(dim, num_heads, drop, mlp_ratio)
                                    for _ in range(2 * blocks))
        trunc_normal_init(self)

    def forward(self, f_r: torch.Tensor, f_d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f_r.shape != f_d.shape:
            raise ValueError(f"shape mismatch: {tuple(f_r.shape)} vs {tuple(f_d.shape)}")
        h, w = f_r.shape[-2:]
        n = h * w
        y = torch.cat([tokenize(f_r, self.pos_r), tokenize(f_d, self.pos_d)], dim=1)
        for blk in self.blocks:
            y = blk(y)
        return detokenize(y[:, :n], h, w), detokenize(y[:, n:], h, w)
