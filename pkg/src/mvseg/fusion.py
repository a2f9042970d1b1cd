"""Cross-view enhancement of the decoder pyramid.

``CrossViewEnhancement`` refines the deep feature: global tokens attend to the
unified local tokens, then each local view attends to the quadrant of the
enhanced global tokens covering it. ``HierarchicalInteraction`` pushes merged
deeper local detail into a shallow global map and the enhanced global context
back into the shallow local maps.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .layers import MLP, Attention, LayerNorm2d, map_to_tokens, tokens_to_map, upsample2x
from .multiview import NUM_LOCAL, pack_views, scatter_pack, scatter_unified, split_merge, split_views


def partition_global_tokens(global_map: torch.Tensor) -> list[torch.Tensor]:
    """Return the tokens of each spatial quadrant of ``(B, C, a, b)`` as ``(B, ab/4, C)``.

    Group ``m`` covers the same image region as local view ``m``.
    """
    a, b = global_map.shape[-2:]
    groups = [map_to_tokens(q) for q in scatter_unified(global_map)]
    expected = a * b // 4
    for g in groups:
        if g.shape[1] != expected:
            raise RuntimeError(f"quadrant holds {g.shape[1]} tokens, expected {expected}")
    return groups


class CrossAttentionBlock(nn.Module):
    """``LN(attn(q, kv, kv) + q)`` followed by ``LN(FFN(x) + x)``."""

    def __init__(self, dim: int, num_heads: int, ffn_ratio: int) -> None:
        super().__init__()
        self.attn = Attention(dim, num_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = MLP(dim, dim * ffn_ratio)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        x = self.norm1(self.attn(q, kv, kv) + q)
        return self.norm2(self.ffn(x) + x)


class CrossViewEnhancement(nn.Module):
    def __init__(self, dim: int, num_heads: int, ffn_ratio: int = 4) -> None:
        super().__init__()
        self.global_block = CrossAttentionBlock(dim, num_heads, ffn_ratio)
        # one attention + FFN shared by the four quadrant/view pairs
        self.local_block = CrossAttentionBlock(dim, num_heads, ffn_ratio)

    def forward(self, f16: torch.Tensor) -> torch.Tensor:
        locals_, glob = split_views(f16)
        a, b = glob.shape[-2:]
        if a % 2 or b % 2:
            raise ValueError(f"deep feature spatial dims must be even, got {a}x{b}")
        unified, _ = split_merge(f16)

        g_tokens = map_to_tokens(glob)
        enhanced_g = self.global_block(g_tokens, map_to_tokens(unified))
        enhanced_g_map = tokens_to_map(enhanced_g, (a, b))

        groups = partition_global_tokens(enhanced_g_map)
        queries = torch.cat([map_to_tokens(v) for v in locals_], dim=0)
        keys = torch.cat(groups, dim=0)
        enhanced_l = self.local_block(queries, keys)
        enhanced_locals = tokens_to_map(enhanced_l, (a, b)).chunk(NUM_LOCAL, dim=0)
        return pack_views(list(enhanced_locals), enhanced_g_map)


def _depthwise3x3(channels: int) -> nn.Conv2d:
    return nn.Conv2d(channels, channels, kernel_size=3, padding=1, groups=channels)


class HierarchicalInteraction(nn.Module):
    """Enhance a shallow ``(5B, C, 2a, 2b)`` map with a deeper ``(5B, C, a, b)`` one."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.deep_dw = _depthwise3x3(dim)
        self.global_fuse = nn.Conv2d(2 * dim, dim, kernel_size=1)
        self.context_dw = _depthwise3x3(dim)
        self.local_fuse = nn.Conv2d(2 * dim, dim, kernel_size=1)
        self.norm = LayerNorm2d(dim)
        self.proj = nn.Conv2d(dim, dim, kernel_size=1)

    def forward(self, deep: torch.Tensor, shallow: torch.Tensor) -> torch.Tensor:
        a, b = deep.shape[-2:]
        if tuple(shallow.shape[-2:]) != (2 * a, 2 * b) or shallow.shape[:2] != deep.shape[:2]:
            raise ValueError(
                f"shallow {tuple(shallow.shape)} must double the spatial dims of deep {tuple(deep.shape)}"
            )
        deep_unified, _ = split_merge(deep)
        shallow_unified, shallow_g = split_merge(shallow)

        enh_g = self.global_fuse(torch.cat([self.deep_dw(deep_unified), shallow_g], dim=1))
        context = self.context_dw(upsample2x(enh_g))
        enh_unified = self.local_fuse(torch.cat([context, shallow_unified], dim=1))

        fused = scatter_pack(enh_unified, enh_g)
        return self.proj(F.gelu(self.norm(fused)))
