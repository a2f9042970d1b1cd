"""Stage-wise transformer encoder with a multi-view adapter in every block.

The encoder is a small stand-in for a large pretrained hierarchical backbone:
four stages at strides 4/8/16/32, plain global self-attention inside a stage,
strided-projection patch merging between stages and a top-down neck that emits
``F4``, ``F8`` and ``F16`` with a common channel count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig
from .layers import MLP, Attention, ViewPairFuse, downsample2x, map_to_tokens, tokens_to_map, upsample2x
from .multiview import NUM_VIEWS, scatter_pack, split_merge

STRIDES = (4, 8, 16, 32)


def adapter_param_count(dim: int, reduction_factor: int) -> int:
    """Closed-form parameter count of one adapter with token dim ``dim``.

    Down projection ``D*(D/r) + D/r``, up projection ``(D/r)*D + D`` and two
    bias-free depth-wise ``(2, 3, 3)`` kernels of ``18*(D/r)`` weights each.
    """
    if dim % reduction_factor:
        raise ConfigError(f"dim {dim} not divisible by reduction_factor {reduction_factor}")
    c = dim // reduction_factor
    return (dim * c + c) + (c * dim + dim) + 2 * 18 * c


class MultiViewAdapter(nn.Module):
    """Bottleneck adapter exchanging information between local and global views.

    Tokens are projected down, laid out as maps, split into the unified local
    map and the global map, and each is fused with the other view (resampled to
    its size) by a depth-wise 3D conv. The re-packed result goes through GELU
    and the up projection and is added back to the input. The up projection
    starts at zero, so a fresh adapter is the identity.
    """

    def __init__(self, dim: int, reduction_factor: int) -> None:
        super().__init__()
        if dim % reduction_factor:
            raise ConfigError(f"dim {dim} not divisible by reduction_factor {reduction_factor}")
        hidden = dim // reduction_factor
        self.down = nn.Linear(dim, hidden)
        self.local_fuse = ViewPairFuse(hidden)
        self.global_fuse = ViewPairFuse(hidden)
        self.up = nn.Linear(hidden, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        if x.shape[0] % NUM_VIEWS:
            raise ValueError(f"batch {x.shape[0]} is not divisible by {NUM_VIEWS}")
        z = tokens_to_map(self.down(x), hw)
        unified, glob = split_merge(z)
        # both branches read the un-enhanced maps
        new_unified = self.local_fuse(unified, upsample2x(glob))
        new_glob = self.global_fuse(downsample2x(unified), glob)
        z = scatter_pack(new_unified, new_glob)
        return x + self.up(F.gelu(map_to_tokens(z)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, ffn_ratio: int, reduction_factor: int, adapter: bool) -> None:
        super().__init__()
        self.adapter = MultiViewAdapter(dim, reduction_factor) if adapter else None
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * ffn_ratio)

    def forward(self, x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        if self.adapter is not None:
            x = self.adapter(x, hw)
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        x = x + self.mlp(self.norm2(x))
        return x


@dataclass
class PyramidFeatures:
    f4: torch.Tensor
    f8: torch.Tensor
    f16: torch.Tensor


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        dims = cfg.stage_dims
        self.patch_embed = nn.Conv2d(3, dims[0], kernel_size=4, stride=4)
        self.merges = nn.ModuleList(
            nn.Conv2d(dims[i - 1], dims[i], kernel_size=2, stride=2) for i in range(1, 4)
        )
        self.stages = nn.ModuleList(
            nn.ModuleList(
                EncoderBlock(dims[i], cfg.heads[i], cfg.ffn_ratio, cfg.reduction_factor, cfg.adapter_enabled)
                for _ in range(cfg.stage_depths[i])
            )
            for i in range(4)
        )
        self.neck = nn.ModuleList(nn.Conv2d(d, cfg.neck_dim, kernel_size=1) for d in dims)

    def forward(self, x: torch.Tensor) -> PyramidFeatures:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ConfigError(f"view size {h}x{w} must be divisible by 32")
        if x.shape[0] % NUM_VIEWS:
            raise ValueError(f"batch {x.shape[0]} is not divisible by {NUM_VIEWS}")
        maps = []
        feat = self.patch_embed(x)
        for i, blocks in enumerate(self.stages):
            if i > 0:
                feat = self.merges[i - 1](feat)
            hw = (feat.shape[-2], feat.shape[-1])
            tokens = map_to_tokens(feat)
            for block in blocks:
                tokens = block(tokens, hw)
            feat = tokens_to_map(tokens, hw)
            maps.append(feat)

        p = self.neck[3](maps[3])
        outs = []
        for i in (2, 1, 0):
            p = self.neck[i](maps[i]) + upsample2x(p)
            outs.append(p)
        f16, f8, f4 = outs
        return PyramidFeatures(f4=f4, f8=f8, f16=f16)

    def named_adapter_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        for name, p in self.named_parameters():
            if ".adapter." in name:
                yield name, p

    def named_neck_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        for name, p in self.named_parameters():
            if name.startswith("neck."):
                yield name, p

    def named_backbone_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        for name, p in self.named_parameters():
            if ".adapter." not in name and not name.startswith("neck."):
                yield name, p

    def block_dims(self) -> list[int]:
        return [self.cfg.stage_dims[i] for i in range(4) for _ in range(self.cfg.stage_depths[i])]
