"""Small building blocks shared by the encoder, fusion, decoder and refinement stages."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class Attention(nn.Module):
    """Multi-head attention with separate query/key/value projections.

    Works for self- and cross-attention: ``q`` is ``(N, Lq, D)``, ``k`` and ``v``
    are ``(N, Lk, D)``.
    """

    def __init__(self, dim: int, num_heads: int) -> None:
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        n, length, dim = x.shape
        return x.reshape(n, length, self.num_heads, dim // self.num_heads).transpose(1, 2)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        q = self._heads(self.q_proj(q))
        k = self._heads(self.k_proj(k))
        v = self._heads(self.v_proj(v))
        out = F.scaled_dot_product_attention(q, k, v)
        n, _, length, _ = out.shape
        out = out.transpose(1, 2).reshape(n, length, -1)
        return self.out_proj(out)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int) -> None:
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of a ``(N, C, H, W)`` map."""

    def __init__(self, channels: int, eps: float = 1e-6) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ViewPairFuse(nn.Module):
    """Depth-wise 3D conv that fuses two stacked same-size maps into one.

    The pair is stacked on a depth axis of size 2; kernel ``(2, 3, 3)`` with
    stride ``(2, 1, 1)`` and padding ``(0, 1, 1)`` collapses that axis while
    keeping the spatial size. No bias: each channel owns 18 weights.
    """

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv3d(
            channels,
            channels,
            kernel_size=(2, 3, 3),
            stride=(2, 1, 1),
            padding=(0, 1, 1),
            groups=channels,
            bias=False,
        )

    def forward(self, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        if first.shape != second.shape:
            raise ValueError(f"pair shapes differ: {tuple(first.shape)} vs {tuple(second.shape)}")
        stacked = torch.stack([first, second], dim=2)
        return self.conv(stacked).squeeze(2)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def downsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.avg_pool2d(x, kernel_size=2, stride=2)


def tokens_to_map(x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    """``(N, H*W, C)`` -> ``(N, C, H, W)``."""
    n, length, c = x.shape
    h, w = hw
    if length != h * w:
        raise ValueError(f"{length} tokens cannot form a {h}x{w} grid")
    return x.transpose(1, 2).reshape(n, c, h, w)


def map_to_tokens(x: torch.Tensor) -> torch.Tensor:
    """``(N, C, H, W)`` -> ``(N, H*W, C)``."""
    return x.flatten(2).transpose(1, 2)
