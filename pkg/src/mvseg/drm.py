"""Detail refinement: restore the mask feature to full resolution with image detail."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .layers import ViewPairFuse, upsample2x
from .multiview import split_merge


class DetailRefinement(nn.Module):
    """Main branch upsamples the fused mask feature twice; an auxiliary conv stack
    reads the unified local image; their sum is mapped to one-channel logits.
    """

    def __init__(self, mask_dim: int, width: int, aux_depth: int = 3) -> None:
        super().__init__()
        self.fuse = ViewPairFuse(mask_dim)
        self.restore = nn.ModuleList(
            [
                nn.Conv2d(mask_dim, width, kernel_size=3, padding=1),
                nn.Conv2d(width, width, kernel_size=3, padding=1),
            ]
        )
        aux = [nn.Conv2d(3, width, kernel_size=3, padding=1)]
        aux += [nn.Conv2d(width, width, kernel_size=3, padding=1) for _ in range(aux_depth - 1)]
        self.aux = nn.ModuleList(aux)
        self.head_conv = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.head_out = nn.Conv2d(width, 1, kernel_size=1)

    def forward(self, f_p: torch.Tensor, unified_image: torch.Tensor) -> torch.Tensor:
        """Return ``(B, 1, 2h, 2w)`` logits from ``f_p`` ``(5B, C_p, h/4, w/4)``."""
        unified, glob = split_merge(f_p)
        a, b = glob.shape[-2:]
        x = self.fuse(unified, upsample2x(glob))
        expected = (2 * a, 2 * b)
        for conv in self.restore:
            if tuple(x.shape[-2:]) != expected:
                raise RuntimeError(f"restoration at {tuple(x.shape[-2:])}, expected {expected}")
            x = F.gelu(conv(upsample2x(x)))
            expected = (2 * expected[0], 2 * expected[1])
        if tuple(unified_image.shape[-2:]) != tuple(x.shape[-2:]) or unified_image.shape[0] != x.shape[0]:
            raise ValueError(
                f"unified image {tuple(unified_image.shape)} does not match restored feature {tuple(x.shape)}"
            )
        detail = unified_image
        for conv in self.aux:
            detail = F.gelu(conv(detail))
        return self.head_out(F.gelu(self.head_conv(x + detail)))
