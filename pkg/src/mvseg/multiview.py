"""Multi-view batch construction and the layout helpers used by every model stage.

A multi-view batch stacks five views of each image along the batch axis in
view-blocked order::

    [L1 x B, L2 x B, L3 x B, L4 x B, G x B]

``L1..L4`` are the quadrants of the image in row-major order (top-left,
top-right, bottom-left, bottom-right) and ``G`` is the whole image resized to
the view resolution. Splitting is therefore a constant-offset slice.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F

NUM_VIEWS = 5
NUM_LOCAL = 4


def resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize (align_corners=False); a no-op when ``size`` already matches."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def make_multiview(img: torch.Tensor, view_size: tuple[int, int]) -> torch.Tensor:
    """Build the ``(5B, 3, h, w)`` multi-view batch from a ``(B, 3, H, W)`` image.

    The image is resized to ``(2h, 2w)`` and cut into four exact quadrants; the
    global view is the original image resized straight to ``(h, w)``.
    """
    if img.dim() != 4:
        raise ValueError(f"expected a (B, C, H, W) image, got shape {tuple(img.shape)}")
    h, w = view_size
    if h <= 0 or w <= 0:
        raise ValueError(f"view size must be positive, got {view_size}")
    if h < 8 or w < 8:
        raise ValueError(f"view size must be at least 8x8, got {view_size}")
    H, W = img.shape[-2:]
    if H < 2 or W < 2:
        raise ValueError(f"image must be at least 2x2 pixels, got {H}x{W}")

    big = resize(img, (2 * h, 2 * w))
    locals_ = scatter_unified(big)
    glob = resize(img, (h, w))
    return pack_views(locals_, glob)


def split_views(x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
    """Slice a ``(5B, ...)`` tensor into its four local blocks and the global block."""
    n = x.shape[0]
    if n % NUM_VIEWS:
        raise ValueError(f"leading dimension {n} is not divisible by {NUM_VIEWS}")
    b = n // NUM_VIEWS
    locals_ = [x[m * b : (m + 1) * b] for m in range(NUM_LOCAL)]
    return locals_, x[NUM_LOCAL * b :]


def pack_views(locals_: Sequence[torch.Tensor], glob: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`split_views`."""
    if len(locals_) != NUM_LOCAL:
        raise ValueError(f"expected {NUM_LOCAL} local views, got {len(locals_)}")
    shapes = {tuple(t.shape) for t in locals_} | {tuple(glob.shape)}
    if len(shapes) != 1:
        raise ValueError(f"all views must share one shape, got {sorted(shapes)}")
    return torch.cat([*locals_, glob], dim=0)


def merge_locals(locals_: Sequence[torch.Tensor]) -> torch.Tensor:
    """Place four ``(B, C, a, b)`` quadrants into one ``(B, C, 2a, 2b)`` map."""
    if len(locals_) != NUM_LOCAL:
        raise ValueError(f"expected {NUM_LOCAL} quadrants, got {len(locals_)}")
    shapes = {tuple(t.shape) for t in locals_}
    if len(shapes) != 1:
        raise ValueError(f"quadrants must share one shape, got {sorted(shapes)}")
    tl, tr, bl, br = locals_
    top = torch.cat([tl, tr], dim=-1)
    bottom = torch.cat([bl, br], dim=-1)
    return torch.cat([top, bottom], dim=-2)


def scatter_unified(u: torch.Tensor) -> list[torch.Tensor]:
    """Cut a ``(B, C, 2a, 2b)`` map into its four quadrants, row-major."""
    H, W = u.shape[-2:]
    if H % 2 or W % 2:
        raise ValueError(f"spatial dims must be even, got {H}x{W}")
    a, b = H // 2, W // 2
    return [
        u[..., :a, :b],
        u[..., :a, b:],
        u[..., a:, :b],
        u[..., a:, b:],
    ]


def split_merge(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a multi-view tensor and return ``(unified_local, global)``."""
    locals_, glob = split_views(x)
    return merge_locals(locals_), glob


def scatter_pack(unified: torch.Tensor, glob: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`split_merge`."""
    return pack_views(scatter_unified(unified), glob)
