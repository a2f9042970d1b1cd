"""Paired image/mask datasets and geometric augmentation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import TrainConfig
from .evaluation import DataError, list_images


@dataclass(frozen=True)
class DatasetSpec:
    image_dir: str | os.PathLike
    mask_dir: str | os.PathLike
    working_resolution: tuple[int, int]


def read_rgb(path: Path) -> torch.Tensor:
    """``(3, H, W)`` float tensor in ``[0, 1]``."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def read_mask(path: Path) -> torch.Tensor:
    """``(1, H, W)`` binary float mask, foreground where the 8-bit value is >= 128."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA"):
            arr = np.asarray(im.convert("RGB"))
            if not (np.array_equal(arr[..., 0], arr[..., 1]) and np.array_equal(arr[..., 0], arr[..., 2])):
                raise DataError(f"mask {path} is not single-channel")
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return torch.from_numpy((arr >= 128).astype(np.float32))[None]


class PairedDataset:
    """Stem-matched images and masks, resized to the working resolution on load."""

    def __init__(self, spec: DatasetSpec) -> None:
        images = list_images(spec.image_dir)
        masks = list_images(spec.mask_dir)
        missing_mask = sorted(images.keys() - masks.keys())
        missing_image = sorted(masks.keys() - images.keys())
        if missing_mask or missing_image:
            raise DataError(f"unpaired files: images without mask {missing_mask}, masks without image {missing_image}")
        if not images:
            raise DataError(f"no images found in {spec.image_dir}")
        self.spec = spec
        self.stems = sorted(images)
        self._images = images
        self._masks = masks

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        stem = self.stems[index]
        try:
            image = read_rgb(self._images[stem])
            mask = read_mask(self._masks[stem])
        except OSError as exc:
            raise DataError(f"cannot read pair {stem!r}: {exc}") from exc
        if image.shape[-2:] != mask.shape[-2:]:
            raise DataError(f"image and mask sizes differ for {stem!r}")
        size = tuple(self.spec.working_resolution)
        image = F.interpolate(image[None], size=size, mode="bilinear", align_corners=False)[0]
        mask = F.interpolate(mask[None], size=size, mode="nearest")[0]
        return image, mask


def sample_seed(seed: int, epoch: int, index: int) -> int:
    """Deterministic per-sample seed, independent of loading order."""
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def hflip(image: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return image.flip(-1), mask.flip(-1)


def _uniform(rng: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(torch.rand((), generator=rng, dtype=torch.float64))


def random_crop(image, mask, scale: tuple[float, float], rng: torch.Generator):
    H, W = image.shape[-2:]
    side = math.sqrt(_uniform(rng, *scale))
    ch, cw = max(1, round(H * side)), max(1, round(W * side))
    top = int(torch.randint(0, H - ch + 1, (), generator=rng))
    left = int(torch.randint(0, W - cw + 1, (), generator=rng))
    image = image[:, top : top + ch, left : left + cw]
    mask = mask[:, top : top + ch, left : left + cw]
    image = F.interpolate(image[None], size=(H, W), mode="bilinear", align_corners=False)[0]
    mask = F.interpolate(mask[None], size=(H, W), mode="nearest")[0]
    return image, mask


def rotate(image, mask, degrees: float):
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    mat = torch.tensor([[c, -s, 0.0], [s, c, 0.0]], dtype=image.dtype)[None]
    grid = F.affine_grid(mat, [1, *image.shape], align_corners=False)
    image = F.grid_sample(image[None], grid, mode="bilinear", padding_mode="reflection", align_corners=False)[0]
    mask = F.grid_sample(mask[None], grid.to(mask.dtype), mode="nearest", padding_mode="reflection", align_corners=False)[0]
    return image, mask


def augment(image: torch.Tensor, mask: torch.Tensor, cfg: TrainConfig, rng: torch.Generator):
    """Apply the same random flip, crop and rotation to an image and its mask."""
    if cfg.hflip and float(torch.rand((), generator=rng)) < 0.5:
        image, mask = hflip(image, mask)
    if cfg.crop:
        image, mask = random_crop(image, mask, cfg.crop_scale, rng)
    if cfg.rotation and cfg.rotation_degrees > 0:
        image, mask = rotate(image, mask, _uniform(rng, -cfg.rotation_degrees, cfg.rotation_degrees))
    return image, mask


def synthetic_shapes(
    root: str | os.PathLike,
    count: int = 4,
    size: tuple[int, int] = (128, 128),
    seed: int = 0,
) -> DatasetSpec:
    """Write ``count`` images with one rectangle or ellipse each, plus masks."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    H, W = size
    yy, xx = np.mgrid[0:H, 0:W]
    for i in range(count):
        cy, cx = rng.uniform(0.3, 0.7) * H, rng.uniform(0.3, 0.7) * W
        ry, rx = rng.uniform(0.15, 0.3) * H, rng.uniform(0.15, 0.3) * W
        if i % 2 == 0:
            fg = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            fg = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        bg_colour = rng.uniform(0.0, 0.4, 3)
        fg_colour = rng.uniform(0.6, 1.0, 3)
        img = np.where(fg[..., None], fg_colour, bg_colour) + rng.normal(0, 0.03, (H, W, 3))
        img = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
        Image.fromarray(img).save(img_dir / f"shape_{i:02d}.png")
        Image.fromarray((fg * 255).astype(np.uint8)).save(mask_dir / f"shape_{i:02d}.png")
    return DatasetSpec(img_dir, mask_dir, size)
