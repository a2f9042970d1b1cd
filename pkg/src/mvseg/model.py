"""End-to-end multi-view segmentation network."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .decoder import MaskHead, MaskOutputs, TwoWayTransformer
from .drm import DetailRefinement
from .encoder import Encoder, PyramidFeatures
from .fusion import CrossViewEnhancement, HierarchicalInteraction
from .multiview import NUM_VIEWS, make_multiview, merge_locals, split_views


@dataclass
class SegmentationOutput:
    logits_p: torch.Tensor
    mask: MaskOutputs
    pyramid: PyramidFeatures
    enhanced: tuple[torch.Tensor, torch.Tensor, torch.Tensor]

    @property
    def m_p(self) -> torch.Tensor:
        return torch.sigmoid(self.logits_p)

    @property
    def m_s(self) -> torch.Tensor:
        return self.mask.m_s


class MultiViewSegmenter(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        c = cfg.neck_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.encoder = Encoder(cfg)
            self.output_tokens = nn.Parameter(torch.randn(cfg.num_output_tokens, c) * 0.02)
            self.twoway = TwoWayTransformer(c, cfg.twoway_depth, cfg.decoder_heads, cfg.ffn_ratio)
            self.mcem = CrossViewEnhancement(c, cfg.fusion_heads, cfg.ffn_ratio) if cfg.mcem_enabled else None
            self.hmim8 = HierarchicalInteraction(c) if cfg.hmim_enabled else None
            self.hmim4 = HierarchicalInteraction(c) if cfg.hmim_enabled else None
            self.mask_head = MaskHead(c, cfg.mask_feature_dim)
            self.drm = (
                DetailRefinement(cfg.mask_feature_dim, cfg.refine_width, cfg.drm_aux_depth)
                if cfg.drm_enabled
                else None
            )
        if cfg.freeze_backbone:
            for _, p in self.encoder.named_backbone_parameters():
                p.requires_grad_(False)

    def forward(self, views: torch.Tensor, unified_image: torch.Tensor | None = None) -> SegmentationOutput:
        """Run on a ``(5B, 3, h, w)`` multi-view batch.

        ``unified_image`` defaults to the merged local views, i.e. the
        ``(2h, 2w)``-resized input image.
        """
        if views.shape[0] % NUM_VIEWS:
            raise ValueError(f"batch {views.shape[0]} is not divisible by {NUM_VIEWS}")
        if unified_image is None:
            unified_image = merge_locals(split_views(views)[0])
        h, w = views.shape[-2:]
        out_size = (2 * h, 2 * w)

        pyramid = self.encoder(views)
        tokens = self.output_tokens.unsqueeze(0).expand(views.shape[0], -1, -1)
        f16, tokens = self.twoway(pyramid.f16, tokens)
        e16 = self.mcem(f16) if self.mcem is not None else f16
        if self.hmim8 is not None and self.hmim4 is not None:
            e8 = self.hmim8(e16, pyramid.f8)
            e4 = self.hmim4(e8, pyramid.f4)
        else:
            e8, e4 = pyramid.f8, pyramid.f4
        mask = self.mask_head(e4, e8, e16, tokens, out_size)
        logits_p = self.drm(mask.f_p, unified_image) if self.drm is not None else mask.logits_s
        return SegmentationOutput(logits_p=logits_p, mask=mask, pyramid=pyramid, enhanced=(e4, e8, e16))

    def forward_image(self, img: torch.Tensor) -> SegmentationOutput:
        """Build the multi-view batch from a ``(B, 3, H, W)`` image and run."""
        return self(make_multiview(img, self.cfg.view_size))

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Split parameters into ``new``, ``pretrained`` and ``frozen`` groups.

        ``pretrained`` mirrors the parts a real backbone/decoder checkpoint
        would supply and that stay trainable: the encoder neck, the decoder core
        and, when not frozen, the encoder backbone.
        """
        groups: dict[str, list[tuple[str, nn.Parameter]]] = {"new": [], "pretrained": [], "frozen": []}
        backbone = {name for name, _ in self.encoder.named_backbone_parameters()}
        for name, p in self.named_parameters():
            local = name.split(".", 1)[1] if name.startswith("encoder.") else None
            if local is not None and local in backbone:
                groups["frozen" if self.cfg.freeze_backbone else "pretrained"].append((name, p))
            elif (local is not None and local.startswith("neck.")) or name.startswith(
                ("twoway.", "mask_head.", "output_tokens")
            ):
                groups["pretrained"].append((name, p))
            else:
                groups["new"].append((name, p))
        return groups


def count_parameters(params) -> int:
    return sum(p.numel() for _, p in params)
