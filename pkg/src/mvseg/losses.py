"""BCE + boundary-weighted soft IoU, and the two-output training objective."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .config import LossConfig

PROB_EPS = 1e-6


def _check(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ in shape")
    if torch.isnan(pred).any() or torch.isnan(gt).any():
        raise ValueError("NaN in loss inputs")


def bce_loss(pred: torch.Tensor, gt: torch.Tensor, *, logits: bool = False) -> torch.Tensor:
    """Mean binary cross-entropy.

    With ``logits=True`` the stable log-sum-exp form is used; probabilities are
    otherwise clamped to ``[1e-6, 1 - 1e-6]``.
    """
    _check(pred, gt)
    if logits:
        return F.binary_cross_entropy_with_logits(pred, gt)
    p = pred.clamp(PROB_EPS, 1 - PROB_EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log1p(-p)).mean()


def iou_weight(gt: torch.Tensor, kernel: int = 15, gain: float = 5.0) -> torch.Tensor:
    """``1 + gain * |avgpool_k(gt) - gt|`` with zero padding counted in the average."""
    local_mean = F.avg_pool2d(gt, kernel_size=kernel, stride=1, padding=kernel // 2)
    return 1 + gain * (local_mean - gt).abs()


def weighted_iou_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    cfg: LossConfig | None = None,
    *,
    logits: bool = False,
) -> torch.Tensor:
    """Batch mean of ``1 - sum(w*p*g) / sum(w*(p + g - p*g))``; an empty union scores 0."""
    cfg = cfg or LossConfig()
    _check(pred, gt)
    p = torch.sigmoid(pred) if logits else pred
    w = iou_weight(gt, cfg.iou_weight_kernel, cfg.iou_weight_gain)
    inter = (w * p * gt).sum(dim=(1, 2, 3))
    union = (w * (p + gt - p * gt)).sum(dim=(1, 2, 3))
    empty = union == 0
    ratio = inter / torch.where(empty, torch.ones_like(union), union)
    loss = torch.where(empty, torch.zeros_like(union), 1 - ratio)
    return loss.mean()


def structure_loss(pred: torch.Tensor, gt: torch.Tensor, cfg: LossConfig | None = None, *, logits: bool = False):
    return bce_loss(pred, gt, logits=logits) + weighted_iou_loss(pred, gt, cfg, logits=logits)


def total_loss(
    m_p: torch.Tensor,
    m_s: torch.Tensor,
    gt: torch.Tensor,
    cfg: LossConfig | None = None,
    *,
    logits: bool = False,
    m_s_global: torch.Tensor | None = None,
) -> torch.Tensor:
    """``L(m_p, gt) + lambda * L(m_s, gt)``; ``m_s_global`` adds another ``lambda``-weighted term."""
    cfg = cfg or LossConfig()
    if m_p.shape != gt.shape or m_s.shape != gt.shape:
        raise ValueError(
            f"all maps must match the target {tuple(gt.shape)}: got {tuple(m_p.shape)} and {tuple(m_s.shape)}"
        )
    loss = structure_loss(m_p, gt, cfg, logits=logits) + cfg.lambda_aux * structure_loss(m_s, gt, cfg, logits=logits)
    if m_s_global is not None:
        loss = loss + cfg.lambda_aux * structure_loss(m_s_global, gt, cfg, logits=logits)
    return loss
