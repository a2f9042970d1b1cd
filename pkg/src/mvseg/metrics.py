"""Class-agnostic segmentation metrics.

All functions take ``pred`` as a float map in ``[0, 1]`` and ``gt`` as a
binary map (anything ``> 0.5`` is foreground). Threshold sweeps binarize
``pred >= k/255`` for ``k = 0..255``.

Conventions
-----------
* F-measures use ``beta_sq`` directly (``0.3`` for max-F, ``1`` for weighted F).
* Metrics that need foreground (PR curve, max-F, weighted F) return ``nan``
  for an empty ground truth; S- and E-measure keep their defined fallbacks.
* S-measure follows the reference MATLAB code: 1-based rounded centroid
  (round half up), sample standard deviation with a single sample giving 0, and
  an empty region contributing 0 (its weight is 0 anyway).
* E-measure normalizes the enhanced alignment sum by the pixel count, so any
  threshold whose binarization reproduces the ground truth scores exactly 1.
  Threshold 0 marks every pixel positive, so even a perfect binary map has a
  mean slightly below 1 when both classes are present.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

EPS = np.finfo(np.float64).eps
NUM_THRESHOLDS = 256
THRESHOLDS = np.arange(NUM_THRESHOLDS) / 255.0


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    gt = gt > 0.5 if gt.dtype != bool else gt
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def confusion_counts(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-threshold ``(TP, FP, FN, TN)`` counts, each an int array of length 256."""
    pred, gt = _prepare(pred, gt)
    # index of the highest threshold each pixel reaches
    level = np.searchsorted(THRESHOLDS, pred.ravel(), side="right") - 1
    fg = gt.ravel()
    hist_fg = np.bincount(level[fg & (level >= 0)], minlength=NUM_THRESHOLDS)
    hist_bg = np.bincount(level[~fg & (level >= 0)], minlength=NUM_THRESHOLDS)
    tp = np.cumsum(hist_fg[::-1])[::-1]
    fp = np.cumsum(hist_bg[::-1])[::-1]
    n_fg = int(fg.sum())
    n_bg = fg.size - n_fg
    return tp, fp, n_fg - tp, n_bg - fp


def precision_recall(tp, fp, fn) -> tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=np.float64)
    predicted = tp + fp
    actual = tp + fn
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1), 1.0)
        recall = np.where(actual > 0, tp / np.where(actual > 0, actual, 1), np.nan)
    return precision, recall


def f_curve(precision, recall, beta_sq: float = 0.3) -> np.ndarray:
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    denom = beta_sq * precision + recall
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (1 + beta_sq) * precision * recall / np.where(denom > 0, denom, 1)
    return np.where(denom > 0, f, np.where(np.isnan(recall), np.nan, 0.0))


def pr_curve(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at the 256 thresholds (``nan`` everywhere for empty gt)."""
    tp, fp, fn, _ = confusion_counts(pred, gt)
    precision, recall = precision_recall(tp, fp, fn)
    if (tp + fn)[0] == 0:
        return np.full(NUM_THRESHOLDS, np.nan), np.full(NUM_THRESHOLDS, np.nan)
    return precision, recall


def max_f(pred, gt, beta_sq: float = 0.3) -> float:
    precision, recall = pr_curve(pred, gt)
    if np.isnan(recall[0]):
        return float("nan")
    return float(np.max(f_curve(precision, recall, beta_sq)))


def _gauss_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2
    y, x = np.ogrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < np.finfo(k.dtype).eps * k.max()] = 0
    return k / k.sum()


def weighted_f(pred, gt, beta_sq: float = 1.0) -> float:
    """Weighted F-measure with distance-dependent error weighting.

    Background errors take the error of their nearest foreground pixel (ties
    resolve to the lowest column, then lowest row), are smoothed by a 7x7
    Gaussian (sigma 5, zero padding), and background pixels are further
    weighted by ``2 - exp(ln(0.5)/5 * distance)``.
    """
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return float("nan")
    dist, (ri, ci) = distance_transform_edt(~gt, return_indices=True)
    err = np.abs(pred - gt)
    err_t = err.copy()
    bg = ~gt
    err_t[bg] = err[ri[bg], ci[bg]]
    smoothed = convolve(err_t, _gauss_kernel(), mode="constant", cval=0.0)
    mixed = err.copy()
    take = gt & (smoothed < err)
    mixed[take] = smoothed[take]
    weight = np.ones_like(err)
    weight[bg] = 2 - np.exp(np.log(0.5) / 5 * dist[bg])
    ew = mixed * weight
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[bg].sum()
    recall = 1 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + beta_sq) * recall * precision / (EPS + recall + beta_sq * precision))


def _sample_std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _object_score(values: np.ndarray) -> float:
    mu = float(values.mean())
    return 2 * mu / (mu * mu + 1 + _sample_std(values) + EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = np.where(gt, pred, 0.0)
    bg = np.where(gt, 0.0, 1 - pred)
    u = gt.mean()
    return u * _object_score(fg[gt]) + (1 - u) * _object_score(bg[~gt])


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        return int(np.floor(cols / 2 + 0.5)), int(np.floor(rows / 2 + 0.5))
    x = np.sum(gt.sum(axis=0) * np.arange(1, cols + 1)) / total
    y = np.sum(gt.sum(axis=1) * np.arange(1, rows + 1)) / total
    return int(np.floor(x + 0.5)), int(np.floor(y + 0.5))


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    g = gt.astype(np.float64)
    x, y = pred.mean(), g.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (g - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    x, y = _centroid(gt)
    h, w = gt.shape
    area = h * w
    w1 = x * y / area
    w2 = (w - x) * y / area
    w3 = x * (h - y) / area
    w4 = 1 - w1 - w2 - w3
    parts = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    scores = [_ssim(pred[r, c], gt[r, c]) for r, c in parts]
    return w1 * scores[0] + w2 * scores[1] + w3 * scores[2] + w4 * scores[3]


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _prepare(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


def e_measure_curve(pred, gt) -> np.ndarray:
    """Enhanced-alignment score at each of the 256 thresholds."""
    tp, fp, fn, tn = (c.astype(np.float64) for c in confusion_counts(pred, gt))
    n = tp[0] + fp[0] + fn[0] + tn[0]
    n_fg = tp[0] + fn[0]
    positives = tp + fp
    if n_fg == 0:
        return (n - positives) / n
    if n_fg == n:
        return positives / n
    mu_g = n_fg / n
    mu_f = positives / n

    def enhanced(g: float, f: float) -> np.ndarray:
        a = g - mu_g
        b = f - mu_f
        align = 2 * a * b / (a * a + b * b + EPS)
        return (align + 1) ** 2 / 4

    total = tp * enhanced(1, 1) + fp * enhanced(0, 1) + fn * enhanced(1, 0) + tn * enhanced(0, 0)
    return total / n


def e_measure_mean(pred, gt) -> float:
    return float(np.mean(e_measure_curve(pred, gt)))


METRIC_NAMES = ("mae", "max_f", "weighted_f", "s_measure", "e_measure_mean")


def image_metrics(pred, gt) -> dict[str, float]:
    return {
        "mae": mae(pred, gt),
        "max_f": max_f(pred, gt),
        "weighted_f": weighted_f(pred, gt),
        "s_measure": s_measure(pred, gt),
        "e_measure_mean": e_measure_mean(pred, gt),
    }
