"""Directory-level evaluation, metric reports and curve export.

Report JSON layout (``schema`` = ``mvseg.metric_report/1``)::

    {
      "schema": "mvseg.metric_report/1",
      "num_pairs": int,                     # pairs evaluated
      "per_image": [{"name": str, "empty_gt": bool, "mae": float,
                     "max_f": float|null, "weighted_f": float|null,
                     "s_measure": float, "e_measure_mean": float}, ...],
      "aggregate": {"mae": float, "max_f": float|null, ...},
      "curves": {"threshold": [256], "precision": [256], "recall": [256], "f": [256]},
      "empty_gt": [name, ...],              # excluded from F/S/E aggregates and curves
      "unmatched": {"pred_only": [...], "gt_only": [...]},
      "skipped": [{"name": str, "reason": str}, ...]
    }

Curves are pooled: TP/FP/FN are summed over all images before precision and
recall are formed.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from . import metrics

REPORT_SCHEMA = "mvseg.metric_report/1"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class DataError(RuntimeError):
    """Raised for missing, unreadable or inconsistent data."""


def list_images(directory: str | os.PathLike) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    found: dict[str, Path] = {}
    for p in sorted(d.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file():
            if p.stem in found:
                raise DataError(f"duplicate stem {p.stem!r} in {d}")
            found[p.stem] = p
    return found


def read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def binarize_mask(mask_u8: np.ndarray) -> np.ndarray:
    return mask_u8 >= 128


@dataclass
class MetricReport:
    per_image: list[dict[str, Any]]
    aggregate: dict[str, float]
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    empty_gt: list[str] = field(default_factory=list)
    unmatched: dict[str, list[str]] = field(default_factory=lambda: {"pred_only": [], "gt_only": []})
    skipped: list[dict[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return _nan_to_none(
            {
                "schema": REPORT_SCHEMA,
                "num_pairs": len(self.per_image),
                "per_image": self.per_image,
                "aggregate": self.aggregate,
                "curves": {
                    "threshold": metrics.THRESHOLDS.tolist(),
                    "precision": self.precision.tolist(),
                    "recall": self.recall.tolist(),
                    "f": self.f.tolist(),
                },
                "empty_gt": self.empty_gt,
                "unmatched": self.unmatched,
                "skipped": self.skipped,
            }
        )

    def write_json(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_curves_csv(self, path: str | os.PathLike) -> None:
        write_curves_csv(path, metrics.THRESHOLDS, self.precision, self.recall, self.f)


def _nan_to_none(obj: Any) -> Any:
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj


def write_curves_csv(path, thresholds, precision, recall, f) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f"])
        for row in zip(thresholds, precision, recall, f):
            writer.writerow(["" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)) for v in row])


def curves_from_report(report: dict[str, Any]) -> tuple[list, list, list, list]:
    if report.get("schema") != REPORT_SCHEMA:
        raise DataError(f"unsupported report schema {report.get('schema')!r}")
    c = report["curves"]
    nan = float("nan")
    fix = lambda xs: [nan if v is None else v for v in xs]  # noqa: E731
    return fix(c["threshold"]), fix(c["precision"]), fix(c["recall"]), fix(c["f"])


def aggregate(per_image: list[dict[str, Any]]) -> dict[str, float]:
    """Arithmetic means; F/S/E exclude empty-ground-truth images. Order independent."""
    out: dict[str, float] = {}
    for name in metrics.METRIC_NAMES:
        if name == "mae":
            values = [r[name] for r in per_image]
        else:
            values = [r[name] for r in per_image if not r["empty_gt"]]
        out[name] = math.fsum(values) / len(values) if values else float("nan")
    return out


def evaluate_arrays(pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> MetricReport:
    """Evaluate ``(name, pred in [0,1], gt bool)`` triples."""
    per_image = []
    empty = []
    totals = np.zeros((3, metrics.NUM_THRESHOLDS), dtype=np.int64)
    for name, pred, gt in pairs:
        gt = np.asarray(gt, dtype=bool)
        row: dict[str, Any] = {"name": name, "empty_gt": not gt.any()}
        row.update(metrics.image_metrics(pred, gt))
        per_image.append(row)
        if row["empty_gt"]:
            empty.append(name)
            continue
        tp, fp, fn, _ = metrics.confusion_counts(pred, gt)
        totals += np.stack([tp, fp, fn])
    if totals[0, 0] + totals[2, 0] > 0:
        precision, recall = metrics.precision_recall(*totals)
        f = metrics.f_curve(precision, recall)
    else:
        precision = recall = f = np.full(metrics.NUM_THRESHOLDS, np.nan)
    return MetricReport(per_image, aggregate(per_image), precision, recall, f, empty_gt=empty)


def evaluate_directory(
    pred_dir: str | os.PathLike,
    gt_dir: str | os.PathLike,
    *,
    resize_mismatched: bool = False,
) -> MetricReport:
    """Evaluate stem-matched prediction/ground-truth images.

    Size-mismatched pairs are skipped unless ``resize_mismatched`` is set, in
    which case the prediction is bilinearly resized to the ground-truth size.
    """
    preds = list_images(pred_dir)
    gts = list_images(gt_dir)
    common = sorted(preds.keys() & gts.keys())
    if not common:
        raise DataError(f"no stem-matched pairs between {pred_dir} and {gt_dir}")
    pairs = []
    skipped = []
    for stem in common:
        try:
            pred_u8 = read_gray(preds[stem])
            gt_u8 = read_gray(gts[stem])
        except OSError as exc:
            skipped.append({"name": stem, "reason": f"unreadable: {exc}"})
            continue
        if pred_u8.shape != gt_u8.shape:
            if not resize_mismatched:
                skipped.append({"name": stem, "reason": f"size mismatch {pred_u8.shape} vs {gt_u8.shape}"})
                continue
            pred_u8 = np.asarray(
                Image.fromarray(pred_u8).resize((gt_u8.shape[1], gt_u8.shape[0]), Image.BILINEAR), dtype=np.uint8
            )
        pairs.append((stem, pred_u8.astype(np.float64) / 255.0, binarize_mask(gt_u8)))
    if not pairs:
        raise DataError("every matched pair was skipped")
    report = evaluate_arrays(pairs)
    report.unmatched = {
        "pred_only": sorted(preds.keys() - gts.keys()),
        "gt_only": sorted(gts.keys() - preds.keys()),
    }
    report.skipped = skipped
    return report
