"""Training loop and prediction export."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .config import LossConfig, ModelConfig, TrainConfig, config_to_dict, default_device, default_dtype
from .data import DatasetSpec, PairedDataset, augment, read_rgb, sample_seed
from .evaluation import DataError, list_images
from .losses import total_loss
from .model import MultiViewSegmenter
from .multiview import make_multiview

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    records: list[dict] = field(default_factory=list)
    model: MultiViewSegmenter | None = None

    @property
    def step_losses(self) -> list[float]:
        return [r["loss"] for r in self.records if r["kind"] == "step"]

    @property
    def epoch_records(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "epoch"]


def build_optimizer(model: MultiViewSegmenter, cfg: TrainConfig) -> torch.optim.AdamW:
    groups = model.parameter_groups()
    param_groups = [
        {"params": [p for _, p in groups["new"]], "lr": cfg.lr_new, "name": "new"},
        {"params": [p for _, p in groups["pretrained"]], "lr": cfg.lr_new / cfg.lr_pretrained_divisor, "name": "pretrained"},
    ]
    param_groups = [g for g in param_groups if g["params"]]
    return torch.optim.AdamW(param_groups, weight_decay=cfg.weight_decay)


def _batch(dataset: PairedDataset, indices: list[int], cfg: TrainConfig, epoch: int, dtype: torch.dtype):
    images, masks = [], []
    for i in indices:
        image, mask = dataset[i]
        rng = torch.Generator().manual_seed(sample_seed(cfg.seed, epoch, i))
        image, mask = augment(image, mask, cfg, rng)
        images.append(image)
        masks.append(mask)
    return torch.stack(images).to(dtype), torch.stack(masks).to(dtype)


def train(
    dataset: DatasetSpec,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig | None = None,
    *,
    dtype: torch.dtype | None = None,
) -> TrainResult:
    """Train from scratch and write the final checkpoint plus a JSON-lines log.

    Log records have ``kind`` in ``{"header", "step", "epoch"}``.
    """
    loss_cfg = loss_cfg or LossConfig()
    dtype = dtype or default_dtype()
    device = default_device()
    if tuple(dataset.working_resolution) != model_cfg.working_size:
        raise DataError(
            f"dataset working_resolution {tuple(dataset.working_resolution)} != model working size {model_cfg.working_size}"
        )
    data = PairedDataset(dataset)

    model = MultiViewSegmenter(model_cfg).to(device=device, dtype=dtype)
    model.train()
    optimizer = build_optimizer(model, train_cfg)

    out_dir = Path(train_cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    records: list[dict] = []

    header = {
        "kind": "header",
        "lambda_aux": loss_cfg.lambda_aux,
        "lr_new": train_cfg.lr_new,
        "lr_pretrained": train_cfg.lr_new / train_cfg.lr_pretrained_divisor,
        "epochs": train_cfg.epochs,
        "batch_size": train_cfg.batch_size,
        "weight_decay": train_cfg.weight_decay,
        "freeze_backbone": model_cfg.freeze_backbone,
        "num_images": len(data),
        "dtype": str(dtype).replace("torch.", ""),
        "model": config_to_dict(model_cfg),
    }
    order_rng = torch.Generator().manual_seed(train_cfg.seed)
    step = 0
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def emit(record: dict) -> None:
            records.append(record)
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

        emit(header)
        log.info(
            "lambda=%g lr_new=%g lr_pretrained=%g epochs=%d batch_size=%d",
            loss_cfg.lambda_aux, header["lr_new"], header["lr_pretrained"], train_cfg.epochs, train_cfg.batch_size,
        )
        done = False
        for epoch in range(train_cfg.epochs):
            perm = torch.randperm(len(data), generator=order_rng).tolist()
            loss_sum = 0.0
            abs_err = 0.0
            pixels = 0
            batches = 0
            for start in range(0, len(perm), train_cfg.batch_size):
                image, gt = _batch(data, perm[start : start + train_cfg.batch_size], train_cfg, epoch, dtype)
                image, gt = image.to(device), gt.to(device)
                out = model(make_multiview(image, model_cfg.view_size), image)
                loss = total_loss(
                    out.logits_p,
                    out.mask.logits_s,
                    gt,
                    loss_cfg,
                    logits=True,
                    m_s_global=out.mask.logits_s_global if model_cfg.supervise_global_view else None,
                )
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss {value} at step {step} (epoch {epoch})")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                emit({"kind": "step", "step": step, "epoch": epoch, "loss": value})
                log.debug("step %d loss %.6f", step, value)
                with torch.no_grad():
                    abs_err += float((out.m_p - gt).abs().sum())
                    pixels += gt.numel()
                loss_sum += value
                batches += 1
                step += 1
                if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                    done = True
                    break
            epoch_rec = {
                "kind": "epoch",
                "epoch": epoch,
                "steps": step,
                "mean_loss": loss_sum / batches,
                "train_mae": abs_err / pixels,
            }
            emit(epoch_rec)
            log.info("epoch %d mean_loss %.6f train_mae %.6f", epoch, epoch_rec["mean_loss"], epoch_rec["train_mae"])
            if train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0 and not done:
                save_checkpoint(model, out_dir / f"epoch_{epoch + 1:04d}.ckpt")
            if done:
                break
    final = save_checkpoint(model, out_dir / "final.ckpt")
    return TrainResult(checkpoint=final, log_path=log_path, records=records, model=model)


def quantize(prob: np.ndarray) -> np.ndarray:
    """``floor(p * 255 + 0.5)`` as uint8."""
    return np.clip(np.floor(np.asarray(prob, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


@torch.no_grad()
def predict_image(model: MultiViewSegmenter, image: torch.Tensor) -> np.ndarray:
    """``(3, H, W)`` image in ``[0, 1]`` -> ``(2h, 2w)`` float64 probability map."""
    param = next(model.parameters())
    out = model.forward_image(image[None].to(device=param.device, dtype=param.dtype))
    return out.m_p[0, 0].double().cpu().numpy()


def predict(
    checkpoint: str | os.PathLike,
    image_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    model_cfg: ModelConfig | None = None,
) -> list[Path]:
    """Write one 8-bit ``<stem>.png`` per readable input image.

    When ``model_cfg`` is given it must match the config stored in the checkpoint.
    """
    model = MultiViewSegmenter(model_cfg) if model_cfg is not None else None
    model = load_checkpoint(checkpoint, model).to(default_device())
    model.eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, path in list_images(image_dir).items():
        try:
            image = read_rgb(path)
        except OSError as exc:
            warnings.warn(f"skipping unreadable image {path}: {exc}", stacklevel=2)
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        target = out_dir / f"{stem}.png"
        Image.fromarray(quantize(predict_image(model, image))).save(target)
        written.append(target)
    return written
