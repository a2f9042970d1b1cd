"""Model, loss and training configuration plus the flat ``key = value`` file format.

A config file is plain text, one ``key = value`` per line, ``#`` starts a
comment. Tuples are comma separated, booleans are ``true``/``false`` and an
optional value may be ``none``. Keys from all three config groups can share one
file; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch


class ConfigError(ValueError):
    """Raised for inconsistent or malformed configuration."""


def _doc(text: str, **kw: Any) -> Any:
    return field(metadata={"doc": text}, **kw)


@dataclass(frozen=True)
class ModelConfig:
    view_size: tuple[int, int] = _doc("view resolution (h, w); must be divisible by 32", default=(512, 512))
    stage_depths: tuple[int, ...] = _doc("encoder blocks per stage (4 stages)", default=(2, 3, 16, 3))
    stage_dims: tuple[int, ...] = _doc("token dim D per stage", default=(112, 224, 448, 896))
    heads: tuple[int, ...] = _doc("self-attention heads per stage", default=(2, 4, 8, 16))
    reduction_factor: int = _doc("adapter bottleneck reduction r (D -> D/r)", default=16)
    neck_dim: int = _doc("common pyramid channel count C", default=256)
    adapter_enabled: bool = _doc("insert the multi-view adapter in every encoder block", default=True)
    freeze_backbone: bool = _doc("freeze encoder weights except adapters and neck", default=True)
    mcem_enabled: bool = _doc("apply the deep-feature cross-attention enhancement", default=True)
    hmim_enabled: bool = _doc("apply the hierarchical shallow-feature interaction", default=True)
    fusion_heads: int = _doc("heads of the fusion cross-attention", default=8)
    ffn_ratio: int = _doc("hidden expansion of every feed-forward block", default=4)
    twoway_depth: int = _doc("layers of the two-way decoder transformer", default=2)
    decoder_heads: int = _doc("heads of the two-way decoder transformer", default=8)
    num_output_tokens: int = _doc("learned output tokens T", default=1)
    mask_feature_dim: int = _doc("mask feature channels C_p", default=32)
    supervise_global_view: bool = _doc("also supervise the global-view decoder map", default=False)
    drm_enabled: bool = _doc("refine the mask with the detail refinement stage", default=True)
    drm_width: int | None = _doc("detail refinement width C' (none = C_p)", default=None)
    drm_aux_depth: int = _doc("3x3 conv layers on the unified local image", default=3)
    seed: int = _doc("parameter initialisation seed", default=0)

    def __post_init__(self) -> None:
        h, w = self.view_size
        if h % 32 or w % 32 or h <= 0 or w <= 0:
            raise ConfigError(f"view_size {self.view_size} must be positive multiples of 32")
        for name in ("stage_depths", "stage_dims", "heads"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} must have 4 entries, got {getattr(self, name)}")
        if any(d < 0 for d in self.stage_depths):
            raise ConfigError("stage_depths must be non-negative")
        if self.reduction_factor < 1:
            raise ConfigError("reduction_factor must be >= 1")
        for dim, nh in zip(self.stage_dims, self.heads):
            if nh < 1 or dim % nh:
                raise ConfigError(f"stage dim {dim} not divisible by heads {nh}")
            if dim % self.reduction_factor:
                raise ConfigError(f"stage dim {dim} not divisible by reduction_factor {self.reduction_factor}")
        if self.neck_dim % self.fusion_heads or self.neck_dim % self.decoder_heads:
            raise ConfigError("neck_dim must be divisible by fusion_heads and decoder_heads")
        if self.num_output_tokens < 1:
            raise ConfigError("num_output_tokens must be >= 1")
        if self.drm_aux_depth < 1:
            raise ConfigError("drm_aux_depth must be >= 1")

    @property
    def working_size(self) -> tuple[int, int]:
        h, w = self.view_size
        return 2 * h, 2 * w

    @property
    def refine_width(self) -> int:
        return self.drm_width or self.mask_feature_dim


@dataclass(frozen=True)
class LossConfig:
    lambda_aux: float = _doc("weight of the auxiliary decoder loss", default=0.3)
    iou_weight_kernel: int = _doc("box size of the IoU boundary weight", default=15)
    iou_weight_gain: float = _doc("gain of the IoU boundary weight", default=5.0)

    def __post_init__(self) -> None:
        if self.lambda_aux < 0:
            raise ConfigError("lambda_aux must be >= 0")
        if self.iou_weight_kernel < 1 or self.iou_weight_kernel % 2 == 0:
            raise ConfigError("iou_weight_kernel must be an odd integer >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = _doc("training epochs", default=80)
    batch_size: int = _doc("images per optimisation step", default=2)
    lr_new: float = _doc("learning rate of newly introduced parameters", default=2e-4)
    lr_pretrained_divisor: float = _doc("lr divisor for pretrained-designated parameters", default=10.0)
    weight_decay: float = _doc("decoupled weight decay", default=1e-4)
    max_steps: int | None = _doc("stop after this many steps (none = run all epochs)", default=None)
    seed: int = _doc("seed for shuffling and augmentation", default=0)
    hflip: bool = _doc("random horizontal flip", default=True)
    crop: bool = _doc("random crop then resize back", default=True)
    rotation: bool = _doc("random rotation with reflection padding", default=True)
    crop_scale: tuple[float, float] = _doc("crop area fraction range", default=(0.75, 1.0))
    rotation_degrees: float = _doc("max absolute rotation angle", default=15.0)
    checkpoint_dir: str = _doc("directory for checkpoints and the training log", default="checkpoints")
    checkpoint_every: int = _doc("save a checkpoint every N epochs (0 = final only)", default=0)

    def __post_init__(self) -> None:
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_new <= 0 or self.lr_pretrained_divisor <= 0 or self.weight_decay < 0:
            raise ConfigError("learning rates and divisor must be positive, weight_decay >= 0")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"crop_scale {self.crop_scale} must satisfy 0 < lo <= hi <= 1")


CONFIG_GROUPS = {"model": ModelConfig, "loss": LossConfig, "train": TrainConfig}


def _parse_value(raw: str, annotation: str) -> Any:
    raw = raw.strip()
    optional = "None" in annotation
    if optional and raw.lower() == "none":
        return None
    base = annotation.replace("| None", "").strip()
    if base.startswith("tuple"):
        inner = float if "float" in base else int
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(inner(p) for p in parts)
    if base == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if base == "int":
        return int(raw)
    if base == "float":
        return float(raw)
    return raw


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str) -> dict[str, dict[str, Any]]:
    """Parse flat config text into ``{"model": {...}, "loss": {...}, "train": {...}}`` kwargs."""
    # a bare key present in several groups (e.g. 'seed') sets all of them
    out: dict[str, dict[str, Any]] = {g: {} for g in CONFIG_GROUPS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        group_hint = None
        if "." in key:
            group_hint, key = key.split(".", 1)
            if group_hint not in CONFIG_GROUPS:
                raise ConfigError(f"line {lineno}: unknown config group {group_hint!r}")
        targets = [g for g, cls in CONFIG_GROUPS.items() if key in {f.name for f in dataclasses.fields(cls)}]
        if group_hint is not None:
            targets = [g for g in targets if g == group_hint]
        if not targets:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        for g in targets:
            f = next(f for f in dataclasses.fields(CONFIG_GROUPS[g]) if f.name == key)
            try:
                out[g][key] = _parse_value(raw, str(f.type))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return out


def load_config(path: str | os.PathLike) -> tuple[ModelConfig, LossConfig, TrainConfig]:
    groups = parse_config_text(Path(path).read_text(encoding="utf-8"))
    try:
        return (
            ModelConfig(**groups["model"]),
            LossConfig(**groups["loss"]),
            TrainConfig(**groups["train"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_text(*configs: Any) -> str:
    """Render configs in the flat format, each key preceded by its documentation."""
    lines: list[str] = []
    for cfg in configs:
        group = next(g for g, cls in CONFIG_GROUPS.items() if isinstance(cfg, cls))
        lines.append(f"# --- {group} ---")
        for f in dataclasses.fields(cfg):
            lines.append(f"# {f.metadata.get('doc', '')}")
            lines.append(f"{group}.{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: Any) -> dict[str, Any]:
    return {f.name: _jsonable(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def _jsonable(v: Any) -> Any:
    return list(v) if isinstance(v, tuple) else v


def model_config_from_dict(d: dict[str, Any]) -> ModelConfig:
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return ModelConfig(**kwargs)


def default_dtype() -> torch.dtype:
    """Numeric precision from ``MVSEG_DTYPE`` (``float32`` or ``float64``)."""
    name = os.environ.get("MVSEG_DTYPE", "float32")
    try:
        return {"float32": torch.float32, "float64": torch.float64}[name]
    except KeyError:
        raise ConfigError(f"MVSEG_DTYPE must be float32 or float64, got {name!r}") from None


def default_device() -> torch.device:
    """Device from ``MVSEG_DEVICE`` (default ``cpu``)."""
    return torch.device(os.environ.get("MVSEG_DEVICE", "cpu"))


def toy_config(**overrides: Any) -> ModelConfig:
    """A desk-scale configuration used by tests and the overfit smoke run."""
    base: dict[str, Any] = dict(
        view_size=(64, 64),
        stage_depths=(1, 1, 1, 1),
        stage_dims=(8, 16, 16, 32),
        heads=(1, 2, 2, 2),
        reduction_factor=2,
        neck_dim=16,
        fusion_heads=2,
        decoder_heads=2,
        twoway_depth=1,
        mask_feature_dim=8,
        drm_aux_depth=2,
    )
    base.update(overrides)
    return ModelConfig(**base)
