"""Adapter and parameter-group bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig
from .encoder import MultiViewAdapter, adapter_param_count
from .model import MultiViewSegmenter, count_parameters


@dataclass(frozen=True)
class AdapterAudit:
    dim: int
    reduction_factor: int
    introspected: int
    formula: int

    @property
    def ok(self) -> bool:
        return self.introspected == self.formula


def audit_adapter(dim: int, reduction_factor: int) -> AdapterAudit:
    """Count the parameters of a freshly built adapter and compare with the closed form."""
    adapter = MultiViewAdapter(dim, reduction_factor)
    n = sum(p.numel() for p in adapter.parameters())
    return AdapterAudit(dim, reduction_factor, n, adapter_param_count(dim, reduction_factor))


def audit_model(cfg: ModelConfig) -> dict:
    """Per-block inserted counts plus totals for a whole model."""
    model = MultiViewSegmenter(cfg)
    blocks = []
    for s, stage in enumerate(model.encoder.stages):
        for b, block in enumerate(stage):
            if block.adapter is None:
                continue
            n = sum(p.numel() for p in block.adapter.parameters())
            dim = cfg.stage_dims[s]
            blocks.append(
                {
                    "stage": s,
                    "block": b,
                    "dim": dim,
                    "introspected": n,
                    "formula": adapter_param_count(dim, cfg.reduction_factor),
                }
            )
    groups = model.parameter_groups()
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return {
        "blocks": blocks,
        "inserted_total": sum(b["introspected"] for b in blocks),
        "formula_total": sum(b["formula"] for b in blocks),
        "tuned": trainable,
        "total": sum(p.numel() for p in model.parameters()),
        "groups": {name: count_parameters(params) for name, params in groups.items()},
    }


def format_model_audit(report: dict) -> str:
    lines = [f"{'stage':>5} {'block':>5} {'D':>6} {'inserted':>10} {'formula':>10}"]
    for b in report["blocks"]:
        lines.append(f"{b['stage']:>5} {b['block']:>5} {b['dim']:>6} {b['introspected']:>10} {b['formula']:>10}")
    lines.append(f"inserted total {report['inserted_total']} (formula {report['formula_total']})")
    lines.append(f"tuned {report['tuned']} of {report['total']}")
    lines.append("groups " + " ".join(f"{k}={v}" for k, v in report["groups"].items()))
    return "\n".join(lines)
