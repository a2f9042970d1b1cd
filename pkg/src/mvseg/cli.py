"""Command-line entry point.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audit import audit_adapter, audit_model, format_model_audit
from .checkpoint import CheckpointError
from .config import (
    ConfigError,
    LossConfig,
    ModelConfig,
    TrainConfig,
    config_to_text,
    load_config,
    parse_config_text,
)
from .evaluation import DataError, curves_from_report, evaluate_directory, write_curves_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which is our data-error code
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _configs(args) -> tuple[ModelConfig, LossConfig, TrainConfig]:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    text += "\n" + "\n".join(args.set or [])
    groups = parse_config_text(text)
    try:
        return ModelConfig(**groups["model"]), LossConfig(**groups["loss"]), TrainConfig(**groups["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def cmd_train(args) -> int:
    from .data import DatasetSpec
    from .train import train

    model_cfg, loss_cfg, train_cfg = _configs(args)
    if args.out:
        from dataclasses import replace

        train_cfg = replace(train_cfg, checkpoint_dir=args.out)
    spec = DatasetSpec(args.images, args.masks, model_cfg.working_size)
    result = train(spec, model_cfg, train_cfg, loss_cfg)
    last = result.epoch_records[-1]
    print(f"checkpoint {result.checkpoint}")
    print(f"log {result.log_path}")
    print(f"final train_mae {last['train_mae']:.6f} after {last['steps']} steps")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train import predict

    model_cfg = _configs(args)[0] if (args.config or args.set) else None
    written = predict(args.checkpoint, args.images, args.out, model_cfg)
    print(f"wrote {len(written)} maps to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_directory(args.pred, args.gt, resize_mismatched=args.resize_mismatched)
    report.write_json(args.out)
    if args.curves:
        report.write_curves_csv(args.curves)
    for entry in report.skipped:
        print(f"skipped {entry['name']}: {entry['reason']}", file=sys.stderr)
    agg = report.aggregate
    print(" ".join(f"{k}={v:.4f}" for k, v in agg.items()) + f" n={len(report.per_image)}")
    return EXIT_OK


def cmd_export_curves(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {args.report}: {exc}") from exc
    write_curves_csv(args.out, *curves_from_report(report))
    print(f"wrote {args.out}")
    return EXIT_OK


def _setting(text: str) -> tuple[int, int]:
    try:
        d, r = text.split(":")
        return int(d), int(r)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D:r, got {text!r}") from None


def cmd_audit(args) -> int:
    ok = True
    out: dict = {"settings": []}
    for d, r in args.setting or []:
        if d % r:
            raise ConfigError(f"D={d} not divisible by r={r}")
        a = audit_adapter(d, r)
        ok &= a.ok
        out["settings"].append({"dim": d, "reduction_factor": r, "introspected": a.introspected, "formula": a.formula})
    if args.model or not args.setting:
        report = audit_model(_configs(args)[0])
        ok &= report["inserted_total"] == report["formula_total"]
        out["model"] = report
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
    else:
        for s in out["settings"]:
            status = "OK" if s["introspected"] == s["formula"] else "MISMATCH"
            print(f"D={s['dim']} r={s['reduction_factor']} inserted={s['introspected']} formula={s['formula']} {status}")
        if "model" in out:
            print(format_model_audit(out["model"]))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_print_config(args) -> int:
    print(config_to_text(*_configs(args)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvseg", description="Multi-view segmentation: train, predict, evaluate, audit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a paired image/mask directory")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", help="checkpoint directory (overrides train.checkpoint_dir)")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write 8-bit prediction maps for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score prediction maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--curves", help="optional PR/F curve CSV path")
    p.add_argument("--resize-mismatched", action="store_true", help="resize predictions to gt size instead of skipping")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-curves", help="write the curves of a report JSON as CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("audit-params", help="check adapter parameter counts against the closed form")
    p.add_argument("--setting", action="append", type=_setting, metavar="D:r", help="standalone adapter (repeatable)")
    p.add_argument("--model", action="store_true", help="also audit the configured model")
    p.add_argument("--json", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("print-config", help="print the documented configuration")
    _add_config_args(p)
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .train import NumericError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"mvseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mvseg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"mvseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"mvseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
