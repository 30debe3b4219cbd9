# cli.py
# Command-line entry point: train / eval / infer / gradcheck / synth / dynamics.
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from src.ccnn import scalar_trajectory
from src.checkpoint import CheckpointError, load_checkpoint
from src.config import CCNN_MODES, ConfigError, RunConfig, load_config, validate
from src.export import epoch_log_to_excel_bytes, metrics_to_excel_bytes
from src.gradcheck import MODULES, run_gradcheck
from src.io import DatasetError, load_dataset
from src.report_export import export_run_report_excel_bytes, export_run_report_pdf_bytes
from src.synthetic import write_synthetic_dataset
from src.tensor_core import ContractError
from src.training import TrainingError, evaluate, infer, load_model, train

logger = logging.getLogger("cli")

# failures reported as one line on stderr with exit status 2
USER_ERRORS = (ContractError, ConfigError, DatasetError, CheckpointError, TrainingError)


def _config_for_checkpoint(config_path, checkpoint_path) -> RunConfig:
    """Explicit --config, else config.conf beside the checkpoint, else defaults sized by its metadata."""
    if config_path:
        return load_config(config_path)
    beside = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "config.conf")
    if os.path.exists(beside):
        logger.info("using %s", beside)
        return load_config(beside)
    ckpt = load_checkpoint(checkpoint_path)
    return validate(replace(RunConfig(), n_classes=ckpt.meta_int("n_classes", RunConfig().n_classes)))


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as f:
        f.write(data)


# =========================
# Commands
# =========================
def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = load_dataset(cfg.data_root, "train", cfg.n_classes)
    result = train(cfg, dataset, out_dir=cfg.out_dir, resume=args.resume)
    _write_bytes(os.path.join(cfg.out_dir, "epoch_log.xlsx"), epoch_log_to_excel_bytes(result.log))
    _write_bytes(os.path.join(cfg.out_dir, "run_report.pdf"), export_run_report_pdf_bytes(cfg, result.log))
    logger.info("training finished: %s", ", ".join(f"{k}={v}" for k, v in result.checkpoints.items()))
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model = load_model(cfg, args.checkpoint)
    dataset = load_dataset(cfg.data_root, args.split, cfg.n_classes)
    report = evaluate(model, dataset, zero_thermal_night=args.zero_thermal_night)
    report.to_csv(args.out)
    if args.excel:
        _write_bytes(args.excel, metrics_to_excel_bytes(report))
    if args.report:
        _write_bytes(args.report, export_run_report_excel_bytes(cfg, report=report))
    print(f"mAcc={report.m_acc:.4f} mIoU={report.m_iou:.4f} aAcc={report.a_acc:.4f}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config_for_checkpoint(args.config, args.checkpoint)
    model = load_model(cfg, args.checkpoint)
    infer(model, args.rgb, args.thermal, args.out, t_steps=args.t_steps)
    return 0


def cmd_gradcheck(args) -> int:
    modules = MODULES if args.module == "all" else (args.module,)
    table = run_gradcheck(modules, seed=args.seed)
    print(table.to_string(index=False, formatters={"max_rel_error": "{:.3e}".format, "seconds": "{:.2f}".format}))
    return 0 if bool(table["pass"].all()) else 1


def cmd_synth(args) -> int:
    write_synthetic_dataset(
        args.out,
        args.count,
        args.seed,
        h=args.height,
        w=args.width,
        n_classes=args.n_classes,
        night_prob=args.night_prob,
    )
    return 0


def cmd_dynamics(args) -> int:
    cfg = load_config(args.config).ccnn if args.config else RunConfig().ccnn
    df = scalar_trajectory(args.t_steps, drive=args.drive, m=args.m, w=args.w, cfg=cfg, mode=args.mode)
    df.to_csv(args.out, index=False, float_format="%.6f", lineterminator="\n")
    return 0


# =========================
# Parser
# =========================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bimii", description="RGB-T semantic segmentation on a numpy engine.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--excel", default=None, help="also write a formatted metrics workbook")
    p.add_argument("--report", default=None, help="also write a run report workbook")
    p.add_argument("--zero-thermal-night", action="store_true", help="blank thermal input on night samples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="segment one RGB/thermal pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--thermal", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--t-steps", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward()")
    p.add_argument("--module", default="all", choices=[*MODULES, "all"])
    p.add_argument("--precision", type=int, default=64, choices=[64])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic RGB-T dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--night-prob", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dynamics", help="dump a scalar CCNN trajectory")
    p.add_argument("--t-steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="take ccnn.* from this file")
    p.add_argument("--drive", type=float, default=1.0)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--w", type=float, default=0.0)
    p.add_argument("--mode", default="full", choices=list(CCNN_MODES))
    p.set_defaults(func=cmd_dynamics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
