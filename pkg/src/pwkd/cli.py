"""Command-line entry point: ``pwkd <command> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, describe_keys
from .data import Dataset, load_dataset, write_mnist5k
from .decompose import DecomposeConfig, decompose_train, evaluate
from .errors import ConfigError, PWKDError
from .losses import DistillConfig
from .metrics import METRICS_COLUMNS, svg_line_plot, write_metrics
from .runner import RunConfig, combined_rows, distill_train, run_baselines
from .slimmable import ArchSpec, build
from .staging import LRSchedule, make_plan, plan_csv, plan_rows

log = logging.getLogger("pwkd")

COMMANDS = {
    "decompose": "train the slimmable teacher (all widths jointly)",
    "distill": "staged distillation of a student from a teacher checkpoint",
    "baselines": "scratch / vanilla-kd / clr-only / pwkd / pwkd+clr factor grid",
    "eval": "test accuracy of a checkpoint at one width",
    "plan": "stage plan and LR schedule as CSV plus an SVG plot",
    "prepare-data": "write the bundled 5000-image MNIST sample as IDX files into dataset.dir",
}

EPILOG = "\n".join(
    [
        "metrics CSV columns, in order:",
        "  " + ",".join(METRICS_COLUMNS),
        "(baselines prepends a 'run' column)",
        "",
        "exit codes: 0 success, 1 runtime failure, 2 configuration error",
        "",
        "config keys (file lines 'key = value' or '--key value'):",
        *describe_keys(),
    ]
)


def _dataset(cfg: Config) -> Dataset:
    cfg.require("dataset.dir")
    return load_dataset(
        cfg["dataset.name"], cfg["dataset.dir"], cfg["dataset.subset"], cfg["seed"], cfg["dataset.augment"]
    )


def _arch(cfg: Config, ds: Dataset, prefix: str) -> ArchSpec:
    if prefix == "student":
        family = cfg["student.family"] or cfg["model.family"]
        n = cfg["student.n"] or cfg["model.n"]
        k = cfg["student.k"]
    else:
        family, n, k = cfg["model.family"], cfg["model.n"], cfg["model.k"]
    channels, size, _ = ds.image_shape
    return ArchSpec(family, n, k, in_channels=channels, image_size=size, num_classes=ds.num_classes)


def _schedule(cfg: Config, form: Optional[str] = None, cyclic: Optional[bool] = None) -> LRSchedule:
    return LRSchedule(
        form or cfg["lr.form"],
        cfg["lr.min"],
        cfg["lr.max"],
        cfg["lr.cyclic"] if cyclic is None else cyclic,
    )


def _out(cfg: Config) -> Path:
    out = Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(cfg: Config, ds: Dataset) -> RunConfig:
    teacher = cfg["distill.teacher"] or str(Path(cfg["out.dir"]) / "teacher.ckpt")
    return RunConfig(
        student=_arch(cfg, ds, "student"),
        distill=DistillConfig(
            cfg["distill.method"],
            cfg["distill.beta"],
            cfg["distill.temperature"],
            cfg["distill.hint_points"],
            cfg["distill.weight"],
            cfg["distill.add_kd"],
        ),
        teacher_path=teacher,
        order=cfg["stage.order"],
        widths=cfg["model.widths"],
        schedule=_schedule(cfg),
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch"],
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        seed=cfg["seed"],
        reset_momentum=cfg["train.reset_momentum"],
        per_iteration_lr=cfg["lr.per_iteration"],
        wall_clock=cfg["out.wall_clock"],
    )


def cmd_decompose(cfg: Config) -> int:
    ds = _dataset(cfg)
    net = build(_arch(cfg, ds, "model"), cfg["model.widths"], seed=cfg["seed"])
    dcfg = DecomposeConfig(
        alpha=cfg["decompose.alpha"],
        teacher_temperature=cfg["decompose.temperature"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch"],
        schedule=_schedule(cfg, cfg["decompose.lr_form"], cyclic=False),
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        seed=cfg["seed"],
    )
    out = _out(cfg)
    rows = decompose_train(net, ds, dcfg, out / "teacher.ckpt", wall_clock=cfg["out.wall_clock"])
    write_metrics(out / "decompose_metrics.csv", rows)
    print(f"teacher written to {out / 'teacher.ckpt'}")
    return 0


def cmd_distill(cfg: Config) -> int:
    ds = _dataset(cfg)
    res = distill_train(_run_config(cfg, ds), ds)
    out = _out(cfg)
    save_checkpoint(out / "student.ckpt", res.student)
    write_metrics(out / "metrics.csv", res.rows)
    print(f"final test accuracy {res.rows[-1].test_acc:.4f}; metrics in {out / 'metrics.csv'}")
    return 0


def cmd_baselines(cfg: Config) -> int:
    ds = _dataset(cfg)
    rc = _run_config(cfg, ds)
    monotone = _schedule(cfg, cfg["decompose.lr_form"], cyclic=False)
    results = run_baselines(rc, ds, monotone=monotone)
    labels, rows = combined_rows(results)
    out = _out(cfg)
    write_metrics(out / "baselines.csv", rows, labels)
    for name, res in results.items():
        print(f"{name:<12} {res.rows[-1].test_acc:.4f}")
    return 0


def cmd_eval(cfg: Config) -> int:
    ds = _dataset(cfg)
    path = cfg["eval.checkpoint"] or str(Path(cfg["out.dir"]) / "teacher.ckpt")
    net = load_checkpoint(path)
    rho = cfg["eval.width"]
    if rho not in net.width_list:
        raise ConfigError(f"width {rho} not in checkpoint widths {list(net.width_list)}", key="eval.width")
    print(f"{evaluate(net, ds.x_test, ds.y_test, rho):.6f}")
    return 0


def cmd_plan(cfg: Config) -> int:
    plan = make_plan(cfg["train.epochs"], cfg["model.widths"], cfg["stage.order"])
    schedule = _schedule(cfg)
    out = _out(cfg)
    (out / "plan.csv").write_text(plan_csv(plan, schedule), encoding="utf-8")
    rows = plan_rows(plan, schedule)
    series = [("lr", [r[0] for r in rows], [r[3] for r in rows])]
    svg = svg_line_plot(series, f"{schedule.form} schedule", "epoch", "lr")
    (out / "plan.svg").write_text(svg, encoding="utf-8")
    print(f"wrote {out / 'plan.csv'} and {out / 'plan.svg'}")
    return 0


def cmd_prepare_data(cfg: Config) -> int:
    cfg.require("dataset.dir")
    write_mnist5k(cfg["dataset.dir"], seed=cfg["seed"])
    return 0


HANDLERS = {
    "decompose": cmd_decompose,
    "distill": cmd_distill,
    "baselines": cmd_baselines,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "prepare-data": cmd_prepare_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwkd",
        allow_abbrev=False,
        description="Partial-to-whole knowledge distillation at desk scale.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=list(COMMANDS), help="; ".join(f"{k}: {v}" for k, v in COMMANDS.items()))
    parser.add_argument("--config", "-c", help="key = value config file")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = Config.load(args.config, rest)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"pwkd: configuration error [{exc.key}]: {exc}", file=sys.stderr)
        return 2
    except PWKDError as exc:
        print(f"pwkd: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ArithmeticError, ValueError) as exc:
        print(f"pwkd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
