"""Student-side staged distillation and the factor-ablation grid."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint
from .data import Dataset, steps_per_epoch, train_batches
from .decompose import evaluate
from .errors import ConfigError
from .losses import DistillConfig, Regressor, required_features, student_loss
from .metrics import MetricsRow
from .optim import SGD
from .slimmable import ArchSpec, SlimmableNet, build_plain
from .staging import LRSchedule, lr_at, make_plan, stage_index
from .tensor import backward, no_grad

log = logging.getLogger(__name__)

BASELINE_RUNS = ("scratch", "vanilla-kd", "clr-only", "pwkd", "pwkd+clr")


@dataclass
class RunConfig:
    student: ArchSpec
    distill: DistillConfig = field(default_factory=DistillConfig)
    teacher_path: Optional[str] = None
    order: str = "ascending"
    widths: Optional[Sequence[float]] = None  # defaults to the teacher's width list
    schedule: LRSchedule = field(default_factory=LRSchedule)
    epochs: int = 40
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    reset_momentum: bool = False  # clear SGD buffers at stage boundaries
    per_iteration_lr: bool = False
    wall_clock: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", key="train.epochs")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1", key="train.batch")


@dataclass
class DistillResult:
    student: SlimmableNet
    rows: List[MetricsRow]
    step_losses: List[float]
    requested_widths: List[float]  # teacher width used at every step


def _check_compat(teacher: SlimmableNet, cfg: RunConfig, widths) -> None:
    missing = [w for w in widths if float(w) not in teacher.width_list]
    if missing:
        raise ConfigError(f"teacher checkpoint lacks widths {missing}", key="model.widths")
    for hint in required_features(cfg.distill):
        if hint not in teacher.spec.taps:
            raise ConfigError(f"teacher does not export tap point {hint!r}", key="distill.hint_points")
        if hint not in cfg.student.taps:
            raise ConfigError(f"student does not export tap point {hint!r}", key="distill.hint_points")
    t, s = teacher.spec, cfg.student
    if (t.in_channels, t.image_size, t.num_classes) != (s.in_channels, s.image_size, s.num_classes):
        raise ConfigError("teacher and student disagree on input shape or class count", key="model.family")


def _feature_shapes(net: SlimmableNet, rho: float, x) -> Dict[str, tuple]:
    with no_grad():
        frag = net.forward(x[:2], rho, "eval")
    return {k: v.shape for k, v in frag.features.items()}


def distill_train(
    cfg: RunConfig,
    dataset: Dataset,
    teacher: Optional[SlimmableNet] = None,
    on_epoch: Optional[Callable[[MetricsRow], None]] = None,
) -> DistillResult:
    """Walk the stage plan, distilling the width-``rho`` teacher fragment into the student."""
    if teacher is None:
        if cfg.teacher_path is None:
            raise ConfigError("no teacher checkpoint given", key="distill.teacher")
        teacher = load_checkpoint(cfg.teacher_path)
    widths = tuple(cfg.widths) if cfg.widths is not None else teacher.width_list
    plan = make_plan(cfg.epochs, widths, cfg.order)
    dcfg = cfg.distill
    use_teacher = dcfg.beta < 1.0
    if use_teacher:
        _check_compat(teacher, cfg, widths)

    student = build_plain(cfg.student, seed=cfg.seed)
    opt = SGD(student.parameters(), cfg.momentum, cfg.weight_decay)
    regressors: Dict[str, Regressor] = {}
    student_shapes = _feature_shapes(student, 1.0, dataset.x_train)
    steps = steps_per_epoch(dataset, cfg.batch_size)
    if steps == 0:
        raise ConfigError("batch size exceeds the training split", key="train.batch")

    rows: List[MetricsRow] = []
    step_losses: List[float] = []
    requested: List[float] = []
    current_stage = -1
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        idx = stage_index(plan, epoch)
        rho = plan.stages[idx].rho
        if idx != current_stage:
            if current_stage >= 0 and cfg.reset_momentum:
                opt.reset()
            if use_teacher and dcfg.method == "fitnet":
                teacher_shapes = _feature_shapes(teacher, rho, dataset.x_train)
                for hint in dcfg.hint_points:
                    t_ch, s_ch = teacher_shapes[hint][1], student_shapes[hint][1]
                    old = regressors.get(hint)
                    if old is None or old.out_channels != t_ch:
                        if old is not None:
                            opt.drop_params([old.weight.name])
                        rng = np.random.default_rng([cfg.seed, 2, idx])
                        regressors[hint] = Regressor.create(s_ch, t_ch, rng, name=f"regressor.{hint}")
                        opt.add_params([regressors[hint].weight])
            current_stage = idx

        lr = lr_at(cfg.schedule, plan, epoch)
        loss_sum, hits, seen = 0.0, 0, 0
        for i, (xb, yb) in enumerate(train_batches(dataset, cfg.batch_size, cfg.seed, epoch)):
            step_lr = lr_at(cfg.schedule, plan, epoch + i / steps) if cfg.per_iteration_lr else lr
            fragment = None
            if use_teacher:
                with no_grad():
                    fragment = teacher.forward(xb, rho, "eval")
                requested.append(rho)
            out = student.forward(xb, 1.0, "train")
            loss = student_loss(out, fragment, yb, dcfg, regressors)
            opt.step(backward(loss, opt.params), step_lr)
            value = loss.item()
            step_losses.append(value)
            loss_sum += value
            hits += int((np.argmax(out.logits.data, axis=1) == yb).sum())
            seen += len(yb)
        row = MetricsRow(
            epoch, idx, rho, lr,
            loss_sum / steps,
            hits / max(seen, 1),
            evaluate(student, dataset.x_test, dataset.y_test, 1.0),
            time.perf_counter() - t0 if cfg.wall_clock else 0.0,
        )
        rows.append(row)
        log.info("distill epoch %d stage %d rho=%.2f lr=%.5f loss=%.4f test_acc=%.4f",
                 epoch, idx, rho, lr, row.train_loss, row.test_acc)
        if on_epoch is not None:
            on_epoch(row)

    student.velocity = {k: v for k, v in opt.velocity.items() if not k.startswith("regressor.")}
    student.meta.update(
        {
            "seed": cfg.seed,
            "epoch": cfg.epochs,
            "order": plan.order,
            "method": dcfg.method,
            "norm_mean": [float(v) for v in dataset.mean],
            "norm_std": [float(v) for v in dataset.std],
            "dataset": dataset.name,
        }
    )
    return DistillResult(student, rows, step_losses, requested)


def baseline_configs(cfg: RunConfig, monotone: Optional[LRSchedule] = None) -> Dict[str, RunConfig]:
    """The five factor-ablation runs; they differ only in the factor under test."""
    if monotone is None:
        monotone = LRSchedule("cosine", cfg.schedule.lr_min, cfg.schedule.lr_max, cyclic=False)
    cyclic = replace(cfg.schedule, cyclic=True)
    no_teacher = replace(cfg.distill, beta=1.0)
    return {
        "scratch": replace(cfg, distill=no_teacher, order="fixed:1.0", schedule=monotone),
        "vanilla-kd": replace(cfg, order="fixed:1.0", schedule=monotone),
        "clr-only": replace(cfg, distill=no_teacher, order="fixed:1.0", schedule=cyclic),
        "pwkd": replace(cfg, order="ascending", schedule=monotone),
        "pwkd+clr": replace(cfg, order="ascending", schedule=cyclic),
    }


def run_baselines(
    cfg: RunConfig,
    dataset: Dataset,
    teacher: Optional[SlimmableNet] = None,
    monotone: Optional[LRSchedule] = None,
    runs: Sequence[str] = BASELINE_RUNS,
) -> Dict[str, DistillResult]:
    """Seeded runs sharing data order and student initialization."""
    if teacher is None:
        if cfg.teacher_path is None:
            raise ConfigError("no teacher checkpoint given", key="distill.teacher")
        teacher = load_checkpoint(cfg.teacher_path)
    configs = baseline_configs(cfg, monotone)
    out = {}
    for name in runs:
        log.info("baseline run %s", name)
        out[name] = distill_train(configs[name], dataset, teacher)
    return out


def combined_rows(results: Dict[str, DistillResult]):
    """Flatten ``run_baselines`` output into ``(labels, rows)`` for one CSV."""
    labels, rows = [], []
    for name, res in results.items():
        labels += [name] * len(res.rows)
        rows += res.rows
    return labels, rows
