"""Stage plans and cyclical learning-rate schedules.

A plan partitions ``[0, total_epochs)`` into equal spans (remainder epochs go
to the earliest stages) and binds each span to one teacher width. A cyclic
schedule runs one full cycle per stage and restarts at every boundary; a
non-cyclic schedule runs a single cycle over the whole run, which for the
decaying forms is an ordinary monotone schedule.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import ConfigError
from .slimmable import validate_widths

FORMS = ("triangular", "multi-step", "cosine", "linear")
FORM_ALIASES = {"rectangle": "triangular", "rectangular": "triangular", "multistep": "multi-step", "step": "multi-step"}


@dataclass(frozen=True)
class Stage:
    rho: float
    start: int  # inclusive
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class StagePlan:
    stages: Tuple[Stage, ...]
    order: str

    @property
    def total_epochs(self) -> int:
        return self.stages[-1].end

    @property
    def widths(self) -> List[float]:
        return [s.rho for s in self.stages]

    def __len__(self):
        return len(self.stages)


def parse_order(order) -> Tuple[str, float]:
    """Accepts ``ascending``, ``descending``, ``fixed:0.5`` or ``("fixed", 0.5)``."""
    if isinstance(order, tuple):
        return order[0], float(order[1])
    text = str(order).strip().lower()
    if text in ("ascending", "descending"):
        return text, math.nan
    if text.startswith("fixed"):
        _, _, value = text.partition(":")
        if not value:
            value = text[len("fixed"):].strip("() ")
        try:
            return "fixed", float(value)
        except ValueError:
            pass
    raise ConfigError(f"cannot parse stage order {order!r}", key="stage.order")


def make_plan(total_epochs: int, width_list: Sequence[float], order="ascending") -> StagePlan:
    """Equal split of the epoch budget over the widths.

    ``fixed:rho`` keeps the same number of stages (one per width) but binds
    them all to ``rho``, so a cyclic schedule still restarts ``G`` times.
    """
    widths = validate_widths(width_list)
    kind, fixed = parse_order(order)
    g = len(widths)
    if total_epochs < g:
        raise ConfigError(f"total_epochs={total_epochs} is smaller than the number of stages {g}", key="train.epochs")
    if kind == "fixed" and fixed not in widths:
        raise ConfigError(f"fixed width {fixed} not in width list {list(widths)}", key="stage.order")
    base, extra = divmod(total_epochs, g)
    rhos = {"ascending": widths, "descending": widths[::-1], "fixed": (fixed,) * g}[kind]
    stages, start = [], 0
    for i, rho in enumerate(rhos):
        length = base + (1 if i < extra else 0)
        stages.append(Stage(rho, start, start + length))
        start += length
    label = f"fixed:{fixed}" if kind == "fixed" else kind
    return StagePlan(tuple(stages), label)


def stage_index(plan: StagePlan, epoch: float) -> int:
    if not 0 <= epoch < plan.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {plan.total_epochs})", key="epoch")
    for i, s in enumerate(plan.stages):
        if epoch < s.end:
            return i
    raise AssertionError("unreachable")  # pragma: no cover


def stage_for_epoch(plan: StagePlan, epoch: float) -> Tuple[float, float]:
    """``(rho, epoch offset within its stage)``."""
    s = plan.stages[stage_index(plan, epoch)]
    return s.rho, epoch - s.start


@dataclass(frozen=True)
class LRSchedule:
    form: str = "triangular"
    lr_min: float = 1e-4
    lr_max: float = 0.1
    cyclic: bool = True
    milestones: Tuple[float, ...] = (0.5, 0.75)  # multi-step, as cycle fractions
    decay: float = 0.1

    def __post_init__(self):
        form = FORM_ALIASES.get(self.form, self.form)
        if form not in FORMS:
            raise ConfigError(f"unknown lr form {self.form!r}; choose from {FORMS + tuple(FORM_ALIASES)}", key="lr.form")
        object.__setattr__(self, "form", form)
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigError(f"need 0 < lr.min < lr.max, got {self.lr_min}, {self.lr_max}", key="lr.min")
        if not 0 < self.decay <= 1:
            raise ConfigError("multi-step decay must lie in (0, 1]", key="lr.decay")


def cycle_value(schedule: LRSchedule, t: float, length: float) -> float:
    """Learning rate at position ``t`` of a cycle of ``length`` epochs."""
    lo, hi = schedule.lr_min, schedule.lr_max
    if schedule.form == "triangular":
        return lo + (hi - lo) * (1 - abs(2 * t / length - 1))
    if schedule.form == "cosine":
        return lo + (hi - lo) * (1 + math.cos(math.pi * t / length)) / 2
    if schedule.form == "linear":
        return hi - (hi - lo) * t / length
    passed = sum(1 for m in schedule.milestones if t >= m * length)
    return max(lo, hi * schedule.decay ** passed)


def lr_at(schedule: LRSchedule, plan: StagePlan, epoch: float) -> float:
    idx = stage_index(plan, epoch)
    if schedule.cyclic:
        s = plan.stages[idx]
        return cycle_value(schedule, epoch - s.start, s.length)
    return cycle_value(schedule, epoch, plan.total_epochs)


def plan_rows(plan: StagePlan, schedule: LRSchedule) -> List[tuple]:
    """``(epoch, stage_index, rho, lr)`` for every integer epoch."""
    return [(e, stage_index(plan, e), plan.stages[stage_index(plan, e)].rho, lr_at(schedule, plan, e))
            for e in range(plan.total_epochs)]


def plan_csv(plan: StagePlan, schedule: LRSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "stage_index", "rho", "lr"])
    for e, i, rho, lr in plan_rows(plan, schedule):
        w.writerow([e, i, repr(rho), repr(lr)])
    return buf.getvalue()
