"""Joint training of all sub-networks of a slimmable teacher.

Per batch, the full-width network is trained with plain cross entropy and
its logits become a detached target; every narrower width is trained with
``alpha * CE + (1 - alpha) * KL(target, T)``. The per-width gradients are
summed and applied with a single SGD step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, eval_batches, train_batches
from .errors import ConfigError, DataError, NumericError
from .functional import cross_entropy, kl_temperature
from .metrics import MetricsRow
from .optim import SGD
from .slimmable import SlimmableNet
from .staging import LRSchedule, lr_at, make_plan
from .tensor import GradientSet, backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class DecomposeConfig:
    alpha: float = 0.5
    teacher_temperature: float = 1.0
    epochs: int = 20
    batch_size: int = 64
    schedule: LRSchedule = field(default_factory=lambda: LRSchedule("cosine", 1e-4, 0.1, cyclic=False))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", key="decompose.alpha")
        if not self.teacher_temperature > 0:
            raise ConfigError("teacher temperature must be > 0", key="decompose.temperature")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", key="train.epochs")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1", key="train.batch")


def width_loss(net: SlimmableNet, x, y, rho: float, target, cfg: DecomposeConfig):
    """Loss of one width: CE at full width, the CE/KL blend below it.

    Returns ``(loss, logits)``.
    """
    try:
        logits = net.forward(x, rho, "train").logits
        if rho == 1.0:
            loss = cross_entropy(logits, y)
        else:
            loss = cross_entropy(logits, y) * cfg.alpha + kl_temperature(
                logits, target, cfg.teacher_temperature
            ) * (1.0 - cfg.alpha)
    except NumericError as exc:
        raise NumericError(f"width {rho}: {exc}") from exc
    if not np.isfinite(loss.data):
        raise NumericError(f"width {rho}: non-finite loss")
    return loss, logits


def decompose_gradients(net: SlimmableNet, x, y, cfg: DecomposeConfig) -> Tuple[Dict[float, float], Dict[float, np.ndarray], GradientSet]:
    """Forward/backward every width in turn (full width first).

    Returns per-width loss values, per-width logits and the summed gradients
    over all parameters of the network.
    """
    if len(y) == 0:
        raise ConfigError("empty batch")
    if net.G < 2:
        raise ConfigError("joint training needs at least two widths", key="model.widths")
    params = net.parameters()
    total = GradientSet()
    losses, logits_by_width = {}, {}
    target = None
    for rho in sorted(net.width_list, reverse=True):
        loss, logits = width_loss(net, x, y, rho, target, cfg)
        if rho == 1.0:
            target = logits.data.copy()
        total.accumulate(backward(loss))
        losses[rho] = loss.item()
        logits_by_width[rho] = logits.data
    for p in params:
        if p.name not in total:
            total[p.name] = np.zeros_like(p.data)
    return losses, logits_by_width, total


def decompose_step(net: SlimmableNet, batch, cfg: DecomposeConfig, opt: SGD, lr: float):
    """One joint iteration: all widths forward/backward, then one SGD step."""
    x, y = batch
    losses, logits, grads = decompose_gradients(net, x, y, cfg)
    opt.step(grads, lr)
    return losses, logits


def evaluate(net: SlimmableNet, x: np.ndarray, y: np.ndarray, rho: float = 1.0, batch_size: int = 500) -> float:
    """Top-1 accuracy of the eval-mode width-``rho`` network (ties -> lowest index)."""
    if len(y) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    correct = 0
    with no_grad():
        for xb, yb in eval_batches(x, y, batch_size):
            pred = np.argmax(net.forward(xb, rho, "eval").logits.data, axis=1)
            correct += int((pred == yb).sum())
    return correct / len(y)


def decompose_train(
    net: SlimmableNet,
    dataset: Dataset,
    cfg: DecomposeConfig,
    checkpoint_path=None,
    on_epoch: Optional[Callable[[List[MetricsRow]], None]] = None,
    wall_clock: bool = True,
) -> List[MetricsRow]:
    """Train all widths jointly; one metrics row per (epoch, width)."""
    rows: List[MetricsRow] = []
    opt = SGD(net.parameters(), cfg.momentum, cfg.weight_decay)
    opt.velocity.update(net.velocity)
    plan = make_plan(max(cfg.epochs, 1), [1.0], "ascending")
    widths = list(net.width_list)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, plan, epoch)
        sums = {r: 0.0 for r in widths}
        hits = {r: 0 for r in widths}
        seen = batches = 0
        for xb, yb in train_batches(dataset, cfg.batch_size, cfg.seed, epoch):
            losses, logits = decompose_step(net, (xb, yb), cfg, opt, lr)
            for r in widths:
                sums[r] += losses[r]
                hits[r] += int((np.argmax(logits[r], axis=1) == yb).sum())
            seen += len(yb)
            batches += 1
        epoch_rows = []
        for i, r in enumerate(widths):
            acc = evaluate(net, dataset.x_test, dataset.y_test, r)
            epoch_rows.append(
                MetricsRow(
                    epoch, i, r, lr,
                    sums[r] / max(batches, 1),
                    hits[r] / max(seen, 1),
                    acc,
                    time.perf_counter() - t0 if wall_clock else 0.0,
                )
            )
        rows += epoch_rows
        log.info("decompose epoch %d lr=%.5f test_acc=%s", epoch, lr, [round(r.test_acc, 4) for r in epoch_rows])
        if on_epoch is not None:
            on_epoch(epoch_rows)
    net.velocity = dict(opt.velocity)
    net.meta.update(
        {
            "seed": cfg.seed,
            "epoch": cfg.epochs,
            "norm_mean": [float(v) for v in dataset.mean],
            "norm_std": [float(v) for v in dataset.std],
            "dataset": dataset.name,
        }
    )
    if checkpoint_path is not None:
        try:
            save_checkpoint(checkpoint_path, net)
        except OSError as exc:
            raise DataError(checkpoint_path, f"cannot write checkpoint: {exc}") from exc
    return rows
