"""SGD with momentum and coupled L2 weight decay."""

from __future__ import annotations

from typing import Dict, Iterable, Optional

import numpy as np

from .errors import ConfigError, MissingGradientError, ShapeError
from .tensor import GradientSet, Parameter


def sgd_update(
    params: Iterable[Parameter],
    grads: GradientSet,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: Optional[Dict[str, np.ndarray]] = None,
) -> Dict[str, np.ndarray]:
    """One in-place step ``v = mu*v + g + wd*w; w -= lr*v``.

    Weight decay only touches parameters flagged ``decay`` (conv / linear
    weights). Returns the velocity dict, creating it when ``velocity`` is None.
    """
    if not lr > 0:
        raise ConfigError(f"lr must be > 0, got {lr}", key="lr")
    if not 0 <= momentum < 1:
        raise ConfigError(f"momentum must lie in [0, 1), got {momentum}", key="train.momentum")
    if weight_decay < 0:
        raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}", key="train.weight_decay")
    if velocity is None:
        velocity = {}
    for p in params:
        if p.name not in grads:
            raise MissingGradientError(p.name)
        g = grads[p.name]
        if g.shape != p.shape:
            raise ShapeError("sgd_update", p.shape, g.shape, detail=p.name)
        step = g + weight_decay * p.data if (p.decay and weight_decay) else g
        v = velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + step
        velocity[p.name] = v.astype(p.dtype, copy=False)
        p.data -= (lr * v).astype(p.dtype, copy=False)
    return velocity


class SGD:
    """Stateful wrapper holding the momentum buffers between steps."""

    def __init__(self, params, momentum=0.9, weight_decay=5e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, grads: GradientSet, lr: float):
        sgd_update(self.params, grads, lr, self.momentum, self.weight_decay, self.velocity)
        self.steps += 1

    def add_params(self, params):
        self.params.extend(params)

    def drop_params(self, names):
        names = set(names)
        self.params = [p for p in self.params if p.name not in names]
        for n in names:
            self.velocity.pop(n, None)

    def reset(self):
        self.velocity.clear()
