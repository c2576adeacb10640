"""Distillation terms (KD, FitNet, AT, SP) and the student objective.

The student objective is ``beta * CE + (1 - beta) * term`` where ``term`` is
one of the methods below evaluated against a frozen teacher fragment.
Teacher tensors are always read as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .functional import avg_pool2d, conv2d, cross_entropy, kl_temperature, l2_normalize_rows, mse
from .slimmable import KnowledgeFragment
from .tensor import Parameter, Tensor, matmul, no_grad, square

METHODS = ("kd", "fitnet", "at", "sp")
FEATURE_METHODS = ("fitnet", "at", "sp")
AT_EPS = 1e-6


@dataclass
class DistillConfig:
    method: str = "kd"
    beta: float = 0.1
    temperature: float = 4.0
    hint_points: Tuple[str, ...] = ("stage3",)
    weight: float = 1.0  # scales the method term
    add_kd: bool = False  # feature methods: also add the logit KD term

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown distillation method {self.method!r}; choose from {METHODS}", key="distill.method")
        if not 0 <= self.beta <= 1:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}", key="distill.beta")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}", key="distill.temperature")
        if self.weight < 0:
            raise ConfigError("method weight must be >= 0", key="distill.weight")
        self.hint_points = tuple(self.hint_points)
        if self.method in FEATURE_METHODS and not self.hint_points:
            raise ConfigError("feature methods need at least one hint point", key="distill.hint_points")


class Regressor:
    """1x1 convolution lifting student hint channels to the teacher's."""

    def __init__(self, weight: Parameter):
        self.weight = weight

    @classmethod
    def create(cls, student_channels: int, teacher_channels: int, rng, name="regressor", dtype=np.float32):
        w = rng.standard_normal((teacher_channels, student_channels, 1, 1)) * math.sqrt(2.0 / student_channels)
        return cls(Parameter(w.astype(dtype), f"{name}.w", decay=True))

    @classmethod
    def identity(cls, channels: int, name="regressor", dtype=np.float32):
        return cls(Parameter(np.eye(channels, dtype=dtype)[:, :, None, None], f"{name}.w", decay=True))

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, feat: Tensor) -> Tensor:
        return conv2d(feat, self.weight)


def _const(t) -> Tensor:
    return Tensor(t.data if isinstance(t, Tensor) else np.asarray(t))


def match_spatial(s: Tensor, t: Tensor, op: str) -> Tuple[Tensor, Tensor]:
    """Average-pool whichever map is spatially larger down to the other's size."""
    if s.ndim != 4 or t.ndim != 4 or s.shape[0] != t.shape[0]:
        raise ShapeError(op, s.shape, t.shape, detail="expected NCHW maps with equal batch")
    hs, ht = s.shape[2], t.shape[2]
    if s.shape[2:] == t.shape[2:]:
        return s, t
    big, small = max(hs, ht), min(hs, ht)
    if big % small or s.shape[2] != s.shape[3] or t.shape[2] != t.shape[3]:
        raise ShapeError(op, s.shape, t.shape, detail="spatial sizes cannot be matched by pooling")
    if hs > ht:
        return avg_pool2d(s, hs // ht), t
    with no_grad():
        return s, avg_pool2d(t, ht // hs)


def kd_term(student_logits: Tensor, teacher_logits, T: float) -> Tensor:
    return kl_temperature(student_logits, _const(teacher_logits), T)


def fitnet_term(student_feat: Tensor, teacher_feat, regressor: Regressor) -> Tensor:
    t = _const(teacher_feat)
    if student_feat.ndim != 4 or student_feat.shape[1] != regressor.in_channels or t.shape[1] != regressor.out_channels:
        raise ShapeError("fitnet_term", student_feat.shape, t.shape, detail="regressor channel mismatch")
    s, t = match_spatial(regressor(student_feat), t, "fitnet_term")
    return mse(s, t)


def attention_map(feat: Tensor) -> Tensor:
    """Channel-summed squared activations, flattened and L2-normalized per sample."""
    n = feat.shape[0]
    return l2_normalize_rows(square(feat).sum(axis=1).reshape(n, -1), AT_EPS)


def at_term(student_feat: Tensor, teacher_feat) -> Tensor:
    s, t = match_spatial(student_feat, _const(teacher_feat), "at_term")
    with no_grad():
        target = attention_map(t)
    return mse(attention_map(s), target)


def similarity_matrix(feat: Tensor) -> Tensor:
    flat = feat.reshape(feat.shape[0], -1)
    return l2_normalize_rows(matmul(flat, flat.T))


def sp_term(student_feat: Tensor, teacher_feat) -> Tensor:
    t = _const(teacher_feat)
    if student_feat.shape[0] != t.shape[0]:
        raise ShapeError("sp_term", student_feat.shape, t.shape, detail="batch sizes differ")
    with no_grad():
        target = similarity_matrix(t)
    # mse over the N x N matrix is exactly ||G_s - G_t||_F^2 / N^2
    return mse(similarity_matrix(student_feat), target)


def method_term(
    student: KnowledgeFragment,
    fragment: KnowledgeFragment,
    cfg: DistillConfig,
    regressors: Optional[Dict[str, Regressor]] = None,
) -> Tensor:
    if cfg.method == "kd":
        return kd_term(student.logits, fragment.logits, cfg.temperature)
    total = None
    for hint in cfg.hint_points:
        if hint not in student.features or hint not in fragment.features:
            raise ConfigError(f"hint point {hint!r} missing from student or teacher features", key="distill.hint_points")
        s, t = student.features[hint], fragment.features[hint]
        if cfg.method == "fitnet":
            if not regressors or hint not in regressors:
                raise ConfigError(f"fitnet needs a regressor for hint point {hint!r}", key="distill.hint_points")
            term = fitnet_term(s, t, regressors[hint])
        elif cfg.method == "at":
            term = at_term(s, t)
        else:
            term = sp_term(s, t)
        total = term if total is None else total + term
    if cfg.add_kd:
        total = total + kd_term(student.logits, fragment.logits, cfg.temperature)
    return total


def student_loss(
    student: KnowledgeFragment,
    fragment: Optional[KnowledgeFragment],
    labels,
    cfg: DistillConfig,
    regressors: Optional[Dict[str, Regressor]] = None,
) -> Tensor:
    """``beta * CE(student, labels) + (1 - beta) * weight * method_term``."""
    ce = cross_entropy(student.logits, labels)
    if cfg.beta == 1.0 or fragment is None:
        if fragment is None and cfg.beta != 1.0:
            raise ConfigError("a teacher fragment is required when beta < 1", key="distill.beta")
        return ce
    term = method_term(student, fragment, cfg, regressors)
    return ce * cfg.beta + term * ((1.0 - cfg.beta) * cfg.weight)


def required_features(cfg: DistillConfig) -> Sequence[str]:
    return cfg.hint_points if cfg.method in FEATURE_METHODS else ()
