"""scikit-learn style wrappers around teacher decomposition and student distillation."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import channel_stats, check_images, check_xy, normalize
from .data import Dataset
from .decompose import DecomposeConfig, decompose_train
from .errors import ConfigError
from .functional import softmax_t
from .losses import DistillConfig
from .runner import RunConfig, distill_train
from .slimmable import WIDTHS_G4, ArchSpec, SlimmableNet, build
from .staging import LRSchedule
from .tensor import no_grad


def _encode(y, classes=None):
    if classes is None:
        classes, codes = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise ConfigError("need at least two classes in y", key="y")
        return classes, codes.astype(np.int64)
    codes = np.searchsorted(classes, y)
    codes = np.clip(codes, 0, len(classes) - 1)
    if not np.array_equal(classes[codes], y):
        raise ConfigError("y contains labels the teacher was not trained on", key="y")
    return classes, codes.astype(np.int64)


def _proba(net: SlimmableNet, X: np.ndarray, rho: float, batch_size: int = 500) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(X), batch_size):
            logits = net.forward(X[start:start + batch_size], rho, "eval").logits
            out.append(softmax_t(logits, 1.0).data)
    return np.concatenate(out).astype(np.float64)


class _NetClassifier(ClassifierMixin, BaseEstimator):
    width = 1.0

    def _prepare(self, X):
        check_is_fitted(self, "net_")
        spec = self.net_.spec
        X = check_images(X, spec.in_channels, spec.image_size)
        return normalize(X, self.mean_, self.std_)

    def predict_proba(self, X, width: Optional[float] = None):
        X = self._prepare(X)
        return _proba(self.net_, X, self.width if width is None else width)

    def predict(self, X, width: Optional[float] = None):
        proba = self.predict_proba(X, width)
        return self.classes_[np.argmax(proba, axis=1)]


class SlimmableTeacherClassifier(_NetClassifier):
    """Slimmable convnet trained jointly at every width.

    ``width`` picks the sub-network used by ``predict``; any width in
    ``widths`` can also be passed per call.
    """

    def __init__(
        self,
        family: str = "plain-convnet",
        n: int = 1,
        k: int = 2,
        widths: Sequence[float] = WIDTHS_G4,
        alpha: float = 0.5,
        temperature: float = 1.0,
        epochs: int = 20,
        batch_size: int = 64,
        lr_form: str = "cosine",
        lr_min: float = 1e-4,
        lr_max: float = 0.1,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        seed: int = 0,
        width: float = 1.0,
    ):
        self.family = family
        self.n = n
        self.k = k
        self.widths = widths
        self.alpha = alpha
        self.temperature = temperature
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_form = lr_form
        self.lr_min = lr_min
        self.lr_max = lr_max
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed
        self.width = width

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_xy(X, y)
        self.classes_, codes = _encode(y)
        self.mean_, self.std_ = channel_stats(X)
        Xn = normalize(X, self.mean_, self.std_)
        if X_val is None:
            Xv, yv = Xn, codes
        else:
            Xv, yv_raw = check_xy(X_val, y_val)
            Xv = normalize(Xv, self.mean_, self.std_)
            yv = _encode(yv_raw, self.classes_)[1]
        spec = ArchSpec(self.family, self.n, self.k, X.shape[1], X.shape[2], len(self.classes_))
        net = build(spec, self.widths, seed=self.seed)
        if self.width not in net.width_list:
            raise ConfigError(f"width {self.width} not in {list(net.width_list)}", key="width")
        cfg = DecomposeConfig(
            self.alpha, self.temperature, self.epochs, self.batch_size,
            LRSchedule(self.lr_form, self.lr_min, self.lr_max, cyclic=False),
            self.momentum, self.weight_decay, self.seed,
        )
        ds = Dataset("array", Xn, codes, Xv, yv, self.mean_, self.std_)
        self.history_ = decompose_train(net, ds, cfg, wall_clock=False)
        self.net_ = net
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self


class PWKDStudentClassifier(_NetClassifier):
    """Plain student distilled stage by stage from a fitted teacher.

    ``teacher`` is a fitted ``SlimmableTeacherClassifier``. Its class order
    and input normalization are reused.
    """

    def __init__(
        self,
        teacher: Optional[SlimmableTeacherClassifier] = None,
        family: str = "plain-convnet",
        n: int = 1,
        k: int = 1,
        method: str = "kd",
        beta: float = 0.1,
        temperature: float = 4.0,
        order: str = "ascending",
        lr_form: str = "triangular",
        lr_min: float = 1e-4,
        lr_max: float = 0.1,
        cyclic: bool = True,
        epochs: int = 40,
        batch_size: int = 64,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
        seed: int = 0,
    ):
        self.teacher = teacher
        self.family = family
        self.n = n
        self.k = k
        self.method = method
        self.beta = beta
        self.temperature = temperature
        self.order = order
        self.lr_form = lr_form
        self.lr_min = lr_min
        self.lr_max = lr_max
        self.cyclic = cyclic
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        if self.teacher is None:
            raise ConfigError("a fitted teacher is required", key="teacher")
        check_is_fitted(self.teacher, "net_")
        t = self.teacher
        X, y = check_xy(X, y)
        X = check_images(X, t.net_.spec.in_channels, t.net_.spec.image_size)
        self.classes_ = t.classes_
        codes = _encode(y, self.classes_)[1]
        self.mean_, self.std_ = t.mean_, t.std_
        Xn = normalize(X, self.mean_, self.std_)
        if X_val is None:
            Xv, yv = Xn, codes
        else:
            Xv, yv_raw = check_xy(X_val, y_val)
            Xv = normalize(Xv, self.mean_, self.std_)
            yv = _encode(yv_raw, self.classes_)[1]
        tspec = t.net_.spec
        spec = ArchSpec(self.family, self.n, self.k, tspec.in_channels, tspec.image_size, tspec.num_classes)
        cfg = RunConfig(
            student=spec,
            distill=DistillConfig(self.method, self.beta, self.temperature),
            order=self.order,
            schedule=LRSchedule(self.lr_form, self.lr_min, self.lr_max, cyclic=self.cyclic),
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
            wall_clock=False,
        )
        ds = Dataset("array", Xn, codes, Xv, yv, self.mean_, self.std_)
        result = distill_train(cfg, ds, t.net_)
        self.net_ = result.student
        self.history_ = result.rows
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self
