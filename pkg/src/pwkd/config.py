"""Line-based ``key = value`` configuration with typed dotted keys."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(p) for p in s.replace(" ", "").split(",") if p)


def _names(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _optional_int(s: str) -> Optional[int]:
    v = int(s)
    return v if v > 0 else None


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: Dict[str, Key] = {
    "dataset.dir": Key(str, None, "directory holding IDX / CIFAR binary files"),
    "dataset.name": Key(str, "mnist", "mnist | cifar10"),
    "dataset.subset": Key(_optional_int, None, "seeded training subset size (0 = all)"),
    "dataset.augment": Key(_bool, False, "flip + pad-crop augmentation"),
    "model.family": Key(str, "plain-convnet", "plain-convnet | cifar-resnet"),
    "model.n": Key(int, 1, "blocks per stage"),
    "model.k": Key(int, 2, "base width multiplier"),
    "model.widths": Key(_floats, (0.25, 0.5, 0.75, 1.0), "teacher width list"),
    "student.family": Key(str, None, "defaults to model.family"),
    "student.n": Key(int, None, "defaults to model.n"),
    "student.k": Key(int, 1, "student width multiplier"),
    "decompose.alpha": Key(float, 0.5, "CE weight for sub-width losses"),
    "decompose.temperature": Key(float, 1.0, "KL temperature against the full-width logits"),
    "decompose.lr_form": Key(str, "cosine", "single-cycle teacher schedule form"),
    "distill.teacher": Key(str, None, "teacher checkpoint (default out.dir/teacher.ckpt)"),
    "distill.method": Key(str, "kd", "kd | fitnet | at | sp"),
    "distill.beta": Key(float, 0.1, "CE weight; 1 disables the teacher"),
    "distill.temperature": Key(float, 4.0, "KD temperature"),
    "distill.hint_points": Key(_names, ("stage3",), "feature taps for fitnet/at/sp"),
    "distill.weight": Key(float, 1.0, "extra scale on the method term"),
    "distill.add_kd": Key(_bool, False, "add the logit term to feature methods"),
    "stage.order": Key(str, "ascending", "ascending | descending | fixed:<rho>"),
    "lr.form": Key(str, "triangular", "triangular | cosine | linear | multi-step"),
    "lr.min": Key(float, 1e-4, "lower bound"),
    "lr.max": Key(float, 0.1, "upper bound"),
    "lr.cyclic": Key(_bool, True, "one cycle per stage instead of one per run"),
    "lr.per_iteration": Key(_bool, False, "evaluate the schedule at fractional epochs"),
    "train.epochs": Key(int, 40, "total epochs"),
    "train.batch": Key(int, 64, "batch size"),
    "train.momentum": Key(float, 0.9, "SGD momentum"),
    "train.weight_decay": Key(float, 5e-4, "L2 on conv / linear weights"),
    "train.reset_momentum": Key(_bool, False, "clear momentum at stage boundaries"),
    "seed": Key(int, 0, "single source of all randomness"),
    "out.dir": Key(str, "runs", "output directory"),
    "out.wall_clock": Key(_bool, True, "record wall_seconds (false writes 0.0)"),
    "eval.checkpoint": Key(str, None, "checkpoint to evaluate (default out.dir/teacher.ckpt)"),
    "eval.width": Key(float, 1.0, "width to evaluate"),
}


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """Raw ``key -> value`` strings; duplicates and unknown keys are errors."""
    out: Dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}", key=key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}", key=key)
        out[key] = value
    return out


def read_config(path) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}", key="--config") from exc
    return parse_lines(text.splitlines(), str(path))


def parse_overrides(argv: Sequence[str]) -> Dict[str, str]:
    """``--key value`` / ``--key=value`` pairs; repeats are errors too."""
    out: Dict[str, str] = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}", key=tok)
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(argv):
                raise ConfigError(f"missing value for {key!r}", key=key)
            value = argv[i + 1]
            i += 2
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key=key)
        out[key] = value
    return out


class Config:
    """Typed view over file values with command-line overrides on top."""

    def __init__(self, raw: Optional[Dict[str, str]] = None):
        self.raw = dict(raw or {})
        self.values: Dict[str, Any] = {}
        for key, spec in KEYS.items():
            if key in self.raw:
                try:
                    self.values[key] = spec.parse(self.raw[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"cannot parse {key} = {self.raw[key]!r}: {exc}", key=key) from exc
            else:
                self.values[key] = spec.default

    @classmethod
    def load(cls, path=None, overrides: Sequence[str] = ()) -> "Config":
        raw = read_config(path) if path is not None else {}
        raw.update(parse_overrides(list(overrides)))
        return cls(raw)

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, *keys: str) -> None:
        for key in keys:
            if self.values.get(key) is None:
                raise ConfigError(f"missing required key {key!r}", key=key)


def describe_keys() -> List[str]:
    return [f"  {k:<24} {v.help}" for k, v in KEYS.items()]
