"""Weight-sharing networks executable at several channel widths.

One set of full-width conv weights is shared by every sub-network; a
sub-network at width ``rho`` reads the leading ``ceil(rho * C)`` output and
input channels of each kernel. Batch-norm layers and the classifier are
private to each width (switchable BN / classifier).

A network built with the single width ``[1.0]`` is an ordinary network; this
is how students and standalone extractions are represented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .functional import BNState, batchnorm2d, conv2d, global_avg_pool, linear, relu
from .tensor import TRAIN_DTYPE, Parameter, Tensor, leading_slice

FAMILIES = ("cifar-resnet", "plain-convnet")
BASE_WIDTHS = (16, 32, 64)
STAGE_TAPS = ("stage1", "stage2", "stage3")

WIDTHS_G2 = (0.5, 1.0)
WIDTHS_G4 = (0.25, 0.5, 0.75, 1.0)
WIDTHS_G8 = (0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 1.0)


def active_channels(rho: float, channels: int) -> int:
    """``ceil(rho * channels)``, tolerant of float noise such as 0.35*20."""
    return max(1, math.ceil(rho * channels - 1e-9))


def validate_widths(width_list) -> Tuple[float, ...]:
    widths = tuple(float(w) for w in width_list)
    if not widths:
        raise ConfigError("width list is empty", key="model.widths")
    for w in widths:
        if not 0 < w <= 1:
            raise ConfigError(f"width {w} outside (0, 1]", key="model.widths")
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ConfigError(f"width list {list(widths)} is not strictly increasing", key="model.widths")
    if widths[-1] != 1.0:
        raise ConfigError("width list must end with 1.0", key="model.widths")
    return widths


def width_key(rho: float) -> str:
    return repr(float(rho))


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description.

    ``cifar-resnet`` has ``6n + 2`` layers: a 3x3 stem, three stages of ``n``
    basic blocks (stride 2 entering stages 2 and 3), global pooling and a
    classifier. ``plain-convnet`` stacks ``n`` conv-BN-ReLU layers per stage
    with stride 2 at the start of every stage. Stage widths are
    ``16k / 32k / 64k`` unless ``widths`` overrides them.
    """

    family: str = "cifar-resnet"
    n: int = 1
    k: int = 1
    in_channels: int = 3
    image_size: int = 32
    num_classes: int = 10
    taps: Tuple[str, ...] = STAGE_TAPS
    widths: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}", key="model.family")
        if self.n < 1:
            raise ConfigError("model depth parameter n must be >= 1", key="model.n")
        if self.k < 1:
            raise ConfigError("width multiplier k must be >= 1", key="model.k")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes", key="model.classes")
        bad = [t for t in self.taps if t not in self.available_taps]
        if bad:
            raise ConfigError(f"unknown tap points {bad}; choose from {list(self.available_taps)}", key="model.taps")

    @property
    def stage_widths(self) -> Tuple[int, int, int]:
        if self.widths is not None:
            return tuple(int(w) for w in self.widths)
        return tuple(b * self.k for b in BASE_WIDTHS)

    @property
    def available_taps(self) -> Tuple[str, ...]:
        return (("stem",) if self.family == "cifar-resnet" else ()) + STAGE_TAPS

    @property
    def depth(self) -> int:
        per_stage = 2 if self.family == "cifar-resnet" else 1
        return 3 * self.n * per_stage + (2 if self.family == "cifar-resnet" else 1)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "k": self.k,
            "in_channels": self.in_channels,
            "image_size": self.image_size,
            "num_classes": self.num_classes,
            "taps": list(self.taps),
            "widths": list(self.widths) if self.widths is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["taps"] = tuple(d.get("taps", STAGE_TAPS))
        if d.get("widths") is not None:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


# -- blueprint -------------------------------------------------------------
@dataclass(frozen=True)
class ConvDef:
    name: str
    cin: int
    cout: int
    kernel: int
    stride: int
    pad: int
    from_input: bool = False  # stem: input channels are never sliced


@dataclass(frozen=True)
class Unit:
    """One conv-BN-ReLU layer or one residual basic block."""

    kind: str  # "convbn" | "basic"
    convs: Tuple[ConvDef, ...]
    bns: Tuple[str, ...]
    tap: Optional[str] = None


def blueprint(spec: ArchSpec) -> List[Unit]:
    w1, w2, w3 = spec.stage_widths
    units: List[Unit] = []
    if spec.family == "cifar-resnet":
        units.append(
            Unit("convbn", (ConvDef("stem.conv", spec.in_channels, w1, 3, 1, 1, True),), ("stem.bn",), "stem")
        )
        cin = w1
        for s, cout in enumerate((w1, w2, w3), start=1):
            for b in range(spec.n):
                stride = 2 if (s > 1 and b == 0) else 1
                p = f"stage{s}.block{b}"
                convs = [ConvDef(f"{p}.conv1", cin, cout, 3, stride, 1), ConvDef(f"{p}.conv2", cout, cout, 3, 1, 1)]
                bns = [f"{p}.bn1", f"{p}.bn2"]
                if stride != 1 or cin != cout:
                    convs.append(ConvDef(f"{p}.shortcut", cin, cout, 1, stride, 0))
                    bns.append(f"{p}.shortcut_bn")
                tap = f"stage{s}" if b == spec.n - 1 else None
                units.append(Unit("basic", tuple(convs), tuple(bns), tap))
                cin = cout
    else:
        cin = spec.in_channels
        first = True
        for s, cout in enumerate((w1, w2, w3), start=1):
            for i in range(spec.n):
                p = f"stage{s}.layer{i}"
                conv = ConvDef(f"{p}.conv", cin, cout, 3, 2 if i == 0 else 1, 1, first)
                tap = f"stage{s}" if i == spec.n - 1 else None
                units.append(Unit("convbn", (conv,), (f"{p}.bn",), tap))
                cin, first = cout, False
    return units


def last_channels(spec: ArchSpec) -> int:
    return spec.stage_widths[2]


# -- network ---------------------------------------------------------------
@dataclass
class KnowledgeFragment:
    """Logits and tapped feature maps from one forward pass at width ``rho``."""

    rho: float
    logits: Tensor
    features: Dict[str, Tensor] = field(default_factory=dict)

    def detach(self) -> "KnowledgeFragment":
        return KnowledgeFragment(self.rho, self.logits.detach(), {k: v.detach() for k, v in self.features.items()})


class SlimmableNet:
    """Shared full-width conv weights plus per-width BN states and classifiers."""

    def __init__(self, spec: ArchSpec, width_list: Sequence[float], dtype=TRAIN_DTYPE):
        self.spec = spec
        self.width_list = validate_widths(width_list)
        self.dtype = np.dtype(dtype)
        self.units = blueprint(spec)
        self.convs: Dict[str, ConvDef] = {c.name: c for u in self.units for c in u.convs}
        self.shared: Dict[str, Parameter] = {}
        self.bn: Dict[float, Dict[str, BNState]] = {}
        self.fc: Dict[float, Tuple[Parameter, Parameter]] = {}
        self.meta: dict = {}  # checkpoint metadata (normalization, seed, epoch...)
        self.velocity: Dict[str, np.ndarray] = {}  # optimizer state carried by checkpoints
        self._bn_channels = {}
        for u in self.units:
            for conv, bn in zip(u.convs, u.bns):
                self._bn_channels[bn] = conv.cout
        for c in self.convs.values():
            self.shared[f"{c.name}.w"] = Parameter(
                np.zeros((c.cout, c.cin, c.kernel, c.kernel), dtype=self.dtype), f"{c.name}.w", decay=True
            )
        for rho in self.width_list:
            tag = width_key(rho)
            self.bn[rho] = {
                name: BNState.create(f"{name}[{tag}]", active_channels(rho, ch), dtype=self.dtype)
                for name, ch in self._bn_channels.items()
            }
            feat = active_channels(rho, last_channels(spec))
            self.fc[rho] = (
                Parameter(np.zeros((spec.num_classes, feat), dtype=self.dtype), f"fc[{tag}].w", decay=True),
                Parameter(np.zeros(spec.num_classes, dtype=self.dtype), f"fc[{tag}].b"),
            )

    # -- bookkeeping -------------------------------------------------------
    @property
    def G(self) -> int:
        return len(self.width_list)

    def check_width(self, rho) -> float:
        rho = float(rho)
        if rho not in self.bn:
            raise ConfigError(f"width {rho} not in configured list {list(self.width_list)}", key="rho")
        return rho

    def private_parameters(self, rho) -> List[Parameter]:
        rho = self.check_width(rho)
        out = []
        for st in self.bn[rho].values():
            out += [st.gamma, st.beta]
        out += list(self.fc[rho])
        return out

    def parameters(self, rho=None) -> List[Parameter]:
        """All parameters, or only the (full) Parameter objects a ``rho`` forward touches."""
        out = list(self.shared.values())
        widths = self.width_list if rho is None else (self.check_width(rho),)
        for r in widths:
            out += self.private_parameters(r)
        return out

    def named_buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for rho in self.width_list:
            tag = width_key(rho)
            for name, st in self.bn[rho].items():
                out[f"{name}[{tag}].running_mean"] = st.running_mean
                out[f"{name}[{tag}].running_var"] = st.running_var
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets = {p.name: p for p in self.parameters()}
        buffers = self.named_buffers()
        missing = (set(targets) | set(buffers)) - set(state)
        if missing:
            raise ConfigError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, arr in state.items():
            if name in targets:
                dst = targets[name].data
            elif name in buffers:
                dst = buffers[name]
            else:
                raise ConfigError(f"unexpected state entry {name!r}")
            if dst.shape != arr.shape:
                raise ShapeError("load_state_dict", dst.shape, arr.shape, detail=name)
            dst[...] = arr

    # -- forward -----------------------------------------------------------
    def _weight(self, conv: ConvDef, rho: float) -> Tensor:
        cout = active_channels(rho, conv.cout)
        cin = conv.cin if conv.from_input else active_channels(rho, conv.cin)
        return leading_slice(self.shared[f"{conv.name}.w"], (cout, cin))

    def _conv_bn(self, h, conv, bn, rho, mode):
        return batchnorm2d(conv2d(h, self._weight(conv, rho), stride=conv.stride, pad=conv.pad), bn, mode)

    def forward(self, x, rho: float = 1.0, mode: str = "eval") -> KnowledgeFragment:
        rho = self.check_width(rho)
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.in_channels, s.image_size, s.image_size):
            raise ShapeError(
                "forward", x.shape, (None, s.in_channels, s.image_size, s.image_size), detail="input shape"
            )
        bns = self.bn[rho]
        feats = {}
        h = x
        for u in self.units:
            if u.kind == "convbn":
                h = relu(self._conv_bn(h, u.convs[0], bns[u.bns[0]], rho, mode))
            else:
                out = relu(self._conv_bn(h, u.convs[0], bns[u.bns[0]], rho, mode))
                out = self._conv_bn(out, u.convs[1], bns[u.bns[1]], rho, mode)
                short = h if len(u.convs) == 2 else self._conv_bn(h, u.convs[2], bns[u.bns[2]], rho, mode)
                h = relu(out + short)
            if u.tap is not None and u.tap in s.taps:
                feats[u.tap] = h
        w, b = self.fc[rho]
        logits = linear(global_avg_pool(h), w, b)
        return KnowledgeFragment(rho, logits, feats)

    __call__ = forward


def build(spec: ArchSpec, width_list: Sequence[float] = WIDTHS_G4, seed: int = 0, dtype=TRAIN_DTYPE) -> SlimmableNet:
    """Create a slimmable network with seeded He (fan-in) initialization."""
    net = SlimmableNet(spec, width_list, dtype)
    rng = np.random.default_rng(seed)
    for p in net.shared.values():
        fan_in = int(np.prod(p.shape[1:]))
        p.data[...] = rng.standard_normal(p.shape) * math.sqrt(2.0 / fan_in)
    for rho in net.width_list:
        w, _ = net.fc[rho]
        w.data[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / w.shape[1])
    return net


def build_plain(spec: ArchSpec, seed: int = 0, dtype=TRAIN_DTYPE) -> SlimmableNet:
    """An ordinary (single-width) network."""
    return build(spec, (1.0,), seed=seed, dtype=dtype)


def forward_at_width(net: SlimmableNet, x, rho: float, mode: str = "eval") -> KnowledgeFragment:
    return net.forward(x, rho, mode)


def extract_standalone(net: SlimmableNet, rho: float) -> SlimmableNet:
    """Copy the width-``rho`` sub-network into a freestanding plain network."""
    rho = net.check_width(rho)
    widths = tuple(active_channels(rho, w) for w in net.spec.stage_widths)
    plain = SlimmableNet(replace(net.spec, widths=widths), (1.0,), net.dtype)
    for name, p in plain.shared.items():
        conv = net.convs[name[: -len(".w")]]
        src = net._weight(conv, rho).data
        if src.shape != p.shape:
            raise ShapeError("extract_standalone", src.shape, p.shape, detail=name)
        p.data[...] = src
    for name, st in plain.bn[1.0].items():
        src = net.bn[rho][name]
        st.gamma.data[...] = src.gamma.data
        st.beta.data[...] = src.beta.data
        st.running_mean[...] = src.running_mean
        st.running_var[...] = src.running_var
    for dst, src in zip(plain.fc[1.0], net.fc[rho]):
        dst.data[...] = src.data
    return plain


def param_count(net: SlimmableNet, rho: float) -> int:
    """Number of parameter scalars a ``rho`` forward reads."""
    rho = net.check_width(rho)
    total = sum(int(np.prod(net._weight(c, rho).shape)) for c in net.convs.values())
    total += sum(2 * st.channels for st in net.bn[rho].values())
    total += sum(p.size for p in net.fc[rho])
    return total
