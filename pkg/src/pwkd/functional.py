"""Layer primitives and loss functions with hand-written gradients.

Inputs are NCHW. All functions accept and return :class:`~pwkd.tensor.Tensor`
and keep the dtype of their first argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# -- convolution --------------------------------------------------------------
def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with an OIKK kernel bank."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError("conv2d", x.shape, w.shape, detail="expected x=NCHW, w=OIKK with matching C")
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d: invalid stride={stride} / pad={pad}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    if b is not None and b.shape != (o,):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias must have one entry per output channel")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    # (N, C, Ho, Wo, K, K) view; no copy until tensordot
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)
    wdata = w.data
    xshape = xp.shape

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        gx = None
        if x.requires_grad:
            gcols = np.tensordot(g, wdata, axes=([1], [0]))  # N, Ho, Wo, C, K, K
            gxp = np.zeros(xshape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, back, "conv2d")


# -- batch norm ---------------------------------------------------------------
@dataclass
class BNState:
    """Affine parameters plus running statistics for one BN layer."""

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, name: str, channels: int, dtype=np.float32, momentum=BN_MOMENTUM, eps=BN_EPS):
        return cls(
            gamma=Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma"),
            beta=Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batchnorm2d(x: Tensor, state: BNState, mode: str = "train") -> Tensor:
    """Per-channel normalization; ``train`` mode also updates running stats."""
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeError("batchnorm2d", x.shape, (state.channels,), detail="channel extent mismatch")
    gamma, beta = state.gamma, state.beta
    c = state.channels
    if mode == "eval":
        scale = gamma.data / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) / np.sqrt(
            state.running_var.reshape(1, c, 1, 1) + state.eps
        )
        out = x.data * scale.reshape(1, c, 1, 1) + (beta.data - state.running_mean * scale).reshape(1, c, 1, 1)

        def back_eval(g):
            gx = g * scale.reshape(1, c, 1, 1)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), back_eval, "batchnorm2d")
    if mode != "train":
        raise ConfigError(f"batchnorm2d: unknown mode {mode!r}")

    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise ShapeError("batchnorm2d", x.shape, detail="train mode needs N*H*W >= 2")
    mean = x.data.mean(axis=(0, 2, 3))
    centered = x.data - mean.reshape(1, c, 1, 1)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    mom = state.momentum
    state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
    state.running_var[...] = (1 - mom) * state.running_var + mom * var * (m / (m - 1))

    gdata = gamma.data

    def back(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gdata.reshape(1, c, 1, 1)
        gx = (inv_std / m).reshape(1, c, 1, 1) * (
            m * gxhat
            - gxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        )
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), back, "batchnorm2d")


# -- simple layers --------------------------------------------------------
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape, detail="expected NCHW")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    return make_result(
        out,
        (x,),
        lambda g: (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),),
        "global_avg_pool",
    )


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping ``factor x factor`` average pooling."""
    n, c, h, w = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError("avg_pool2d", x.shape, detail=f"spatial size not divisible by {factor}")
    if factor == 1:
        return x
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def back(g):
        up = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (up / (factor * factor),)

    return make_result(out, (x,), back, "avg_pool2d")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with ``x`` of shape N x F and ``w`` of shape G x F."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("linear", w.shape, b.shape, detail="bias extent")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data

    def back(g):
        grads = (g @ wd, g.T @ xd)
        return grads + (g.sum(axis=0),) if b is not None else grads

    return make_result(out, (x, w, b) if b is not None else (x, w), back, "linear")


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row of a matrix by ``max(||row||_2, eps)``."""
    if x.ndim != 2:
        raise ShapeError("l2_normalize_rows", x.shape, detail="expected a matrix")
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    clipped = norm > eps
    denom = np.where(clipped, norm, eps)
    out = x.data / denom

    def back(g):
        # rows under the eps floor are a plain scaling by 1/eps
        proj = (g * out).sum(axis=1, keepdims=True)
        gx = np.where(clipped, (g - out * proj) / denom, g / denom)
        return (gx,)

    return make_result(out, (x,), back, "l2_normalize_rows")


# -- softmax family -------------------------------------------------------
def _check_temperature(T):
    if not T > 0:
        raise ConfigError(f"temperature must be > 0, got {T}", key="temperature")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_t(z: Tensor, T: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis."""
    _check_temperature(T)
    z = as_tensor(z)
    p = np.exp(_log_softmax(z.data / T))

    def back(g):
        return ((p * (g - (g * p).sum(axis=-1, keepdims=True))) / T,)

    return make_result(p, (z,), back, "softmax_t")


def _check_logits(z: Tensor, op: str):
    if z.ndim != 2:
        raise ShapeError(op, z.shape, detail="logits must be N x K")


def cross_entropy(z: Tensor, y) -> Tensor:
    """Mean negative log-likelihood of integer labels ``y`` under softmax(z)."""
    _check_logits(z, "cross_entropy")
    y = np.asarray(y)
    n, k = z.shape
    if y.shape != (n,):
        raise ShapeError("cross_entropy", z.shape, y.shape, detail="one label per row")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ShapeError("cross_entropy", z.shape, y.shape, detail=f"labels must lie in [0, {k})")
    logp = _log_softmax(z.data)
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, y].mean(), dtype=z.dtype)

    def back(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return (d * (g / n),)

    return make_result(loss, (z,), back, "cross_entropy")


def kl_temperature(z_s: Tensor, z_t, T: float = 1.0) -> Tensor:
    """``T^2 * mean_n KL(softmax(z_t/T) || softmax(z_s/T))``.

    ``z_t`` is a constant target: no gradient is produced for it even if it
    carries a graph.
    """
    _check_temperature(T)
    _check_logits(z_s, "kl_temperature")
    zt = z_t.data if isinstance(z_t, Tensor) else np.asarray(z_t, dtype=z_s.dtype)
    if zt.shape != z_s.shape:
        raise ShapeError("kl_temperature", z_s.shape, zt.shape)
    n = z_s.shape[0]
    log_p = _log_softmax(zt / T)
    log_q = _log_softmax(z_s.data / T)
    p = np.exp(log_p)
    loss = np.asarray(T * T * (p * (log_p - log_q)).sum() / n, dtype=z_s.dtype)
    q = np.exp(log_q)

    def back(g):
        return (g * T * (q - p) / n,)

    return make_result(loss, (z_s,), back, "kl_temperature")


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error; ``b`` is treated as a constant."""
    bd = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=a.dtype)
    if a.shape != bd.shape:
        raise ShapeError("mse", a.shape, bd.shape)
    diff = a.data - bd
    count = diff.size
    out = np.asarray((diff * diff).sum() / count, dtype=a.dtype)
    return make_result(out, (a,), lambda g: (g * 2.0 * diff / count,), "mse")
