"""Central finite differences, the independent oracle for :func:`backward`."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad

FD_STEP = 1e-5


def numeric_grad(f: Callable[[], Tensor], arrays: Sequence[np.ndarray], h: float = FD_STEP) -> list:
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradients(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = FD_STEP) -> float:
    """Worst relative error between backprop and finite differences over ``leaves``.

    ``f`` must rebuild the graph from the leaves' current ``data`` on every
    call; leaves should be float64 for a meaningful comparison.
    """
    analytic = grad(f(), leaves)
    numeric = numeric_grad(f, [t.data for t in leaves], h)
    return max(max_rel_error(a, n) for a, n in zip(analytic, numeric))


# -- per-op cases: rng -> (closure, leaves) ---------------------------------
def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _projected(out_fn, rng):
    """Reduce a tensor-valued op to a scalar with fixed random weights."""
    cache = {}

    def f():
        out = out_fn()
        if out.size == 1:
            return out
        if "r" not in cache:
            cache["r"] = Tensor(rng.standard_normal(out.shape))
        return (out * cache["r"]).sum()

    return f


def _case_conv2d(rng):
    from .functional import conv2d

    n, c, o = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
    k = int(rng.choice([1, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    hw = int(rng.integers(max(k - 2 * pad, 2), 5))
    x, w, b = _t(rng, n, c, hw, hw), _t(rng, o, c, k, k), _t(rng, o)
    return _projected(lambda: conv2d(x, w, b, stride, pad), rng), [x, w, b]


def _case_batchnorm_train(rng):
    from .functional import BNState, batchnorm2d

    c = int(rng.integers(1, 5))
    x = _t(rng, int(rng.integers(2, 4)), c, 3, 3)
    st = BNState.create("bn", c, dtype=np.float64)
    st.gamma.data[...] = rng.standard_normal(c)
    st.beta.data[...] = rng.standard_normal(c)
    return _projected(lambda: batchnorm2d(x, st, "train"), rng), [x, st.gamma, st.beta]


def _case_batchnorm_eval(rng):
    from .functional import BNState, batchnorm2d

    c = int(rng.integers(1, 5))
    x = _t(rng, 2, c, 3, 3)
    st = BNState.create("bn", c, dtype=np.float64)
    st.gamma.data[...] = rng.standard_normal(c)
    st.running_mean[...] = rng.standard_normal(c)
    st.running_var[...] = rng.uniform(0.5, 2.0, c)
    return _projected(lambda: batchnorm2d(x, st, "eval"), rng), [x, st.gamma, st.beta]


def _case_relu(rng):
    from .functional import relu

    x = _t(rng, 2, 3, 4)
    x.data[np.abs(x.data) < 1e-3] += 0.01
    return _projected(lambda: relu(x), rng), [x]


def _case_pools(rng):
    from .functional import avg_pool2d, global_avg_pool

    x = _t(rng, 2, 3, 4, 4)
    return _projected(lambda: global_avg_pool(avg_pool2d(x, 2)) + global_avg_pool(x), rng), [x]


def _case_linear(rng):
    from .functional import linear

    n, f_, g = (int(v) for v in rng.integers(1, 6, size=3))
    x, w, b = _t(rng, n, f_), _t(rng, g, f_), _t(rng, g)
    return _projected(lambda: linear(x, w, b), rng), [x, w, b]


def _case_softmax(rng):
    from .functional import softmax_t

    z = _t(rng, 3, 4)
    T = float(rng.uniform(0.5, 4.0))
    return _projected(lambda: softmax_t(z, T), rng), [z]


def _case_cross_entropy(rng):
    from .functional import cross_entropy

    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    z, y = _t(rng, n, k), rng.integers(0, k, size=n)
    return (lambda: cross_entropy(z, y)), [z]


def _case_kl(rng):
    from .functional import kl_temperature

    z_s, z_t = _t(rng, 3, 5), rng.standard_normal((3, 5))
    T = float(rng.uniform(0.5, 6.0))
    return (lambda: kl_temperature(z_s, z_t, T)), [z_s]


def _case_normalize(rng):
    from .functional import l2_normalize_rows

    x = _t(rng, 3, 4)
    return _projected(lambda: l2_normalize_rows(x, 1e-6), rng), [x]


def _case_mse(rng):
    from .functional import mse

    a, b = _t(rng, 2, 3, 2, 2), rng.standard_normal((2, 3, 2, 2))
    return (lambda: mse(a, b)), [a]


def _case_algebra(rng):
    from .tensor import div, leading_slice, matmul, sqrt, square

    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    c = Tensor(rng.uniform(0.5, 2.0, (3, 1)), requires_grad=True, dtype=np.float64)

    def f():
        m = matmul(a, b)
        u = div(square(m) + m * 0.5 - 1.0, c) + sqrt(c)
        s = leading_slice(a, (2, 3)).reshape(6).sum() + matmul(a, a.T).mean(axis=0).sum()
        return u.sum(axis=1).mean() + s

    return f, [a, b, c]


def _case_composed(rng):
    """conv -> bn -> relu -> pool -> linear -> cross entropy."""
    from .functional import BNState, batchnorm2d, conv2d, cross_entropy, global_avg_pool, linear, relu

    n, c, o, k = 3, int(rng.integers(1, 4)), int(rng.integers(2, 5)), 4
    x, w = _t(rng, n, c, 4, 4), _t(rng, o, c, 3, 3)
    st = BNState.create("bn", o, dtype=np.float64)
    fw, fb = _t(rng, k, o), _t(rng, k)
    y = rng.integers(0, k, size=n)
    f = lambda: cross_entropy(linear(global_avg_pool(relu(batchnorm2d(conv2d(x, w, None, 1, 1), st))), fw, fb), y)
    return f, [x, w, st.gamma, st.beta, fw, fb]


GRADIENT_CASES = {
    "conv2d": _case_conv2d,
    "batchnorm2d[train]": _case_batchnorm_train,
    "batchnorm2d[eval]": _case_batchnorm_eval,
    "relu": _case_relu,
    "pooling": _case_pools,
    "linear": _case_linear,
    "softmax_t": _case_softmax,
    "cross_entropy": _case_cross_entropy,
    "kl_temperature": _case_kl,
    "l2_normalize_rows": _case_normalize,
    "mse": _case_mse,
    "tensor algebra": _case_algebra,
    "conv-bn-relu-linear-ce": _case_composed,
}


def run_gradient_suite(seeds=range(50), cases=None) -> dict:
    """Worst finite-difference relative error per op over ``seeds``."""
    cases = cases or GRADIENT_CASES
    worst = {}
    for name, make in cases.items():
        err = 0.0
        for seed in seeds:
            f, leaves = make(np.random.default_rng(seed))
            err = max(err, check_gradients(f, leaves))
        worst[name] = err
    return worst
