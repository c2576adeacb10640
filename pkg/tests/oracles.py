"""Loop-level reference implementations used as independent oracles.

Nothing here imports the library; every function works on plain float64
numpy arrays with explicit Python loops or textbook formulas.
"""

import math

import numpy as np


def conv2d(x, w, stride=1, pad=0):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, f, i, j] = float(np.sum(patch * w[f]))
    return out


def log_softmax(z):
    out = np.zeros_like(z, dtype=np.float64)
    for i, row in enumerate(z):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        out[i] = [v - lse for v in row]
    return out


def cross_entropy(z, y):
    ls = log_softmax(z)
    return -sum(ls[i, y[i]] for i in range(len(y))) / len(y)


def kd(zs, zt, T):
    """T^2 * mean_i sum_k p_t log(p_t / q_s)."""
    p = np.exp(log_softmax(np.asarray(zt) / T))
    q = np.exp(log_softmax(np.asarray(zs) / T))
    total = 0.0
    for i in range(len(p)):
        for k in range(p.shape[1]):
            if p[i, k] > 0:
                total += p[i, k] * math.log(p[i, k] / q[i, k])
    return T * T * total / len(p)


def mean_sq(a, b):
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    return sum((u - v) ** 2 for u, v in zip(a, b)) / len(a)


def pool(f, factor):
    n, c, h, w = f.shape
    out = np.zeros((n, c, h // factor, w // factor))
    for i in range(h // factor):
        for j in range(w // factor):
            out[:, :, i, j] = f[:, :, i * factor:(i + 1) * factor, j * factor:(j + 1) * factor].mean(axis=(2, 3))
    return out


def fitnet(fs, ft, wr):
    """1x1 regressor ``wr`` (T, S) applied per pixel, then MSE."""
    n, s, h, w = fs.shape
    r = np.zeros((n, wr.shape[0], h, w))
    for b in range(n):
        for i in range(h):
            for j in range(w):
                r[b, :, i, j] = wr @ fs[b, :, i, j]
    if r.shape[2] > ft.shape[2]:
        r = pool(r, r.shape[2] // ft.shape[2])
    elif ft.shape[2] > r.shape[2]:
        ft = pool(ft, ft.shape[2] // r.shape[2])
    return mean_sq(r, ft)


def attention(f, eps=1e-6):
    n = f.shape[0]
    out = []
    for b in range(n):
        a = [float(np.sum(f[b, :, i, j] ** 2)) for i in range(f.shape[2]) for j in range(f.shape[3])]
        norm = max(math.sqrt(sum(v * v for v in a)), eps)
        out.append([v / norm for v in a])
    return np.array(out)


def at(fs, ft):
    if fs.shape[2] > ft.shape[2]:
        fs = pool(fs, fs.shape[2] // ft.shape[2])
    elif ft.shape[2] > fs.shape[2]:
        ft = pool(ft, ft.shape[2] // fs.shape[2])
    return mean_sq(attention(fs), attention(ft))


def gram_normalized(f):
    n = f.shape[0]
    flat = f.reshape(n, -1)
    g = np.array([[float(np.dot(flat[i], flat[j])) for j in range(n)] for i in range(n)])
    for i in range(n):
        g[i] /= max(math.sqrt(sum(v * v for v in g[i])), 1e-12)
    return g


def sp(fs, ft):
    d = gram_normalized(fs) - gram_normalized(ft)
    return float(np.sum(d * d)) / fs.shape[0] ** 2


def triangular(t, L, lo, hi):
    return lo + (hi - lo) * (1 - abs(2 * t / L - 1))


def cosine(t, L, lo, hi):
    return lo + (hi - lo) * (1 + math.cos(math.pi * t / L)) / 2


def linear(t, L, lo, hi):
    return hi - (hi - lo) * t / L


def multistep(t, L, lo, hi, milestones=(0.5, 0.75), decay=0.1):
    passed = len([m for m in milestones if t >= m * L])
    return max(lo, hi * decay ** passed)
