"""Dense tensors with a small reverse-mode tape.

Every differentiable operation builds its output through :func:`make_result`,
which records the parents and a closure mapping the output gradient to one
gradient per parent. :func:`backward` walks that record in reverse
topological order. There is no global tape, so graphs are garbage collected
together with the tensors that own them.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher forwards, evaluation)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- basic protocol --------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named trainable leaf.

    ``decay`` marks conv/linear weights, the only entries SGD applies
    weight decay to.
    """

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str, decay: bool = False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.decay = decay

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class GradientSet(dict):
    """Mapping ``parameter name -> gradient array``."""

    def accumulate(self, other: "GradientSet") -> "GradientSet":
        for name, g in other.items():
            if name in self:
                if self[name].shape != g.shape:
                    raise ShapeError("GradientSet.accumulate", self[name].shape, g.shape, detail=name)
                self[name] = self[name] + g
            else:
                self[name] = g.copy()
        return self

    def __add__(self, other):
        out = GradientSet({k: v.copy() for k, v in self.items()})
        return out.accumulate(other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else TRAIN_DTYPE))


def check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op output and record how to push gradients to ``parents``."""
    check_finite(data, op)
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise & reductions ------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    sa, sb = a.shape, b.shape
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    ad, bd = a.data, b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data  # non-finite results are reported by make_result
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None
    ad, bd = a.data, b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
        "div",
    )


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(out, (a,), back, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return make_result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expected a matrix")
    return make_result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return make_result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def leading_slice(a: Tensor, sizes: Sequence[int]) -> Tensor:
    """Keep the first ``sizes[i]`` entries along each leading axis.

    A no-op slice returns ``a`` itself, so a full-width view shares identity
    (and therefore gradient routing) with the underlying parameter.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) > a.ndim or any(s < 1 or s > n for s, n in zip(sizes, a.shape)):
        raise ShapeError("leading_slice", a.shape, sizes)
    if all(s == n for s, n in zip(sizes, a.shape)):
        return a
    index = tuple(slice(0, s) for s in sizes)
    full = a.shape
    dtype = a.dtype

    def back(g):
        out = np.zeros(full, dtype=dtype)
        out[index] = g
        return (out,)

    return make_result(a.data[index], (a,), back, "leading_slice")


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    datas = [p.data for p in parts]
    cuts = np.cumsum([d.shape[1] for d in datas])[:-1]
    out = np.concatenate(datas, axis=1)
    return make_result(out, tuple(parts), lambda g: tuple(np.split(g, cuts, axis=1)), "concat")


# -- reverse pass -----------------------------------------------------------
def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root: Tensor, seed=None) -> dict:
    """Return ``{id(leaf): (leaf, gradient)}`` for every reachable leaf."""
    if not root.requires_grad:
        return {}
    order = _toposort(root)
    grads = {id(root): np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=root.dtype)}
    for node in reversed(order):
        if node._backward is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {id(n): (n, grads[id(n)]) for n in order if n._backward is None and id(n) in grads}


def backward(loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> GradientSet:
    """Gradients of scalar ``loss`` for every Parameter it depends on.

    With ``params`` given, the result also holds zero entries for parameters
    the loss does not touch, so it can be handed straight to SGD.
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    out = GradientSet()
    for node, g in _backprop(loss).values():
        if isinstance(node, Parameter):
            out[node.name] = out[node.name] + g if node.name in out else g
    if params is not None:
        for p in params:
            if p.name not in out:
                out[p.name] = np.zeros_like(p.data)
    return out


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list:
    """Gradients of ``loss`` with respect to arbitrary leaf tensors."""
    found = _backprop(loss)
    return [found[id(t)][1] if id(t) in found else np.zeros_like(t.data) for t in inputs]
