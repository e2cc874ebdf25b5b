"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every differentiable computation in the package (flow prior, GCN generator,
all training losses) is expressed with the ops in this module. Forward ops
record a closure that maps the output gradient to input gradients;
:func:`backward` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "DimensionError", "DomainError", "ContractError", "OracleError",
    "as_tensor", "matmul", "add", "sub", "mul", "div", "scale", "neg", "tanh", "prelu", "exp",
    "log", "sqrt", "square", "abs_", "sum_", "mean", "l1_norm", "l2_norm", "concat", "take",
    "transpose", "reshape", "clamp", "acos", "min_", "cross", "backward", "grad_check", "Adam",
]


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


_param_ids = itertools.count()


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient buffer."""

    __slots__ = ("id", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.id = next(_param_ids)
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- linear algebra

def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
    return np.matmul(a, b)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; a 2-D operand is shared across leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: leading dims differ {a.shape} and {b.shape}")
    out = _mm(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and b.ndim > 2:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2)).reshape((-1,) + a.shape).sum(0)
            else:
                ga = _mm(g, np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _mm(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _make(out, (a, b), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def prelu(a, slope) -> Tensor:
    """max(x, 0) + slope * min(x, 0) with a scalar (or broadcastable) slope."""
    a, slope = as_tensor(a), as_tensor(slope)
    _check_broadcast("prelu", a, slope)
    pos = a.data > 0
    out = np.where(pos, a.data, slope.data * a.data)

    def bw(g):
        ga = g * np.where(pos, 1.0, slope.data) if a.requires_grad else None
        gs = _unbroadcast(g * np.where(pos, 0.0, a.data), slope.shape) if slope.requires_grad else None
        return ga, gs

    return _make(out, (a, slope), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min():.3g})")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (a.data >= lo_) & (a.data <= hi_)
    return _make(np.clip(a.data, lo_, hi_), (a,), lambda g: (g * inside,))


def acos(a) -> Tensor:
    a = as_tensor(a)
    if np.any(np.abs(a.data) >= 1.0):
        raise DomainError("acos: input outside the open interval (-1, 1); clamp first")
    out = np.arccos(a.data)
    return _make(out, (a,), lambda g: (-g / np.sqrt(1.0 - a.data * a.data),))


# ---------------------------------------------------------------- reductions

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1)
    return _make(out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / n,))


def l1_norm(a, axis=None, keepdims=False) -> Tensor:
    return sum_(abs_(a), axis, keepdims)


def l2_norm(a, axis=None, keepdims=False) -> Tensor:
    """Euclidean norm; the gradient at the zero vector is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=keepdims))

    def bw(g):
        o = _expand(out, a.shape, axis, keepdims)
        gg = _expand(g, a.shape, axis, keepdims)
        safe = np.where(o > 0, o, 1.0)
        return (np.where(o > 0, gg * a.data / safe, 0.0),)

    return _make(out, (a,), bw)


def min_(a, axis: int = -1) -> Tensor:
    """Minimum along one axis; gradient goes to the first minimising entry only."""
    a = as_tensor(a)
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------- structure

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    items = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis for i in items)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _make(np.array(out), (a,), bw)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along an axis (indices may repeat; backward scatter-adds)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)
    ax = axis % a.ndim

    def bw(g):
        n, m = a.shape[ax], indices.size
        gm = np.moveaxis(g, list(range(ax, ax + indices.ndim)), list(range(indices.ndim)))
        gm = gm.reshape((m,) + gm.shape[indices.ndim:])
        if n * m <= 1 << 16:
            # scatter-add as a one-hot product; far faster than ufunc.at for small index sets
            onehot = np.zeros((n, m))
            onehot[indices.ravel(), np.arange(m)] = 1.0
            target = (onehot @ gm.reshape(m, -1)).reshape((n,) + gm.shape[1:])
            return (np.moveaxis(target, 0, ax),)
        ga = np.zeros_like(a.data)
        np.add.at(np.moveaxis(ga, ax, 0), indices.ravel(), gm)
        return (ga,)

    return _make(out, (a,), bw)


def cross(a, b) -> Tensor:
    """Cross product over the last axis (size 3)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise DimensionError(f"cross: last axis must be 3, got {a.shape} and {b.shape}")
    _check_broadcast("cross", a, b)
    out = np.cross(a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.cross(b.data, g), a.shape), _unbroadcast(np.cross(g, a.data), b.shape))

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------- reverse pass

def _topo(root: Tensor) -> list:
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


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = node.grad + g if node.grad is not None else np.array(g)
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            # closures never write into their gradient argument, so views can be stored as-is
            grads[id(p)] = grads[id(p)] + gp if id(p) in grads else gp


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    Per parameter tensor the error is ``max|analytic - numeric| / max(1e-8, max|numeric|)``
    over the probed entries; ``max_entries`` limits probing to a random subset.
    """
    if step <= 0:
        raise ContractError("grad_check: step must be positive")
    params = list(params)
    v1, v2 = float(fn().data), float(fn().data)
    if v1 != v2:
        raise OracleError(f"grad_check: fn is not deterministic ({v1!r} != {v2!r})")
    saved = [p.grad for p in params]
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().data)
            flat[i] = orig - step
            fm = float(fn().data)
            flat[i] = orig
            num[n] = (fp - fm) / (2.0 * step)
        err = np.max(np.abs(ga.reshape(-1)[idx] - num)) / max(1e-8, np.max(np.abs(num)))
        worst = max(worst, float(err))
    return worst


class Adam:
    """Adam with bias correction; ``lr`` can be rescaled between steps."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}
