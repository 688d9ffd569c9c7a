"""A small define-by-run reverse-mode differentiation engine over numpy arrays.

Every operation returns a new :class:`Tensor` remembering its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
walks the recorded graph once in reverse topological order.

All values are float64.
"""
from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp

NORM_EPS = 1e-12
LOG_FLOOR = 1e-12

_checked = False


class NumericalError(FloatingPointError):
    pass


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Raise :class:`NumericalError` whenever an op produces NaN or Inf."""
    global _checked
    prev, _checked = _checked, enabled
    try:
        yield
    finally:
        _checked = prev


class Tensor:
    __slots__ = ("value", "parents", "grad_fn", "requires_grad", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, value, requires_grad=False, name=None, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad
        self.name = name
        if _checked and not np.all(np.isfinite(self.value)):
            raise NumericalError(f"non-finite value produced by {name or 'op'}")

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: mul(a, -1.0)

    def __truediv__(self, c):
        return div_scalar(self, c)

    def __getitem__(self, idx):
        return index(self, idx)


def leaf(value, name=None) -> Tensor:
    """A trainable input."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _op(value, parents, grad_fn, name):
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, name=name,
                  parents=parents if needs else (), grad_fn=grad_fn if needs else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- primitives -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _op(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _op(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    def grad(g):
        return (_unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.value, b.shape) if b.requires_grad else None)

    return _op(a.value * b.value, (a, b), grad, "mul")


def div_scalar(a, c: float) -> Tensor:
    a = const(a)
    c = float(c)
    return _op(a.value / c, (a,), lambda g: (g / c,), "div")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics for 1-D/2-D/batched operands."""
    a, b = const(a), const(b)
    av, bv = a.value, b.value

    def grad(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return g @ np.swapaxes(bv, -1, -2), np.outer(av, g)
        if bv.ndim == 1:
            return np.multiply.outer(g, bv), np.einsum("...ij,...i->j", av, g)
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _op(av @ bv, (a, b), grad, "matmul")


def spmm(m, b) -> Tensor:
    """Constant sparse matrix times tensor ``b`` (2-D)."""
    b = const(b)
    m = sp.csr_matrix(m)
    return _op(np.asarray(m @ b.value), (b,), lambda g: (np.asarray(m.T @ g),), "spmm")


def concat(xs, axis=-1) -> Tensor:
    xs = [const(x) for x in xs]
    vals = [x.value for x in xs]
    ax = axis % vals[0].ndim
    splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
    return _op(np.concatenate(vals, axis=ax), tuple(xs),
               lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def tanh(x) -> Tensor:
    x = const(x)
    y = np.tanh(x.value)
    return _op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = const(x)
    v = x.value
    y = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                 np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return _op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax(x, axis=-1, mask=None) -> Tensor:
    """Max-shifted softmax. Entries where ``mask`` is False get weight 0;
    a fully masked slice is all zeros."""
    x = const(x)
    v = x.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        v = np.where(mask, v, -np.inf)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(v - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _op(y, (x,), grad, "softmax")


def l2_normalize(x, axis=-1, eps=NORM_EPS) -> Tensor:
    """x / max(||x||, eps). Gradient is defined as zero where ||x|| <= eps."""
    x = const(x)
    v = x.value
    n = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    big = n > eps
    d = np.where(big, n, eps)
    y = v / d

    def grad(g):
        gx = (g - y * (g * y).sum(axis=axis, keepdims=True)) / d
        return (np.where(big, gx, 0.0),)

    return _op(y, (x,), grad, "l2_normalize")


def dot(u, v) -> Tensor:
    """Inner product over the last axis."""
    return sum_(mul(u, v), axis=-1)


def log(x, floor=LOG_FLOOR) -> Tensor:
    """Natural log of max(x, floor); zero gradient below the floor."""
    x = const(x)
    v = x.value
    ok = v > floor
    c = np.where(ok, v, floor)
    return _op(np.log(c), (x,), lambda g: (np.where(ok, g / c, 0.0),), "log")


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = const(x)
    shape = x.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _op(x.value.sum(axis=axis, keepdims=keepdims), (x,), grad, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = const(x)
    n = x.value.size if axis is None else x.shape[axis]
    return div_scalar(sum_(x, axis=axis, keepdims=keepdims), n)


def maximum(xs) -> Tensor:
    """Elementwise max over a list of equally shaped tensors (first wins ties)."""
    xs = [const(x) for x in xs]
    stack = np.stack([x.value for x in xs])
    which = np.argmax(stack, axis=0)
    return _op(stack.max(axis=0), tuple(xs),
               lambda g: tuple(np.where(which == k, g, 0.0) for k in range(len(xs))), "maximum")


def gather_rows(x, idx) -> Tensor:
    x = const(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def grad(g):
        # scatter-add as a sparse product; much faster than np.add.at
        scatter = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))),
                                shape=(shape[0], len(idx)))
        return (np.asarray(scatter @ g.reshape(len(idx), -1)).reshape(shape),)

    return _op(x.value[idx], (x,), grad, "gather_rows")


def index(x, idx) -> Tensor:
    """Basic slicing (no fancy indexing; use :func:`gather_rows` for that)."""
    x = const(x)
    shape = x.shape

    def grad(g):
        out = np.zeros(shape)
        out[idx] += g
        return (out,)

    return _op(x.value[idx], (x,), grad, "index")


def reshape(x, shape) -> Tensor:
    x = const(x)
    old = x.shape
    return _op(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def stack(xs, axis=0) -> Tensor:
    xs = [const(x) for x in xs]
    ax = axis % (xs[0].ndim + 1)
    return _op(np.stack([x.value for x in xs], axis=ax), tuple(xs),
               lambda g: tuple(np.take(g, k, axis=ax) for k in range(len(xs))), "stack")


# --- composite helpers --------------------------------------------------------

def softmax_stable(v) -> Tensor:
    v = const(v)
    if v.value.size == 0:
        raise ValueError("softmax of an empty vector")
    return softmax(v, axis=-1)


def cosine(u, v, eps=NORM_EPS) -> Tensor:
    """u.v / (max(|u|, eps) * max(|v|, eps)) over the last axis."""
    return dot(l2_normalize(u, eps=eps), l2_normalize(v, eps=eps))


# --- reverse pass -------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each leaf in ``wrt``.

    Leaves that do not influence the loss get zero gradients.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad or w.grad_fn is not None:
            raise ValueError(f"{w.name or 'tensor'} is not a trainable leaf")
    grads = {id(loss): np.ones_like(loss.value)}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.get(id(node))
            if g is None or node.grad_fn is None:
                continue
            for p, gp in zip(node.parents, node.grad_fn(g)):
                if gp is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + gp
                else:
                    grads[id(p)] = np.asarray(gp, dtype=np.float64)
    return [np.array(grads.get(id(w), np.zeros_like(w.value)), dtype=np.float64).reshape(w.shape)
            for w in wrt]


def grad_check(f, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of leaf tensors to a scalar tensor; ``params`` are numpy
    arrays (copied, never modified).
    """
    values = [np.array(p, dtype=np.float64) for p in params]
    leaves = [leaf(v) for v in values]
    analytic = backward(f(leaves), leaves)
    worst = 0.0
    for k, v in enumerate(values):
        flat = v.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(f([Tensor(x) for x in values]).value)
            flat[j] = orig - h
            fm = float(f([Tensor(x) for x in values]).value)
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            a = analytic[k].reshape(-1)[j]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
