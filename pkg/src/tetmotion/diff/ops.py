"""Primitive differentiable operations.

Binary elementwise ops broadcast like numpy; their cotangents are summed
back to each operand's shape.  Plain arrays and Python scalars are lifted
to constants of the tape of the first node operand.
"""

import numpy as np

from tetmotion.diff.tape import Node
from tetmotion.errors import InvalidArgument


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise InvalidArgument("at least one operand must be a Node")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, value_fn, grad_a, grad_b):
    tape = _tape_of(a, b)
    a = tape.lift(a)
    b = tape.lift(b)
    av, bv = a.value, b.value
    out = value_fn(av, bv)

    def vjp(g):
        return (_unbroadcast(grad_a(g, av, bv, out), av.shape),
                _unbroadcast(grad_b(g, av, bv, out), bv.shape))

    return tape.record(out, (a, b), vjp)


def add(a, b):
    return _binary(a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, *_: g, lambda g, *_: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b):
    return _binary(a, b, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)


def _unary(x, value, deriv):
    """``deriv(x, out)`` is the elementwise derivative."""
    tape = x.tape
    xv = x.value
    out = value(xv)
    return tape.record(out, (x,), lambda g: (g * deriv(xv, out),))


def neg(x):
    return _unary(x, np.negative, lambda x, o: -1.0)


def recip(x):
    return _unary(x, lambda v: 1.0 / v, lambda x, o: -o * o)


def square(x):
    return _unary(x, np.square, lambda x, o: 2.0 * x)


def sqrt(x):
    # zero derivative at zero keeps distance terms finite when points coincide
    def d(x, o):
        return np.where(o > 0, 0.5 / np.where(o > 0, o, 1.0), 0.0)
    return _unary(x, np.sqrt, d)


def abs(x):  # noqa: A001 - mirrors numpy naming
    return _unary(x, np.abs, lambda x, o: np.sign(x))


def tanh(x):
    return _unary(x, np.tanh, lambda x, o: 1.0 - o * o)


def sigmoid(x):
    def value(v):
        return 0.5 * (np.tanh(0.5 * v) + 1.0)
    return _unary(x, value, lambda x, o: o * (1.0 - o))


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda x, o: (x > 0).astype(np.float64))


def clip(x, bound):
    """Saturate to [-bound, bound]; the cotangent is zero where saturated."""
    xv = x.value
    active = np.abs(xv) <= bound
    return x.tape.record(np.clip(xv, -bound, bound), (x,), lambda g: (g * active,))


def matmul(a, b):
    tape = _tape_of(a, b)
    a = tape.lift(a)
    b = tape.lift(b)
    av, bv = a.value, b.value

    def vjp(g):
        ga = g @ bv.T if bv.ndim == 2 else np.outer(g, bv)
        gb = av.T @ g if av.ndim == 2 else np.outer(av, g)
        return ga, gb

    return tape.record(av @ bv, (a, b), vjp)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for row-batched ``x``."""
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def transpose(x):
    return x.tape.record(x.value.T, (x,), lambda g: (g.T,))


def sum(x, axis=None):  # noqa: A001
    xv = x.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return x.tape.record(xv.sum(axis=axis), (x,), vjp)


def mean(x, axis=None):
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def dot_rows(a, b):
    """Row-wise dot product of two ``(n, d)`` nodes."""
    return sum(mul(a, b), axis=1)


def reshape(x, shape):
    old = x.value.shape
    return x.tape.record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis=-1):
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    values = [x.value for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]
    out = np.concatenate(values, axis=axis)

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return tape.record(out, tuple(xs), vjp)


def columns(x, start, stop):
    """Slice ``x[:, start:stop]``."""
    xv = x.value

    def vjp(g):
        full = np.zeros_like(xv)
        full[:, start:stop] = g
        return (full,)

    return x.tape.record(xv[:, start:stop], (x,), vjp)


def repeat_rows(x, n):
    """Tile a ``(1, d)`` node into ``(n, d)``."""
    return x.tape.record(np.repeat(x.value, n, axis=0), (x,),
                         lambda g: (g.sum(axis=0, keepdims=True),))


def take(x, index):
    """Gather rows ``x[index]``.  ``index`` is data, so it carries no gradient."""
    return combine(x, np.asarray(index, dtype=np.int64)[:, None], np.ones((len(index), 1)))


def combine(x, index, weight):
    """Row-wise fixed linear combination ``out[i] = sum_j weight[i, j] * x[index[i, j]]``.

    Covers gathers, barycentric interpolation and edge blending; the weights
    are constants.  The adjoint scatters with ``bincount`` so accumulation
    order is fixed.
    """
    xv = x.value
    index = np.asarray(index, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if xv.ndim == 1:
        out = (weight * xv[index]).sum(axis=1)
    else:
        out = (weight[:, :, None] * xv[index]).sum(axis=1)
    n = len(xv)

    def vjp(g):
        flat_idx = index.ravel()
        if xv.ndim == 1:
            w = (weight * g[:, None]).ravel()
            return (np.bincount(flat_idx, w, minlength=n),)
        grad = np.empty_like(xv)
        for d in range(xv.shape[1]):
            w = (weight * g[:, d:d + 1]).ravel()
            grad[:, d] = np.bincount(flat_idx, w, minlength=n)
        return (grad,)

    return x.tape.record(out, (x,), vjp)


def sparse_apply(matrix, x):
    """Constant sparse (or dense) matrix times a node."""
    xv = x.value
    out = matrix @ xv
    mt = matrix.T
    return x.tape.record(np.asarray(out), (x,), lambda g: (np.asarray(mt @ g),))


def custom(tape, value, parents, vjp):
    """Escape hatch for fused geometric ops with hand-written adjoints."""
    return tape.record(value, parents, vjp)
