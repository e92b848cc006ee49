"""Reverse-mode automatic differentiation over a small, closed set of array
primitives.

Every trainable quantity in this package is assembled from the ops below, so
gradients stay verifiable op-by-op against finite differences.  Backward
functions build their results out of the same primitives, which makes
grad-of-grad work (needed for the discriminator input-gradient penalty and
for surface normals inside the smoothness objective).

Tensors wrap numpy arrays and never mutate them.  Dtype follows the inputs:
float32 for training, float64 when a caller re-runs a loss for verification.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # arithmetic sugar; scalars are coerced to the tensor's dtype so float32
    # graphs do not silently upcast
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)


def constant(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr)


def variable(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=True)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data, parents, vjp):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
    return Tensor(data)


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to `shape` (composed of primitives)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    out = a.data + b.data

    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    out = a.data - b.data

    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(neg(g), b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    out = a.data * b.data

    def vjp(g):
        return _sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)

    return _make(out, (a, b), vjp)


def div(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    out = a.data / b.data

    def vjp(g):
        ga = div(g, b)
        gb = neg(mul(ga, div(a, b)))
        return _sum_to(ga, a.shape), _sum_to(gb, b.shape)

    return _make(out, (a, b), vjp)


def neg(a):
    return _make(-a.data, (a,), lambda g: (neg(g),))


def pow_const(a, p):
    p = float(p)
    out = a.data**p

    def vjp(g):
        return (mul(g, mul(constant(np.asarray(p, dtype=a.dtype)), pow_const(a, p - 1.0))),)

    return _make(out, (a,), vjp)


def exp(a):
    res = _make(np.exp(a.data), (a,), None)
    if res.requires_grad:
        res._vjp = lambda g: (mul(g, res),)
    return res


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a):
    res = _make(np.sqrt(a.data), (a,), None)
    if res.requires_grad:
        res._vjp = lambda g: (div(g, mul(constant(np.asarray(2.0, dtype=a.dtype)), res)),)
    return res


def sin(a):
    return _make(np.sin(a.data), (a,), lambda g: (mul(g, cos(a)),))


def cos(a):
    return _make(np.cos(a.data), (a,), lambda g: (neg(mul(g, sin(a))),))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    res = _make(_sigmoid_np(np.asarray(a.data, dtype=a.dtype)), (a,), None)
    if res.requires_grad:
        one = constant(np.asarray(1.0, dtype=a.dtype))
        res._vjp = lambda g: (mul(g, mul(res, sub(one, res))),)
    return res


def softplus(a):
    # max(x,0) + log1p(exp(-|x|)): overflow-free for any magnitude
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        return (mul(g, sigmoid(a)),)

    return _make(out, (a,), vjp)


def leaky_relu(a, slope=0.0):
    mask = np.where(a.data > 0, np.asarray(1.0, dtype=a.dtype), np.asarray(slope, dtype=a.dtype))
    out = a.data * mask

    def vjp(g):
        return (mul(g, constant(mask)),)

    return _make(out, (a,), vjp)


def relu(a):
    return leaky_relu(a, 0.0)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError("matmul expects 2-D operands")
    out = a.data @ b.data

    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make(out, (a, b), vjp)


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inv),)

    return _make(out, (a,), vjp)


def reshape(a, shape):
    out = np.reshape(a.data, shape)

    def vjp(g):
        return (reshape(g, a.shape),)

    return _make(out, (a,), vjp)


def sum_(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            gg = reshape(g, (1,) * a.ndim)
        elif not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            kshape = list(a.shape)
            for i in ax:
                kshape[i % a.ndim] = 1
            gg = reshape(g, tuple(kshape))
        else:
            gg = g
        return (broadcast_to(gg, a.shape),)

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis=axis, keepdims=keepdims), constant(np.asarray(1.0 / n, dtype=a.dtype)))


def broadcast_to(a, shape):
    out = np.broadcast_to(a.data, shape)

    def vjp(g):
        return (_sum_to(g, a.shape),)

    return _make(out, (a,), vjp)


def take(a, idx):
    """Advanced (integer-array) indexing; adjoint is scatter-add."""
    out = a.data[idx]

    def vjp(g):
        return (scatter_add(g, idx, a.shape),)

    return _make(out, (a,), vjp)


def scatter_add(a, idx, shape):
    out = np.zeros(shape, dtype=a.dtype)
    np.add.at(out, idx, a.data)

    def vjp(g):
        return (take(g, idx),)

    return _make(out, (a,), vjp)


def slice_(a, key):
    """Basic slicing (ints, slices, ellipsis); adjoint pads with zeros."""
    out = a.data[key]

    def vjp(g):
        return (unslice(g, key, a.shape),)

    return _make(out, (a,), vjp)


def unslice(a, key, shape):
    out = np.zeros(shape, dtype=a.dtype)
    out[key] += a.data

    def vjp(g):
        return (slice_(g, key),)

    return _make(out, (a,), vjp)


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        grads = []
        for i, t in enumerate(tensors):
            key = [slice(None)] * out.ndim
            key[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(slice_(g, tuple(key)))
        return tuple(grads)

    return _make(out, tensors, vjp)


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# composite helpers


def square(a):
    return mul(a, a)


def norm(a, axis=None, keepdims=False):
    return sqrt(sum_(square(a), axis=axis, keepdims=keepdims))


# ---------------------------------------------------------------------------
# backward pass


def grad(output, wrt, create_graph=False):
    """Gradients of a scalar `output` w.r.t. each tensor in `wrt`.

    Tensors not reached by the graph get zero gradients.  With
    `create_graph=True` the returned tensors are differentiable again.
    """
    if output.size != 1:
        raise ContractError("grad expects a scalar output")
    wrt = list(wrt)

    # topological order over the requires_grad subgraph
    order = []
    seen = set()
    stack_ = [(output, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            stack_.append((p, False))

    grads = {id(output): constant(np.ones(output.shape, dtype=output.dtype))}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if not create_graph:
                pg = pg.detach()
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else add(prev, pg)

    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = constant(np.zeros(w.shape, dtype=w.dtype))
        elif not create_graph:
            g = g.detach()
        out.append(g)
    return out
