"""A small reverse-mode autodiff engine over numpy arrays.

Every backward rule is written in terms of the engine's own primitives, so
the gradients produced by :func:`backward` are ordinary graph nodes and can
be differentiated again. That closure property is what makes exact
meta-gradients through unrolled SGD steps possible (reverse-over-reverse).

Reductions accumulate in float64 and cast back to the operand dtype, so the
float32 training path keeps well-conditioned sums.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import convkernels

_grad_enabled = True

#: When True every op asserts its output is finite. Costs a pass over each
#: result; intended for tests and debugging sessions.
debug_checks = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A value in the computation graph wrapping an f32/f64 ndarray.

    Tensors are immutable from the graph's point of view: ops return new
    tensors and never write through their inputs.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_rule")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._rule = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar; scalars are wrapped as constants of the same dtype
    def __add__(self, other):
        return add(self, _as_tensor(other, self.data.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.data.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.data.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.data.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.data.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, rule, track: bool) -> Tensor:
    if debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    out = Tensor(data)
    if track and _grad_enabled:
        out.requires_grad = True
        out._parents = parents
        out._rule = rule
    return out


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.data.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.data.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.data.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    ashape, bshape = a.data.shape, b.data.shape

    def rule(g):
        return _unbroadcast(g, ashape), _unbroadcast(g, bshape)

    return _make(a.data + b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def sub(a: Tensor, b: Tensor) -> Tensor:
    ashape, bshape = a.data.shape, b.data.shape

    def rule(g):
        return _unbroadcast(g, ashape), _unbroadcast(neg(g), bshape)

    return _make(a.data - b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def neg(a: Tensor) -> Tensor:
    def rule(g):
        return (neg(g),)

    return _make(-a.data, (a,), rule, a.requires_grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ashape, bshape = a.data.shape, b.data.shape

    def rule(g):
        ga = _unbroadcast(mul(g, b), ashape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), bshape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def div(a: Tensor, b: Tensor) -> Tensor:
    ashape, bshape = a.data.shape, b.data.shape

    def rule(g):
        ga = _unbroadcast(div(g, b), ashape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), bshape)
        return ga, gb

    return _make(a.data / b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def rule(g):
        return (mul(g, pow_const(a, p - 1.0) * p),)

    return _make(a.data**p, (a,), rule, a.requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")

    def rule(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over a shared leading axis: (T, N, F) @ (T, F, O)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError("bmm expects 3-D operands")

    def rule(g):
        ga = bmm(g, transpose(b, (0, 2, 1))) if a.requires_grad else None
        gb = bmm(transpose(a, (0, 2, 1)), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), rule, a.requires_grad or b.requires_grad)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(int(i) for i in np.argsort(axes))

    def rule(g):
        return (transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), rule, a.requires_grad)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def rule(g):
        return (reshape(g, orig),)

    return _make(a.data.reshape(shape), (a,), rule, a.requires_grad)


def broadcast_to(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def rule(g):
        return (_unbroadcast(g, orig),)

    return _make(np.broadcast_to(a.data, shape), (a,), rule, a.requires_grad)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.data.dtype == np.float64:
        data = a.data.sum(axis=axis, keepdims=keepdims)
    else:
        data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(
            a.data.dtype, copy=False
        )
    if not isinstance(data, np.ndarray):  # 0-d result
        data = np.asarray(data, dtype=a.data.dtype)
    orig = a.data.shape

    def rule(g):
        if axis is None:
            gg = reshape(g, (1,) * len(orig)) if orig else g
        elif not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            kshape = list(orig)
            for ax in axes:
                kshape[ax] = 1
            gg = reshape(g, tuple(kshape))
        else:
            gg = g
        return (broadcast_to(gg, orig),)

    return _make(data, (a,), rule, a.requires_grad)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def relu(a: Tensor) -> Tensor:
    mask = Tensor((a.data > 0).astype(a.data.dtype))

    def rule(g):
        return (mul(g, mask),)

    return _make(np.maximum(a.data, 0), (a,), rule, a.requires_grad)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = Tensor(((a.data > lo) & (a.data < hi)).astype(a.data.dtype))

    def rule(g):
        return (mul(g, mask),)

    return _make(np.clip(a.data, lo, hi), (a,), rule, a.requires_grad)


def arccos(a: Tensor) -> Tensor:
    def rule(g):
        one = _as_tensor(1.0, a.data.dtype)
        deriv = neg(pow_const(sub(one, mul(a, a)), -0.5))
        return (mul(g, deriv),)

    return _make(np.arccos(a.data), (a,), rule, a.requires_grad)


def conv3x3(x: Tensor, w: Tensor) -> Tensor:
    """Grouped 3x3 same-size correlation.

    ``x`` is (T, N, H, W, C) and ``w`` is (T, 3, 3, C_in, C_out); group t of
    the batch is correlated with filter bank t. T=1 is a plain convolution.
    """

    def rule(g):
        gx = conv3x3(g, flipswap(w)) if x.requires_grad else None
        gw = conv3x3_dw(x, g) if w.requires_grad else None
        return gx, gw

    return _make(
        convkernels.conv3x3_grouped(x.data, w.data),
        (x, w),
        rule,
        x.requires_grad or w.requires_grad,
    )


def conv3x3_dw(x: Tensor, gy: Tensor) -> Tensor:
    """Adjoint of conv3x3 in its filter argument (returns filter-shaped tensors)."""

    def rule(g):
        ggx = conv3x3(gy, flipswap(g)) if x.requires_grad else None
        ggy = conv3x3(x, g) if gy.requires_grad else None
        return ggx, ggy

    return _make(
        convkernels.conv3x3_dw_grouped(x.data, gy.data),
        (x, gy),
        rule,
        x.requires_grad or gy.requires_grad,
    )


def flipswap(w: Tensor) -> Tensor:
    """Rotate each group's 3x3 filter bank 180 degrees and swap its channel axes.

    With this transform, conv3x3(gy, flipswap(w)) is the adjoint of
    conv3x3(., w); the transform is its own inverse.
    """

    def rule(g):
        return (flipswap(g),)

    return _make(
        np.ascontiguousarray(w.data[:, ::-1, ::-1].transpose(0, 1, 2, 4, 3)),
        (w,),
        rule,
        w.requires_grad,
    )


# ------------------------------------------------------------------- engine


def _topo_order(root: Tensor) -> list:
    """Nodes of the grad-relevant subgraph, root first."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    order.reverse()
    return order


def backward(root: Tensor, wrt, create_graph: bool = False) -> list:
    """Gradients of a scalar ``root`` with respect to each tensor in ``wrt``.

    With ``create_graph`` the returned gradients are differentiable graph
    nodes; otherwise graph recording is suspended during the sweep. Tensors
    in ``wrt`` that the root does not depend on get zero gradients.
    """
    if root.data.size != 1:
        raise ValueError("backward expects a scalar root")
    wrt = list(wrt)
    wrt_ids = {id(t) for t in wrt}
    order = _topo_order(root)
    grads: dict = {id(root): Tensor(np.ones_like(root.data))}
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in order:
            g = grads.get(id(node))
            if g is None:
                continue
            if id(node) not in wrt_ids:
                del grads[id(node)]
            if node._rule is None:
                continue
            for parent, pgrad in zip(node._parents, node._rule(g)):
                if pgrad is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pgrad if prev is None else add(prev, pgrad)
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out
