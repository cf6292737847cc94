"""Tape-free reverse-mode automatic differentiation on numpy arrays.

Every differentiable operation records its parents and a vector-Jacobian
product (VJP). The VJPs are themselves written with differentiable
operations, so ``grad(..., create_graph=True)`` returns gradients that can be
differentiated again. That is what the gradient-penalty term of the critic
needs: the penalty depends on the input-gradient of the critic, and its own
gradient with respect to the critic's weights is a second-order quantity.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()

CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite value produced by op {op!r}")


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.enabled = mode
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    __slots__ = ("value", "requires_grad", "_parents", "_vjp", "op")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    out = Tensor(value)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out.op = op
    return out


def _reduce_to(v: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if v.shape == shape:
        return v
    extra = v.ndim - len(shape)
    if extra:
        v = v.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and v.shape[i] != 1)
    if axes:
        v = v.sum(axis=axes, keepdims=True)
    return v.reshape(shape)


# --- shape plumbing -------------------------------------------------------


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    if x.shape == tuple(shape):
        return x
    out = _node(_reduce_to(x.value, tuple(shape)), (x,), "sum_to")
    if out.requires_grad:
        out._vjp = lambda g: (broadcast_to(g, x.shape),)
    return out


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    if x.shape == tuple(shape):
        return x
    out = _node(np.broadcast_to(x.value, shape).copy(), (x,), "broadcast_to")
    if out.requires_grad:
        out._vjp = lambda g: (sum_to(g, x.shape),)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = _node(x.value.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        out._vjp = lambda g: (reshape(g, x.shape),)
    return out


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _node(x.value.T, (x,), "transpose")
    if out.requires_grad:
        out._vjp = lambda g: (transpose(g),)
    return out


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    out = _node(np.array(x.value[idx]), (x,), "getitem")
    if out.requires_grad:
        out._vjp = lambda g: (scatter(g, idx, x.shape),)
    return out


def scatter(g: Tensor, idx, shape) -> Tensor:
    """Adjoint of ``getitem``: a zero tensor of ``shape`` with ``g`` added at ``idx``."""
    g = as_tensor(g)
    z = np.zeros(shape)
    np.add.at(z, idx, g.value)
    out = _node(z, (g,), "scatter")
    if out.requires_grad:
        out._vjp = lambda gg: (getitem(gg, idx),)
    return out


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    value = np.concatenate([x.value for x in xs], axis=axis)
    out = _node(value, xs, "concat")
    if out.requires_grad:
        ax = axis % value.ndim
        bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

        def vjp(g):
            grads = []
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                sl = [slice(None)] * value.ndim
                sl[ax] = slice(int(lo), int(hi))
                grads.append(getitem(g, tuple(sl)))
            return tuple(grads)

        out._vjp = vjp
    return out


# --- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.value + b.value, (a, b), "add")
    if out.requires_grad:
        out._vjp = lambda g: (sum_to(g, a.shape), sum_to(g, b.shape))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.value - b.value, (a, b), "sub")
    if out.requires_grad:
        out._vjp = lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = _node(-a.value, (a,), "neg")
    if out.requires_grad:
        out._vjp = lambda g: (neg(g),)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.value * b.value, (a, b), "mul")
    if out.requires_grad:
        out._vjp = lambda g: (
            sum_to(mul(g, b), a.shape) if a.requires_grad else None,
            sum_to(mul(g, a), b.shape) if b.requires_grad else None,
        )
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.value / b.value, (a, b), "div")
    if out.requires_grad:
        out._vjp = lambda g: (
            sum_to(div(g, b), a.shape) if a.requires_grad else None,
            sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None,
        )
    return out


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = _node(a.value**p, (a,), "power")
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, mul(p, power(a, p - 1.0))),)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.value @ b.value, (a, b), "matmul")
    if out.requires_grad:
        out._vjp = lambda g: (
            matmul(g, transpose(b)) if a.requires_grad else None,
            matmul(transpose(a), g) if b.requires_grad else None,
        )
    return out


# --- reductions -----------------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _node(np.asarray(x.value.sum(axis=axis, keepdims=keepdims)), (x,), "sum")
    if out.requires_grad:
        kept = np.sum(x.value, axis=axis, keepdims=True).shape

        out._vjp = lambda g: (broadcast_to(reshape(g, kept), x.shape),)
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(count))


def cumsum(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _node(np.cumsum(x.value, axis=axis), (x,), "cumsum")
    if out.requires_grad:
        out._vjp = lambda g: (rcumsum(g, axis),)
    return out


def rcumsum(x, axis: int = -1) -> Tensor:
    """Reverse cumulative sum: ``out[i] = sum(x[i:])`` along ``axis``."""
    x = as_tensor(x)
    value = np.flip(np.cumsum(np.flip(x.value, axis=axis), axis=axis), axis=axis)
    out = _node(value, (x,), "rcumsum")
    if out.requires_grad:
        out._vjp = lambda g: (cumsum(g, axis),)
    return out


# --- elementwise nonlinearities --------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.value)
    out = _node(y, (x,), "exp")
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, exp(x) if is_grad_enabled() else Tensor(y)),)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.value)
    out = _node(y, (x,), "log")
    if out.requires_grad:
        out._vjp = lambda g: (div(g, x),)
    return out


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.value)
    out = _node(y, (x,), "sqrt")
    if out.requires_grad:
        out._vjp = lambda g: (div(mul(g, 0.5), sqrt(x) if is_grad_enabled() else Tensor(y)),)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    out = _node(y, (x,), "tanh")
    if out.requires_grad:

        def vjp(g):
            t = tanh(x) if is_grad_enabled() else Tensor(y)
            return (mul(g, 1.0 - t * t),)

        out._vjp = vjp
    return out


def sigmoid(x) -> Tensor:
    return 1.0 / (1.0 + exp(-as_tensor(x)))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    # The slope mask is piecewise constant, so its own derivative is zero a.e.
    x = as_tensor(x)
    mask = np.where(x.value > 0, 1.0, slope)
    out = _node(x.value * mask, (x,), "leaky_relu")
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, mask),)
    return out


def relu(x) -> Tensor:
    return leaky_relu(x, 0.0)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shift = Tensor(np.max(x.value, axis=axis, keepdims=True))
    e = exp(x - shift)
    return e / tsum(e, axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shift = Tensor(np.max(x.value, axis=axis, keepdims=True))
    z = x - shift
    return z - log(tsum(exp(z), axis=axis, keepdims=True))


# --- differentiation ------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def grad(
    output: Tensor,
    inputs: Iterable[Tensor],
    grad_output: Tensor | np.ndarray | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to ``inputs``.

    ``output`` must be a scalar unless ``grad_output`` is given. Inputs not
    reached from ``output`` get zero gradients. With ``create_graph=True``
    the returned tensors remain connected to the graph.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.value.size != 1:
            raise ValueError(f"grad of non-scalar output with shape {output.shape} needs grad_output")
        grad_output = np.ones_like(output.value)
    keep = {id(t) for t in inputs}
    grads: dict[int, Tensor] = {id(output): as_tensor(grad_output)}
    if output.requires_grad:
        with set_grad_enabled(create_graph):
            for node in reversed(_topological_order(output)):
                g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
                if g is None or node._vjp is None:
                    continue
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    return [grads.get(id(t), Tensor(np.zeros_like(t.value))) for t in inputs]
