"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` that requires gradients remembers the primitive that
produced it, its parents and a closure mapping the output cotangent to one
cotangent per parent.  :func:`backward` linearises that graph into a
:class:`GradTape` (parents before children) and replays it in reverse.

Broadcasting is deliberately narrow.  The second operand of a binary op may
be a scalar, a per-channel vector (matched against axis 1), a tensor missing
only the leading batch axis, or a tensor of identical shape.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ContractError, NumericsError, ShapeError

_ids = itertools.count()
_state = threading.local()

_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for evaluation)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _finite(data, op):
    if not np.isfinite(data).all():
        raise NumericsError(f"non-finite value produced by {op}")
    return data


class Tensor:
    """Immutable row-major float64 array, optionally recorded for backward."""

    __slots__ = ("data", "requires_grad", "node_id", "op", "_parents", "_backward")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        _finite(arr, op)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids) if self.requires_grad else None
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    def __len__(self):
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    """Leaf tensor that participates in differentiation."""
    return Tensor(data, requires_grad=True)


def make_op(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of primitive ``op``.

    ``backward_fn`` receives the output cotangent (ndarray) and returns one
    cotangent (ndarray or None) per parent.
    """
    arr = np.asarray(data, dtype=np.float64)
    _finite(arr, op)
    arr.flags.writeable = False
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.node_id = next(_ids)
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t.node_id = None
        t._parents = ()
        t._backward = None
    return t


# -- broadcasting ---------------------------------------------------------

def _broadcast_view(a_shape, b):
    """Return (b reshaped for numpy broadcasting, reducer back to b.shape)."""
    bshape = b.shape
    if bshape == a_shape:
        return b.data, lambda g: g
    if b.size == 1:
        return b.data.reshape(()), lambda g: np.asarray(g.sum()).reshape(bshape)
    if len(a_shape) >= 2 and len(bshape) == 1 and bshape[0] == a_shape[1]:
        view = b.data.reshape((1, -1) + (1,) * (len(a_shape) - 2))
        axes = (0,) + tuple(range(2, len(a_shape)))
        return view, lambda g: g.sum(axis=axes)
    if len(a_shape) >= 2 and bshape == a_shape[1:]:
        return b.data, lambda g: g.sum(axis=0)
    raise ShapeError(f"cannot broadcast shape {bshape} against {a_shape}")


def _binary(a, b, op):
    a = as_tensor(a)
    b = as_tensor(b)
    bview, reduce_b = _broadcast_view(a.shape, b)
    return a, b, bview, reduce_b


# -- elementwise binary ops -------------------------------------------------

def add(a, b):
    a, b, bv, red = _binary(a, b, "add")
    out = a.data + bv
    return make_op(out, (a, b), lambda g: (g, red(g)), "add")


def sub(a, b):
    a, b, bv, red = _binary(a, b, "sub")
    out = a.data - bv
    return make_op(out, (a, b), lambda g: (g, red(-g)), "sub")


def mul(a, b):
    a, b, bv, red = _binary(a, b, "mul")
    ad = a.data
    out = ad * bv
    return make_op(out, (a, b), lambda g: (g * bv, red(g * ad)), "mul")


def div(a, b):
    a, b, bv, red = _binary(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / bv
    ad = a.data
    return make_op(out, (a, b), lambda g: (g / bv, red(-g * ad / (bv * bv))), "div")


# -- elementwise unary ops --------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gelu(a):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written via erf."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _SQRT_HALF))
    out = x * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make_op(out, (a,), backward, "gelu")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return make_op(out, (a,), lambda g: (g / x,), "log")


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "gelu": gelu,
    "relu": relu,
    "scale": scale,
}


def elementwise(op_kind, a, b=None):
    """Dispatch a named elementwise primitive.

    ``b`` is the second operand for binary ops and the factor for ``scale``.
    """
    try:
        fn = ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    if op_kind in ("gelu", "relu"):
        return fn(a)
    if b is None:
        raise ContractError(f"{op_kind} needs a second operand")
    return fn(a, b)


# -- reductions and shape ops -----------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape
    kept = [1 if i in axes else n for i, n in enumerate(shape)]

    def backward(g):
        return (np.broadcast_to(np.reshape(g, kept), shape),)

    return make_op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    out = a.data.reshape(shape)
    return make_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_op(out, (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a, index):
    a = as_tensor(a)
    out = np.array(a.data[index])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_op(out, (a,), backward, "getitem")


def _is_fancy(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, tuple(xs), backward, "concat")


def stack(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    n = len(xs)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_op(out, tuple(xs), backward, "stack")


# -- tape and backward ------------------------------------------------------

@dataclass
class GradTape:
    """Recorded primitive nodes in topological order (parents first)."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss):
        order = []
        seen = set()
        stack_ = [(loss, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
        return cls(order)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def backward(loss, wrt=None):
    """Reverse-mode pass from a scalar ``loss``.

    Returns ``{node_id: Tensor}`` holding the gradient of every
    requires-grad leaf reachable from ``loss``.  Tensors listed in ``wrt``
    are always present; unreachable ones receive zeros.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not attached to a gradient tape")
    tape = GradTape.from_loss(loss)
    cot = {id(loss): np.ones(loss.shape)}
    grads = {}
    for node in reversed(tape.nodes):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            grads[node.node_id] = np.reshape(g, node.shape)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in cot:
                cot[key] = cot[key] + pg
            else:
                cot[key] = np.array(pg, dtype=np.float64)
    result = {k: Tensor(v) for k, v in grads.items()}
    for t in wrt or ():
        if t.requires_grad and t.node_id not in result:
            result[t.node_id] = Tensor(np.zeros(t.shape))
    return result


def grad_check(f, x, eps=1e-5, coords=None):
    """Largest relative gap between analytic and central-difference gradients.

    The error at each coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``coords`` optionally restricts the check to a subset of flat indices.
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    loss = f(leaf)
    if loss.size != 1:
        raise ContractError(f"function must be scalar-valued, got shape {loss.shape}")
    if loss.requires_grad:
        analytic = backward(loss, wrt=[leaf])[leaf.node_id].data.reshape(-1)
    else:
        analytic = np.zeros(base.size)
    flat = base.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in indices:
            probe = flat.copy()
            probe[i] = flat[i] + eps
            up = f(Tensor(probe.reshape(base.shape))).item()
            probe[i] = flat[i] - eps
            down = f(Tensor(probe.reshape(base.shape))).item()
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
