"""Reverse-mode graph engine plus forward-mode dual numbers.

Training gradients come from a define-by-run graph of ``Node`` objects:
each operation records its inputs and a VJP closure, and ``backward``
replays the tape in reverse topological order.  Spatial derivatives of
network outputs (first and second order along a direction) come from
``Dual`` numbers whose components may themselves be graph nodes, so a
single reverse pass through a dual-augmented graph differentiates the
PDE residual with respect to the parameters.

All numeric data is float64.  Graphs are rebuilt every step; nodes are
immutable once created except for the ``grad`` slot written by
``backward``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "tensor",
    "Node",
    "Dual",
    "ShapeError",
    "record",
    "constant",
    "parameter",
    "backward",
    "directional_derivative",
    "memoized_graph",
    "add", "sub", "mul", "div", "neg", "matmul", "concat",
    "sin", "cos", "exp", "tanh", "sigmoid", "square", "softplus",
    "powi", "reshape", "transpose", "sum_", "mean_",
]


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


def tensor(data, check: bool = True) -> np.ndarray:
    """Coerce ``data`` to a float64 ndarray, rejecting NaN/Inf when checked."""
    arr = np.asarray(data, dtype=np.float64)
    if check and arr.size and not np.isfinite(arr).all():
        raise ValueError("tensor contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Graph nodes
# ---------------------------------------------------------------------------

class Node:
    """One recorded value in the computation graph.

    ``inputs`` holds the parent nodes, ``_vjp`` maps the output gradient
    to a tuple of input gradients.  ``grad`` is populated by ``backward``.
    """

    __slots__ = ("value", "op", "inputs", "grad", "is_param", "name", "_vjp")

    def __init__(self, value, op="leaf", inputs=(), vjp=None,
                 is_param=False, name=None):
        self.value = value
        self.op = op
        self.inputs = inputs
        self._vjp = vjp
        self.grad = None
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or self.op
        return f"Node({tag}, shape={self.value.shape})"

    # Arithmetic operators defer to the generic dispatch functions below so
    # that mixed Node/Dual/ndarray expressions work uniformly.
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

    def __pow__(self, n):
        return powi(self, n)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, name=None) -> Node:
    return Node(tensor(data), op="const", name=name)


def parameter(data, name: str) -> Node:
    return Node(tensor(data), op="param", is_param=True, name=name)


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(tensor(x), op="const")


# Per-thread memo table for common-subexpression sharing within one graph.
# Keyed on (op tag, input node ids, static args); the table holds strong
# references so node ids stay valid for its lifetime.
_MEMO = threading.local()


@contextmanager
def memoized_graph():
    """Share identical op applications while building one graph.

    Inside this context, applying the same op to the same nodes returns
    the previously recorded node instead of recomputing.  Used by the
    PDE-residual path where the two coordinate directions share most of
    their subexpressions.
    """
    prev = getattr(_MEMO, "table", None)
    _MEMO.table = {}
    try:
        yield
    finally:
        _MEMO.table = prev


def _make(op, inputs, value_fn, vjp, key_extra=()):
    table = getattr(_MEMO, "table", None)
    if table is not None:
        key = (op, tuple(id(n) for n in inputs), key_extra)
        hit = table.get(key)
        if hit is not None:
            return hit
    node = Node(value_fn(), op=op, inputs=inputs, vjp=vjp)
    if table is not None:
        table[key] = node
    return node


# ---------------------------------------------------------------------------
# Broadcasting (leading-axis batch only) and its adjoint
# ---------------------------------------------------------------------------

def _check_broadcast(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    try:
        out = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}") from None
    # restrict to leading-axis broadcast: the smaller operand must equal a
    # trailing slice of the output (scalars always pass)
    for s in (sa, sb):
        if s != out and s != out[len(out) - len(s):]:
            raise ShapeError(
                f"{op}: only leading-axis broadcast supported, got {sa} and {sb}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# Primitive ops: forward + VJP pairs on Nodes
# ---------------------------------------------------------------------------

def _node_add(a, b):
    _check_broadcast("add", a.value, b.value)

    def vjp(g, out, av, bv):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _make("add", (a, b), lambda: a.value + b.value, vjp)


def _node_sub(a, b):
    _check_broadcast("sub", a.value, b.value)

    def vjp(g, out, av, bv):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return _make("sub", (a, b), lambda: a.value - b.value, vjp)


def _node_mul(a, b):
    _check_broadcast("mul", a.value, b.value)

    def vjp(g, out, av, bv):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make("mul", (a, b), lambda: a.value * b.value, vjp)


def _node_div(a, b):
    _check_broadcast("div", a.value, b.value)

    def vjp(g, out, av, bv):
        return (_unbroadcast(g / bv, av.shape),
                _unbroadcast(-g * out / bv, bv.shape))

    return _make("div", (a, b), lambda: a.value / b.value, vjp)


def _node_neg(a):
    def vjp(g, out, av):
        return (-g,)

    return _make("neg", (a,), lambda: -a.value, vjp)


def _node_matmul(a, b):
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def vjp(g, out, av, bv):
        return g @ bv.T, av.T @ g

    return _make("matmul", (a, b), lambda: a.value @ b.value, vjp)


def _node_concat(a, b, axis):
    av, bv = a.value, b.value
    if av.ndim != bv.ndim:
        raise ShapeError(f"concat: rank mismatch {av.shape} and {bv.shape}")

    split = av.shape[axis]

    def vjp(g, out, av, bv):
        ga, gb = np.split(g, [split], axis=axis)
        return np.ascontiguousarray(ga), np.ascontiguousarray(gb)

    return _make("concat", (a, b),
                 lambda: np.concatenate([a.value, b.value], axis=axis),
                 vjp, key_extra=(axis,))


def _unary(op, fn, dfn):
    """Build a unary node op where dfn(g, out, x) returns the input grad."""

    def build(a):
        def vjp(g, out, av):
            return (dfn(g, out, av),)

        return _make(op, (a,), lambda: fn(a.value), vjp)

    return build


_node_sin = _unary("sin", np.sin, lambda g, out, x: g * np.cos(x))
_node_cos = _unary("cos", np.cos, lambda g, out, x: -g * np.sin(x))
_node_exp = _unary("exp", np.exp, lambda g, out, x: g * out)
_node_tanh = _unary("tanh", np.tanh, lambda g, out, x: g * (1.0 - out * out))
_node_square = _unary("square", np.square, lambda g, out, x: 2.0 * g * x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


_node_sigmoid = _unary("sigmoid", lambda x: _sigmoid(np.asarray(x)),
                       lambda g, out, x: g * out * (1.0 - out))
_node_softplus = _unary("softplus", lambda x: _softplus(np.asarray(x)),
                        lambda g, out, x: g * _sigmoid(np.asarray(x)))


def _node_powi(a, n):
    if not isinstance(n, int):
        raise TypeError(f"powi: exponent must be an integer, got {n!r}")

    def vjp(g, out, av):
        return (g * n * av ** (n - 1),)

    return _make("powi", (a,), lambda: a.value ** n, vjp, key_extra=(n,))


def _node_transpose(a):
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.value.shape}")

    def vjp(g, out, av):
        return (g.T,)

    return _make("transpose", (a,), lambda: a.value.T, vjp)


def _node_reshape(a, shape):
    shape = tuple(shape)
    old = a.value.shape

    def vjp(g, out, av):
        return (g.reshape(old),)

    return _make("reshape", (a,), lambda: a.value.reshape(shape), vjp,
                 key_extra=(shape,))


def _node_sum(a, axis, keepdims):
    def vjp(g, out, av):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _make("sum", (a,), lambda: a.value.sum(axis=axis, keepdims=keepdims),
                 vjp, key_extra=(axis, keepdims))


def _node_mean(a, axis, keepdims):
    n = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g, out, av):
        if axis is None:
            return (np.broadcast_to(g / n, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, av.shape).copy(),)

    return _make("mean", (a,), lambda: a.value.mean(axis=axis, keepdims=keepdims),
                 vjp, key_extra=(axis, keepdims))


_RECORDABLE = {
    "add": lambda ins: _node_add(*ins),
    "sub": lambda ins: _node_sub(*ins),
    "mul": lambda ins: _node_mul(*ins),
    "div": lambda ins: _node_div(*ins),
    "neg": lambda ins: _node_neg(*ins),
    "matmul": lambda ins: _node_matmul(*ins),
    "sin": lambda ins: _node_sin(*ins),
    "cos": lambda ins: _node_cos(*ins),
    "exp": lambda ins: _node_exp(*ins),
    "tanh": lambda ins: _node_tanh(*ins),
    "sigmoid": lambda ins: _node_sigmoid(*ins),
    "square": lambda ins: _node_square(*ins),
    "softplus": lambda ins: _node_softplus(*ins),
    "sum": lambda ins: _node_sum(ins[0], None, False),
    "mean": lambda ins: _node_mean(ins[0], None, False),
}


def record(op_tag, inputs, forward_fn=None):
    """Record one operation on already-built nodes and extend the graph.

    ``forward_fn`` optionally overrides the stored forward computation;
    shape validation and the VJP still come from the registered op.
    """
    if op_tag not in _RECORDABLE:
        raise ValueError(f"unknown op tag {op_tag!r}")
    nodes = tuple(_as_node(x) for x in inputs)
    out = _RECORDABLE[op_tag](nodes)
    if forward_fn is not None:
        val = tensor(forward_fn(*(n.value for n in nodes)), check=False)
        if val.shape != out.value.shape:
            raise ShapeError(
                f"{op_tag}: forward_fn produced shape {val.shape}, "
                f"expected {out.value.shape}")
        out.value = val
    return out


def fused_node(op, inputs, forward, vjp):
    """Register-free entry for fused ops (used by the model kernels)."""
    return _make(op, tuple(inputs), forward, vjp)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Node):
    """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

    Returns a dict mapping each parameter node to its gradient array.
    Repeated calls on the same graph produce identical results.
    """
    if not isinstance(loss, Node):
        raise TypeError("backward expects a Node")
    if loss.value.size != 1:
        raise ValueError(
            f"backward expects a scalar loss, got shape {loss.value.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            node.grad = np.zeros_like(node.value)
            continue
        node.grad = g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g, node.value, *(p.value for p in node.inputs))
        for parent, pg in zip(node.inputs, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    return {n: n.grad for n in topo if n.is_param}


# ---------------------------------------------------------------------------
# Forward-mode duals
# ---------------------------------------------------------------------------

class Dual:
    """One directional-derivative channel: value plus tangent.

    Components may be floats, arrays, Nodes, or further Duals; nesting a
    Dual inside a Dual yields second directional derivatives.  A tangent
    stored as the literal float ``0.0`` is treated as structurally zero
    and dropped from products, keeping nested graphs small.
    """

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

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

    def __pow__(self, n):
        return powi(self, n)

    def __matmul__(self, other):
        return matmul(self, other)

    def _unsupported(self, op):
        raise NotImplementedError(f"op {op!r} is not supported on Dual values")

    def __abs__(self):
        self._unsupported("abs")

    def __floordiv__(self, other):
        self._unsupported("floordiv")

    def __mod__(self, other):
        self._unsupported("mod")


def _is_zero(t):
    return isinstance(t, float) and t == 0.0


def _parts(x):
    if isinstance(x, Dual):
        return x.primal, x.tangent
    return x, 0.0


def _tadd(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return add(a, b)


def _tsub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return neg(b)
    return sub(a, b)


def _tmul(t, v):
    if _is_zero(t):
        return 0.0
    return mul(t, v)


# ---------------------------------------------------------------------------
# Generic dispatch: ndarray / scalar / Node / Dual
# ---------------------------------------------------------------------------

def _dispatch2(a, b, dual_rule, node_rule, np_rule):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return dual_rule(a, b)
    if isinstance(a, Node) or isinstance(b, Node):
        return node_rule(_as_node(a), _as_node(b))
    return np_rule(a, b)


def add(a, b):
    return _dispatch2(
        a, b,
        lambda a, b: (lambda pa, ta, pb, tb: Dual(add(pa, pb), _tadd(ta, tb)))(*_parts(a), *_parts(b)),
        _node_add,
        lambda a, b: np.add(a, b),
    )


def sub(a, b):
    return _dispatch2(
        a, b,
        lambda a, b: (lambda pa, ta, pb, tb: Dual(sub(pa, pb), _tsub(ta, tb)))(*_parts(a), *_parts(b)),
        _node_sub,
        lambda a, b: np.subtract(a, b),
    )


def mul(a, b):
    return _dispatch2(
        a, b,
        lambda a, b: _dual_mul(a, b),
        _node_mul,
        lambda a, b: np.multiply(a, b),
    )


def _dual_mul(a, b):
    pa, ta = _parts(a)
    pb, tb = _parts(b)
    return Dual(mul(pa, pb), _tadd(_tmul(ta, pb), _tmul(tb, pa)))


def div(a, b):
    return _dispatch2(
        a, b,
        lambda a, b: _dual_div(a, b),
        _node_div,
        lambda a, b: np.divide(a, b),
    )


def _dual_div(a, b):
    pa, ta = _parts(a)
    pb, tb = _parts(b)
    q = div(pa, pb)
    # (ta - q*tb) / pb
    num = _tsub(ta, _tmul(tb, q))
    if _is_zero(num):
        return Dual(q, 0.0)
    return Dual(q, div(num, pb))


def neg(a):
    if isinstance(a, Dual):
        p, t = _parts(a)
        return Dual(neg(p), 0.0 if _is_zero(t) else neg(t))
    if isinstance(a, Node):
        return _node_neg(a)
    return np.negative(a)


def matmul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _parts(a)
        pb, tb = _parts(b)
        tan = _tadd(
            matmul(ta, pb) if not _is_zero(ta) else 0.0,
            matmul(pa, tb) if not _is_zero(tb) else 0.0,
        )
        return Dual(matmul(pa, pb), tan)
    if isinstance(a, Node) or isinstance(b, Node):
        return _node_matmul(_as_node(a), _as_node(b))
    return a @ b


def concat(a, b, axis=1):
    if isinstance(a, Dual) or isinstance(b, Dual):
        raise NotImplementedError("op 'concat' is not supported on Dual values")
    if isinstance(a, Node) or isinstance(b, Node):
        return _node_concat(_as_node(a), _as_node(b), axis)
    return np.concatenate([a, b], axis=axis)


def _unary_dispatch(np_fn, node_fn, dual_rule):
    def op(x):
        if isinstance(x, Dual):
            return dual_rule(x)
        if isinstance(x, Node):
            return node_fn(x)
        return np_fn(x)

    return op


sin = _unary_dispatch(
    np.sin, _node_sin,
    lambda x: Dual(sin(x.primal), _tmul(x.tangent, cos(x.primal))))
cos = _unary_dispatch(
    np.cos, _node_cos,
    lambda x: Dual(cos(x.primal), neg(_tmul(x.tangent, sin(x.primal)))
                   if not _is_zero(x.tangent) else 0.0))
exp = _unary_dispatch(
    np.exp, _node_exp,
    lambda x: (lambda e: Dual(e, _tmul(x.tangent, e)))(exp(x.primal)))
tanh = _unary_dispatch(
    np.tanh, _node_tanh,
    lambda x: (lambda th: Dual(th, _tmul(x.tangent, sub(1.0, mul(th, th)))))(tanh(x.primal)))
sigmoid = _unary_dispatch(
    _sigmoid, _node_sigmoid,
    lambda x: (lambda s: Dual(s, _tmul(x.tangent, mul(s, sub(1.0, s)))))(sigmoid(x.primal)))
square = _unary_dispatch(
    np.square, _node_square,
    lambda x: Dual(square(x.primal), _tmul(x.tangent, mul(2.0, x.primal))))
softplus = _unary_dispatch(
    _softplus, _node_softplus,
    lambda x: Dual(softplus(x.primal), _tmul(x.tangent, sigmoid(x.primal))))


def powi(a, n):
    if not isinstance(n, int):
        raise TypeError(f"powi: exponent must be an integer, got {n!r}")
    if isinstance(a, Dual):
        p, t = _parts(a)
        if n == 0:
            return Dual(powi(p, 0), 0.0)
        return Dual(powi(p, n), _tmul(t, mul(float(n), powi(p, n - 1))))
    if isinstance(a, Node):
        return _node_powi(a, n)
    return np.power(a, n)


def reshape(a, shape):
    if isinstance(a, Dual):
        p, t = _parts(a)
        return Dual(reshape(p, shape), 0.0 if _is_zero(t) else reshape(t, shape))
    if isinstance(a, Node):
        return _node_reshape(a, shape)
    return np.reshape(a, shape)


def transpose(a):
    if isinstance(a, Dual):
        p, t = _parts(a)
        return Dual(transpose(p), 0.0 if _is_zero(t) else transpose(t))
    if isinstance(a, Node):
        return _node_transpose(a)
    return np.transpose(a)


def sum_(a, axis=None, keepdims=False):
    if isinstance(a, Dual):
        p, t = _parts(a)
        return Dual(sum_(p, axis, keepdims),
                    0.0 if _is_zero(t) else sum_(t, axis, keepdims))
    if isinstance(a, Node):
        return _node_sum(a, axis, keepdims)
    return np.sum(a, axis=axis, keepdims=keepdims)


def mean_(a, axis=None, keepdims=False):
    if isinstance(a, Dual):
        p, t = _parts(a)
        return Dual(mean_(p, axis, keepdims),
                    0.0 if _is_zero(t) else mean_(t, axis, keepdims))
    if isinstance(a, Node):
        return _node_mean(a, axis, keepdims)
    return np.mean(a, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# Directional derivatives
# ---------------------------------------------------------------------------

def _scalarize(x):
    if isinstance(x, Node):
        x = x.value
    return float(np.asarray(x).reshape(()))


def directional_derivative(f, x, direction, order=1):
    """Derivative of scalar ``f`` at ``x`` along ``direction``.

    Order 1 returns the gradient-direction inner product; order 2 returns
    the direction-Hessian-direction quadratic form via nested duals.
    """
    x = tensor(x)
    direction = tensor(direction)
    if x.shape != direction.shape:
        raise ShapeError(
            f"directional_derivative: direction shape {direction.shape} "
            f"does not match input shape {x.shape}")
    if order == 1:
        out = f(Dual(x, direction))
        if not isinstance(out, Dual):
            return 0.0
        return _scalarize(out.tangent)
    if order == 2:
        out = f(Dual(Dual(x, direction), Dual(direction, 0.0)))
        if not isinstance(out, Dual) or not isinstance(out.tangent, Dual):
            return 0.0
        return _scalarize(out.tangent.tangent)
    raise ValueError(f"order must be 1 or 2, got {order}")
