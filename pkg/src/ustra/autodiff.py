"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to its nodes in creation
order, so a reverse sweep over the record list is a valid topological order
for backpropagation. Tapes carry no global state; call :meth:`Tape.reset`
between training steps or simply start a new one.

Values are rank-0, rank-1 or rank-2 numpy arrays. Binary elementwise ops
broadcast a row vector (or scalar) against a matrix and nothing more.

Example::

    tape = Tape()
    x = tape.variable(np.array([1.0, 2.0]))
    loss = ad.sum(ad.mul(x, x))
    grads = tape.backward(loss)   # {x: [2., 4.]}
"""
import builtins
import math

import numpy as np

from . import _kernels as K
from .errors import ContractError, DimensionError, DomainError, NumericError


class Node:
    """One recorded value in a computation graph."""

    __slots__ = ("tape", "kind", "value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, tape, kind, value, parents=(), backward_fn=None, requires_grad=False):
        self.tape = tape
        self.kind = kind
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.kind}, shape={self.value.shape})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a Node is not supported")
        return mul(self, 1.0 / other)


class Tape:
    """Records nodes; owns the backward sweep."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def constant(self, value):
        return Node(self, "const", np.asarray(value, dtype=np.float64))

    def variable(self, value):
        """A differentiable leaf. The array is copied."""
        node = Node(self, "leaf", np.array(value, dtype=np.float64), requires_grad=True)
        self.nodes.append(node)
        return node

    def record(self, kind, value, parents, backward_fn):
        needs = any(p.requires_grad for p in parents)
        node = Node(self, kind, value, parents, backward_fn if needs else None, needs)
        if needs:
            self.nodes.append(node)
        return node

    def reset(self):
        self.nodes = []

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None

    def backward(self, root):
        """Fill ``grad`` on every recorded node; return the leaf adjoints.

        Grads are cleared first so repeated calls give identical results.
        """
        if root.value.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.value.shape}")
        if root.tape is not self:
            raise ContractError("root belongs to a different tape")
        self.zero_grad()
        if not root.requires_grad:
            return {}
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        leaves = {}
        for node in self.nodes:
            if node.kind == "leaf":
                leaves[node] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return leaves


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a Node")


def _lift(x, tape):
    if isinstance(x, Node):
        return x
    return tape.constant(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind, a, b):
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {sa} and {sb} do not broadcast") from None


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} are incompatible")

    def back(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return tape.record("matmul", av @ bv, (a, b), back)


def transpose(x):
    def back(g):
        return (g.T,)

    return x.tape.record("transpose", x.value.T.copy(), (x,), back)


def outer(u, v):
    tape = _tape_of(u, v)
    u, v = _lift(u, tape), _lift(v, tape)
    if u.value.ndim != 1 or v.value.ndim != 1:
        raise DimensionError(f"outer: needs vectors, got {u.value.shape} and {v.value.shape}")
    uv, vv = u.value, v.value

    def back(g):
        return (g @ vv, g.T @ uv)

    return tape.record("outer", np.outer(uv, vv), (u, v), back)


def diag(v):
    """Embed a vector on the diagonal of a square matrix."""
    if v.value.ndim != 1:
        raise DimensionError(f"diag: needs a vector, got {v.value.shape}")

    def back(g):
        return (np.diagonal(g).copy(),)

    return v.tape.record("diag", np.diag(v.value), (v,), back)


def trace(x):
    xv = x.value
    if xv.ndim != 2 or xv.shape[0] != xv.shape[1]:
        raise DimensionError(f"trace: needs a square matrix, got {xv.shape}")

    def back(g):
        return (np.eye(xv.shape[0]) * g,)

    return x.tape.record("trace", np.array(np.trace(xv)), (x,), back)


# -- elementwise binary -------------------------------------------------------


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("add", a, b)
    sa, sb = a.value.shape, b.value.shape

    def back(g):
        return (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return tape.record("add", a.value + b.value, (a, b), back)


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("sub", a, b)
    sa, sb = a.value.shape, b.value.shape

    def back(g):
        return (_unbroadcast(g, sa), _unbroadcast(-g, sb))

    return tape.record("sub", a.value - b.value, (a, b), back)


def neg(x):
    return x.tape.record("neg", -x.value, (x,), lambda g: (-g,))


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value

    def back(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return tape.record("mul", av * bv, (a, b), back)


def logaddexp(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("logaddexp", a, b)
    out = np.logaddexp(a.value, b.value)
    wa = np.exp(a.value - out)
    wb = np.exp(b.value - out)

    def back(g):
        return (_unbroadcast(g * wa, a.value.shape), _unbroadcast(g * wb, b.value.shape))

    return tape.record("logaddexp", out, (a, b), back)


# -- elementwise unary --------------------------------------------------------


def sigmoid(x):
    out = K._pykernels._activate(x.value, 2)
    return x.tape.record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.value)
    return x.tape.record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x):
    xv = x.value
    return x.tape.record("relu", np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0),))


def max0(x):
    """max(x, 0) for scalars (hinge); same rule as relu."""
    xv = x.value
    return x.tape.record("max0", np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0),))


def exp(x):
    out = np.exp(x.value)
    return x.tape.record("exp", out, (x,), lambda g: (g * out,))


def log(x):
    xv = x.value
    if np.any(xv <= 0):
        raise DomainError(f"log of non-positive value (min {xv.min()!r})")
    return x.tape.record("log", np.log(xv), (x,), lambda g: (g / xv,))


def reciprocal(x):
    xv = x.value
    if np.any(xv == 0):
        raise DomainError("reciprocal of zero")
    return x.tape.record("reciprocal", 1.0 / xv, (x,), lambda g: (-g / (xv * xv),))


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    xv = x.value
    out = np.logaddexp(0.0, xv)
    s = K._pykernels._activate(xv, 2)
    return x.tape.record("softplus", out, (x,), lambda g: (g * s,))


def square(x):
    xv = x.value
    return x.tape.record("square", xv * xv, (x,), lambda g: (2.0 * g * xv,))


def clip(x, lo, hi):
    xv = x.value
    inside = (xv >= lo) & (xv <= hi)
    return x.tape.record("clip", np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


def softmax(x):
    """Softmax over each row of a matrix (a vector is one row)."""
    xv = x.value
    if xv.ndim == 1:
        out = K.softmax_rows(xv[None, :])[0]
        return x.tape.record(
            "softmax", out, (x,), lambda g: (K.softmax_rows_backward(out[None, :], g[None, :])[0],)
        )
    out = K.softmax_rows(xv)
    return x.tape.record("softmax", out, (x,), lambda g: (K.softmax_rows_backward(out, g),))


# -- shape --------------------------------------------------------------------


def concat(xs, axis=1):
    """Concatenate matrices along the feature axis (1) or row axis (0)."""
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    vals = [x.value for x in xs]
    if any(v.ndim != 2 for v in vals):
        raise DimensionError(f"concat: needs matrices, got {[v.shape for v in vals]}")
    other = 1 - axis
    if len({v.shape[other] for v in vals}) != 1:
        raise DimensionError(f"concat along axis {axis}: shapes {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def back(g):
        if axis == 1:
            return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(vals)))
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(vals)))

    return tape.record("concat", np.concatenate(vals, axis=axis), tuple(xs), back)


def rows(x, start, stop):
    xv = x.value
    n = xv.shape[0]

    def back(g):
        full = np.zeros_like(xv)
        full[start:stop] = g
        return (full,)

    if not 0 <= start <= stop <= n:
        raise DimensionError(f"rows[{start}:{stop}] out of range for {xv.shape}")
    return x.tape.record("rows", xv[start:stop], (x,), back)


def cols(x, start, stop):
    xv = x.value
    if xv.ndim != 2 or not 0 <= start <= stop <= xv.shape[1]:
        raise DimensionError(f"cols[{start}:{stop}] out of range for {xv.shape}")

    def back(g):
        full = np.zeros_like(xv)
        full[:, start:stop] = g
        return (full,)

    return x.tape.record("cols", xv[:, start:stop], (x,), back)


def reshape(x, shape):
    old = x.value.shape
    return x.tape.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def repeat_rows(x, n):
    """Repeat every row ``n`` times in place (row i -> rows i*n .. i*n+n-1)."""
    xv = x.value
    if xv.ndim != 2 or n < 1:
        raise DimensionError(f"repeat_rows: needs a matrix and n >= 1, got {xv.shape}, {n}")
    k, h = xv.shape

    def back(g):
        return (g.reshape(k, n, h).sum(axis=1),)

    return x.tape.record("repeat_rows", np.repeat(xv, n, axis=0), (x,), back)


# -- reductions ---------------------------------------------------------------


def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = x.value.shape
    return x.tape.record("sum", np.array(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x, axis):
    """Mean over rows (axis 0 -> 1 x m) or columns (axis 1 -> n x 1)."""
    xv = x.value
    n = xv.shape[axis]

    def back(g):
        return (np.broadcast_to(g / n, xv.shape).copy(),)

    return x.tape.record("mean", xv.mean(axis=axis, keepdims=True), (x,), back)


def max(x, axis):  # noqa: A001
    """Max over rows or columns; the adjoint goes to the first maximum."""
    xv = x.value
    if xv.ndim != 2:
        raise DimensionError(f"max: needs a matrix, got {xv.shape}")
    if axis == 0:
        out, idx = K.segment_max_forward(xv, xv.shape[0])
        return x.tape.record(
            "max", out, (x,), lambda g: (K.segment_max_backward(g, idx, xv.shape[0]),)
        )
    out, idx = K.segment_max_forward(np.ascontiguousarray(xv.T), xv.shape[1])
    return x.tape.record(
        "max", out.T.copy(), (x,), lambda g: (K.segment_max_backward(g.T, idx, xv.shape[1]).T,)
    )


def segment_max(x, size):
    """Column-wise max over each consecutive block of ``size`` rows."""
    xv = x.value
    if xv.ndim != 2 or size < 1 or xv.shape[0] % size:
        raise DimensionError(f"segment_max: {xv.shape} does not split into blocks of {size}")
    out, idx = K.segment_max_forward(xv, size)
    n = xv.shape[0]
    return x.tape.record("segment_max", out, (x,), lambda g: (K.segment_max_backward(g, idx, n),))


def segment_mean(x, size):
    """Column-wise mean over each consecutive block of ``size`` rows."""
    xv = x.value
    if xv.ndim != 2 or size < 1 or xv.shape[0] % size:
        raise DimensionError(f"segment_mean: {xv.shape} does not split into blocks of {size}")
    k, h = xv.shape[0] // size, xv.shape[1]
    out = xv.reshape(k, size, h).mean(axis=1)

    def back(g):
        return (np.repeat(g / size, size, axis=0),)

    return x.tape.record("segment_mean", out, (x,), back)


# -- fused --------------------------------------------------------------------


def graph_conv(adjacency, x, w, b, activation="relu"):
    """act(A @ X @ W + b) as one op; A is data (no gradient), None means skip.

    The activation is one of identity, relu, sigmoid, tanh.
    """
    tape = _tape_of(x, w, b)
    x, w, b = _lift(x, tape), _lift(w, tape), _lift(b, tape)
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise DimensionError(f"graph_conv: X {xv.shape} incompatible with W {wv.shape}")
    if bv.shape not in ((wv.shape[1],), (1, wv.shape[1])):
        raise DimensionError(f"graph_conv: bias {bv.shape} does not match W {wv.shape}")
    if adjacency is not None:
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (xv.shape[0], xv.shape[0]):
            raise DimensionError(
                f"graph_conv: adjacency {adjacency.shape} for {xv.shape[0]} nodes"
            )
    act = K.ACTIVATIONS[activation]
    out = K.graph_conv_forward(adjacency, xv, wv, bv, act)

    def back(g):
        gx, gw, gb = K.graph_conv_backward(adjacency, xv, wv, out, g, act)
        return gx, gw, gb.reshape(bv.shape)

    return tape.record("graph_conv", out, (x, w, b), back)


def gated_update(z, h, c):
    """(1 - z) * h + z * c."""
    tape = _tape_of(z, h, c)
    z, h, c = _lift(z, tape), _lift(h, tape), _lift(c, tape)
    if not z.value.shape == h.value.shape == c.value.shape:
        raise DimensionError(
            f"gated_update: shapes {z.value.shape}, {h.value.shape}, {c.value.shape}"
        )
    zv, hv, cv = z.value, h.value, c.value
    out = K.gated_update_forward(zv, hv, cv)
    return tape.record(
        "gated_update", out, (z, h, c), lambda g: K.gated_update_backward(zv, hv, cv, g)
    )


OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "concat": lambda *xs, axis=1: concat(list(xs), axis=axis),
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "softplus": softplus,
    "reciprocal": reciprocal,
    "square": square,
    "softmax": softmax,
    "mean": mean,
    "max": max,
    "sum": sum,
    "trace": trace,
    "max0": max0,
    "outer": outer,
    "diag": diag,
    "transpose": transpose,
    "logaddexp": logaddexp,
    "segment_max": segment_max,
    "segment_mean": segment_mean,
    "repeat_rows": repeat_rows,
    "rows": rows,
    "cols": cols,
    "clip": clip,
    "graph_conv": graph_conv,
    "gated_update": gated_update,
}


def forward_op(kind, *inputs, **attrs):
    """Apply a registered op by name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)


def grad_check(f, x, step=1e-6):
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a Node to a scalar Node. The error per coordinate is
    |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xn = tape.variable(x)
    out = f(xn)
    if not isinstance(out, Node) or not out.requires_grad:
        return 0.0  # does not depend on x
    if not np.all(np.isfinite(out.value)):
        raise NumericError("non-finite function value at the check point")
    analytic = tape.backward(out).get(xn, np.zeros_like(x))
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f, x)
        flat[i] = orig - step
        fm = _scalar(f, x)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * step)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite finite-difference estimate")
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def _scalar(f, x):
    out = f(Tape().variable(x))
    v = out.value if isinstance(out, Node) else np.asarray(out)
    v = float(v)
    if not math.isfinite(v):
        raise NumericError("non-finite function value during finite differencing")
    return v


def grad_check_params(build, params, step=1e-6, max_coords=None, rng=None):
    """grad_check over a dict of named arrays; returns {name: max rel error}.

    ``build(tape, nodes)`` receives one leaf per name and returns the scalar
    objective. ``max_coords`` caps the coordinates probed per array (sampled
    with ``rng``); None probes all of them.
    """
    tape = Tape()
    nodes = {k: tape.variable(v) for k, v in params.items()}
    out = build(tape, nodes)
    grads = tape.backward(out)
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate():
        t = Tape()
        return _as_float(build(t, {k: t.variable(v) for k, v in work.items()}))

    errors = {}
    for name, arr in work.items():
        analytic = grads.get(nodes[name], np.zeros_like(arr)).reshape(-1)
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = evaluate()
            flat[i] = orig - step
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            worst = builtins.max(worst, abs(analytic[i] - num) / builtins.max(1.0, abs(analytic[i])))
        errors[name] = float(worst)
    return errors


def _as_float(out):
    v = float(out.value if isinstance(out, Node) else out)
    if not math.isfinite(v):
        raise NumericError("non-finite objective during finite differencing")
    return v
