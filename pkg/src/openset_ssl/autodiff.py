"""Dense-array computation graph with reverse-mode differentiation.

The graph is an eager tape: every `apply` computes its forward value
immediately and appends a node, so the node list is always in topological
order.  `backward` walks the tape once in reverse and accumulates
gradients with plain numpy, which makes it bit-deterministic.

Supported operation kinds (64-bit reals throughout):

    matmul               2-D product; params: transpose_b
    add                  elementwise; second operand may be a (1, n) row
                         broadcast against an (m, n) first operand
    scale                multiply by a Python scalar; params: factor
    relu                 max(x, 0); subgradient at 0 is 0
    mean, sum            full reduction to a 0-d scalar
    exp, log             elementwise
    softmax-rows         row softmax with max-subtraction
    l2-normalize-rows    rows scaled to unit norm; zero rows pass through
                         with zero gradient
    elementwise-mul      same broadcast rule as add
    concat-rows          stack 2-D blocks with equal column counts
    slice-rows           rows [start, stop); params: start, stop
"""

import numpy as np

OP_KINDS = (
    "matmul",
    "add",
    "scale",
    "relu",
    "mean",
    "sum",
    "exp",
    "log",
    "softmax-rows",
    "l2-normalize-rows",
    "elementwise-mul",
    "concat-rows",
    "slice-rows",
)

_ZERO_ROW_EPS = 1e-12


class Node:
    __slots__ = ("op", "inputs", "value", "params")

    def __init__(self, op, inputs, value, params=None):
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.params = params or {}

    def __repr__(self):
        return f"Node({self.op}, inputs={self.inputs}, shape={self.value.shape})"


def _as_value(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 0:  # ascontiguousarray would promote 0-d to (1,)
        arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _shapes(graph, ids):
    return ", ".join(str(graph.nodes[i].value.shape) for i in ids)


def _broadcast_ok(a_shape, b_shape):
    """Equal shapes, or b a single row (1, n) against a 2-D (m, n)."""
    if a_shape == b_shape:
        return True
    return (
        len(a_shape) == 2
        and len(b_shape) == 2
        and b_shape[0] == 1
        and a_shape[1] == b_shape[1]
    )


def _reduce_broadcast(grad, shape):
    """Sum a gradient back down to `shape` after row broadcasting."""
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0, keepdims=True)


class DiffGraph:
    """Append-only computation tape.

    Confined to one thread during construction and backward; node values
    are immutable once created and safe to share between graphs.
    """

    def __init__(self):
        self.nodes = []
        self.gradients = {}

    def __len__(self):
        return len(self.nodes)

    def value(self, node_id):
        return self.nodes[node_id].value

    def input(self, value):
        """Append a leaf node holding a copy of `value` (constant or parameter)."""
        self.nodes.append(Node("input", (), _as_value(np.array(value))))
        return len(self.nodes) - 1

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def apply(self, op, inputs, **params):
        """Append a node computing `op` over existing node ids."""
        if op not in OP_KINDS:
            raise ValueError(f"unknown operation kind: {op!r}")
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{op}: input node {i} does not exist")
        vals = [self.nodes[i].value for i in inputs]
        value = self._forward(op, vals, inputs, params)
        self.nodes.append(Node(op, inputs, _as_value(value), params))
        return len(self.nodes) - 1

    def _forward(self, op, vals, inputs, params):
        if op == "matmul":
            self._expect_arity(op, inputs, 2)
            a, b = vals
            tb = bool(params.get("transpose_b", False))
            if a.ndim != 2 or b.ndim != 2:
                raise ValueError(
                    f"matmul: expects 2-D operands, got {_shapes(self, inputs)}"
                )
            inner = b.shape[1] if tb else b.shape[0]
            if a.shape[1] != inner:
                raise ValueError(
                    f"matmul: inner dimensions disagree for shapes "
                    f"{a.shape} and {b.shape} (transpose_b={tb})"
                )
            return a @ (b.T if tb else b)

        if op in ("add", "elementwise-mul"):
            self._expect_arity(op, inputs, 2)
            a, b = vals
            if not _broadcast_ok(a.shape, b.shape):
                raise ValueError(
                    f"{op}: shapes {a.shape} and {b.shape} do not conform"
                )
            return a + b if op == "add" else a * b

        if op == "scale":
            self._expect_arity(op, inputs, 1)
            factor = float(params["factor"])
            return vals[0] * factor

        if op == "relu":
            self._expect_arity(op, inputs, 1)
            return np.maximum(vals[0], 0.0)

        if op == "mean":
            self._expect_arity(op, inputs, 1)
            return np.asarray(vals[0].mean())

        if op == "sum":
            self._expect_arity(op, inputs, 1)
            return np.asarray(vals[0].sum())

        if op == "exp":
            self._expect_arity(op, inputs, 1)
            return np.exp(vals[0])

        if op == "log":
            self._expect_arity(op, inputs, 1)
            return np.log(vals[0])

        if op == "softmax-rows":
            self._expect_arity(op, inputs, 1)
            x = vals[0]
            if x.ndim != 2:
                raise ValueError(f"softmax-rows: expects 2-D, got {x.shape}")
            shifted = x - x.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            return e / e.sum(axis=1, keepdims=True)

        if op == "l2-normalize-rows":
            self._expect_arity(op, inputs, 1)
            x = vals[0]
            if x.ndim != 2:
                raise ValueError(f"l2-normalize-rows: expects 2-D, got {x.shape}")
            norms = np.linalg.norm(x, axis=1, keepdims=True)
            safe = np.where(norms < _ZERO_ROW_EPS, 1.0, norms)
            return x / safe

        if op == "concat-rows":
            if len(inputs) < 1:
                raise ValueError("concat-rows: needs at least one input")
            cols = {v.shape[1] for v in vals if v.ndim == 2}
            if any(v.ndim != 2 for v in vals) or len(cols) != 1:
                raise ValueError(
                    f"concat-rows: column counts disagree: {_shapes(self, inputs)}"
                )
            return np.concatenate(vals, axis=0)

        if op == "slice-rows":
            self._expect_arity(op, inputs, 1)
            x = vals[0]
            start, stop = int(params["start"]), int(params["stop"])
            if x.ndim != 2 or not (0 <= start <= stop <= x.shape[0]):
                raise ValueError(
                    f"slice-rows: range [{start}, {stop}) invalid for shape {x.shape}"
                )
            return x[start:stop]

        raise AssertionError(op)

    def _expect_arity(self, op, inputs, n):
        if len(inputs) != n:
            raise ValueError(
                f"{op}: expects {n} input(s), got {len(inputs)} "
                f"with shapes {_shapes(self, inputs)}"
            )

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------

    def backward(self, root):
        """Populate and return gradients of `root` w.r.t. every node.

        Nodes not reachable from the root map to zero arrays of their
        value's shape.
        """
        root = int(root)
        root_val = self.nodes[root].value
        if root_val.size != 1:
            raise ValueError(
                f"backward: root must be scalar-valued, got shape {root_val.shape}"
            )
        grads = {
            i: np.zeros_like(node.value) for i, node in enumerate(self.nodes)
        }
        grads[root] = np.ones_like(root_val)
        for i in range(root, -1, -1):
            node = self.nodes[i]
            g = grads[i]
            if not node.inputs or not g.any():
                continue
            for j, contrib in zip(node.inputs, self._vjp(node, g)):
                if contrib is not None:
                    grads[j] = grads[j] + contrib
        self.gradients = grads
        return grads

    def _vjp(self, node, g):
        op = node.op
        vals = [self.nodes[i].value for i in node.inputs]

        if op == "matmul":
            a, b = vals
            if node.params.get("transpose_b", False):
                return g @ b, g.T @ a
            return g @ b.T, a.T @ g

        if op == "add":
            return g, _reduce_broadcast(g, vals[1].shape)

        if op == "elementwise-mul":
            a, b = vals
            return g * b, _reduce_broadcast(g * a, b.shape)

        if op == "scale":
            return (g * node.params["factor"],)

        if op == "relu":
            return (g * (vals[0] > 0.0),)

        if op == "mean":
            x = vals[0]
            return (np.full_like(x, g.item() / x.size),)

        if op == "sum":
            return (np.full_like(vals[0], g.item()),)

        if op == "exp":
            return (g * node.value,)

        if op == "log":
            return (g / vals[0],)

        if op == "softmax-rows":
            s = node.value
            inner = (g * s).sum(axis=1, keepdims=True)
            return (s * (g - inner),)

        if op == "l2-normalize-rows":
            x = vals[0]
            norms = np.linalg.norm(x, axis=1, keepdims=True)
            zero = norms < _ZERO_ROW_EPS
            safe = np.where(zero, 1.0, norms)
            y = node.value
            grad = (g - y * (g * y).sum(axis=1, keepdims=True)) / safe
            return (np.where(zero, 0.0, grad),)

        if op == "concat-rows":
            out = []
            offset = 0
            for v in vals:
                out.append(g[offset : offset + v.shape[0]])
                offset += v.shape[0]
            return tuple(out)

        if op == "slice-rows":
            x = vals[0]
            full = np.zeros_like(x)
            full[node.params["start"] : node.params["stop"]] = g
            return (full,)

        raise AssertionError(op)


def grad_check(fn, point, eps=1e-5, analytic=None):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps an array to a scalar.  `analytic` is the analytic gradient at
    `point`, either as an array or as a callable point -> gradient; when
    omitted, `fn.gradient(point)` is used.  The error per coordinate is
    |analytic - central| / max(1e-12, |analytic| + |central|).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    point = np.asarray(point, dtype=np.float64)
    if analytic is None:
        analytic = getattr(fn, "gradient")
    if callable(analytic):
        analytic = analytic(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise ValueError(
            f"grad_check: gradient shape {analytic.shape} != point shape {point.shape}"
        )

    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        hi = float(fn(bumped.reshape(point.shape)))
        bumped[i] = flat[i] - eps
        lo = float(fn(bumped.reshape(point.shape)))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"grad_check: non-finite function value at coordinate {i}")
        central = (hi - lo) / (2.0 * eps)
        a = float(analytic.ravel()[i])
        err = abs(a - central) / max(1e-12, abs(a) + abs(central))
        worst = max(worst, err)
    return worst
