"""Small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are built once and evaluated many times.  Gradients are produced
symbolically: ``Graph.grad`` appends new nodes computing the adjoints, so the
result of a gradient is itself differentiable.  That is what the gradient
penalty needs (a scalar built from ``grad_x u`` differentiated again with
respect to the network weights).

Only same-shape elementwise ops, matrix products and explicit row/column
broadcasts are supported; numpy's implicit broadcasting is rejected.
"""

import numpy as np


class GraphError(Exception):
    """Raised for malformed graphs, unbound inputs or shape mismatches."""

    def __init__(self, message, node=None):
        if node is not None:
            message = f"node {node}: {message}"
        super().__init__(message)
        self.node = node


class Node:
    __slots__ = ("graph", "id")

    def __init__(self, graph, id):
        self.graph = graph
        self.id = id

    def __repr__(self):
        return f"Node({self.id}, {self.graph.ops[self.id]})"

    def __hash__(self):
        return hash((id(self.graph), self.id))

    def __eq__(self, other):
        return isinstance(other, Node) and other.graph is self.graph and other.id == self.id

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.scale(self, other)
        return self.graph.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    @property
    def T(self):
        return self.graph.transpose(self)


def _same_shape(node, a, b):
    if a.shape != b.shape:
        raise GraphError(f"shape mismatch {a.shape} vs {b.shape}", node)


def _f_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"cannot matmul {a.shape} @ {b.shape}", node)
    return a @ b


def _f_add_row(node, x, b):
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise GraphError(f"cannot add row {b.shape} to {x.shape}", node)
    return x + b


def _f_bcast_rows(node, v, like):
    if like.ndim != 2 or v.shape != (like.shape[1],):
        raise GraphError(f"cannot broadcast {v.shape} over rows of {like.shape}", node)
    return np.broadcast_to(v, like.shape).copy()


def _f_bcast_cols(node, v, like):
    if like.ndim != 2 or v.shape != (like.shape[0],):
        raise GraphError(f"cannot broadcast {v.shape} over columns of {like.shape}", node)
    return np.repeat(v[:, None], like.shape[1], axis=1)


def _f_bcast_scalar(node, s, like):
    if s.size != 1:
        raise GraphError(f"expected a scalar, got shape {s.shape}", node)
    return np.full(like.shape, float(s))


def _f_sum_rows(node, x):
    if x.ndim != 2:
        raise GraphError(f"sum_rows needs a matrix, got {x.shape}", node)
    return x.sum(axis=0)


def _f_sum_cols(node, x):
    if x.ndim != 2:
        raise GraphError(f"sum_cols needs a matrix, got {x.shape}", node)
    return x.sum(axis=1)


def _f_half_recip(node, y):
    out = np.zeros_like(y)
    np.divide(0.5, y, out=out, where=y > 0)
    return out


def _f_add(node, a, b):
    _same_shape(node, a, b)
    return a + b


def _f_sub(node, a, b):
    _same_shape(node, a, b)
    return a - b


def _f_mul(node, a, b):
    _same_shape(node, a, b)
    return a * b


# forward rules: (node id, attr, *input values) -> value
_FORWARD = {
    "add": lambda n, at, a, b: _f_add(n, a, b),
    "sub": lambda n, at, a, b: _f_sub(n, a, b),
    "mul": lambda n, at, a, b: _f_mul(n, a, b),
    "scale": lambda n, at, a: at * a,
    "matmul": lambda n, at, a, b: _f_matmul(n, a, b),
    "transpose": lambda n, at, a: a.T.copy(),
    "add_row": lambda n, at, x, b: _f_add_row(n, x, b),
    "sum": lambda n, at, a: np.asarray(a.sum()),
    "sum_rows": lambda n, at, a: _f_sum_rows(n, a),
    "sum_cols": lambda n, at, a: _f_sum_cols(n, a),
    "bcast_scalar": lambda n, at, s, like: _f_bcast_scalar(n, s, like),
    "bcast_rows": lambda n, at, v, like: _f_bcast_rows(n, v, like),
    "bcast_cols": lambda n, at, v, like: _f_bcast_cols(n, v, like),
    "leaky_relu": lambda n, at, a: np.where(a > 0, a, at * a),
    "leaky_mask": lambda n, at, a: np.where(a > 0, 1.0, at),
    "relu": lambda n, at, a: np.maximum(a, 0.0),
    "step": lambda n, at, a: (a > 0).astype(np.float64),
    "square": lambda n, at, a: a * a,
    "sqrt": lambda n, at, a: np.sqrt(a),
    "half_recip": lambda n, at, a: _f_half_recip(n, a),
    "tanh": lambda n, at, a: np.tanh(a),
    "tanh_deriv": lambda n, at, t: 1.0 - t * t,
    "zeros_like": lambda n, at, a: np.zeros_like(a),
    "ones_like": lambda n, at, a: np.ones_like(a),
}

# ops whose output is piecewise constant (or shape-only) in their inputs
_NO_GRAD = {"leaky_mask", "step", "zeros_like", "ones_like"}


class Graph:
    """A DAG of array operations.  Node ids are assigned in creation order,
    so ascending id order is a topological order."""

    def __init__(self):
        self.ops = []
        self.inputs = []
        self.attrs = []
        self.roots = {}
        self.values = {}
        self._grad_cache = {}
        self._plans = {}

    def __len__(self):
        return len(self.ops)

    def _node(self, op, inputs=(), attr=None):
        for x in inputs:
            if not isinstance(x, Node) or x.graph is not self:
                raise GraphError(f"{op}: inputs must be nodes of this graph")
        self.ops.append(op)
        self.inputs.append(tuple(x.id for x in inputs))
        self.attrs.append(attr)
        return Node(self, len(self.ops) - 1)

    # -- leaves
    def input(self, name):
        if name in self.roots:
            raise GraphError(f"duplicate input name {name!r}")
        node = self._node("input", attr=name)
        self.roots[name] = node.id
        return node

    def const(self, value):
        return self._node("const", attr=np.asarray(value, dtype=np.float64))

    # -- elementwise
    def add(self, a, b):
        return self._node("add", (a, b))

    def sub(self, a, b):
        return self._node("sub", (a, b))

    def mul(self, a, b):
        return self._node("mul", (a, b))

    def scale(self, a, c):
        return self._node("scale", (a,), float(c))

    def leaky_relu(self, a, slope=0.2):
        return self._node("leaky_relu", (a,), float(slope))

    def relu(self, a):
        return self._node("relu", (a,))

    def square(self, a):
        return self._node("square", (a,))

    def sqrt(self, a):
        return self._node("sqrt", (a,))

    def tanh(self, a):
        return self._node("tanh", (a,))

    def zeros_like(self, a):
        return self._node("zeros_like", (a,))

    def ones_like(self, a):
        return self._node("ones_like", (a,))

    # -- linear algebra and reductions
    def matmul(self, a, b):
        return self._node("matmul", (a, b))

    def transpose(self, a):
        return self._node("transpose", (a,))

    def add_row(self, x, b):
        """x (n, k) + b (k,) broadcast over rows."""
        return self._node("add_row", (x, b))

    def sum(self, a):
        return self._node("sum", (a,))

    def mean(self, a, n):
        return self.scale(self.sum(a), 1.0 / n)

    def sum_rows(self, a):
        return self._node("sum_rows", (a,))

    def sum_cols(self, a):
        return self._node("sum_cols", (a,))

    def bcast_scalar(self, s, like):
        return self._node("bcast_scalar", (s, like))

    def bcast_rows(self, v, like):
        return self._node("bcast_rows", (v, like))

    def bcast_cols(self, v, like):
        return self._node("bcast_cols", (v, like))

    def row_norms(self, a):
        """Euclidean norm of each row of a matrix."""
        return self.sqrt(self.sum_cols(self.square(a)))

    # -- differentiation
    def _vjp(self, nid, gbar):
        """Input adjoints of node ``nid`` given its output adjoint."""
        op = self.ops[nid]
        ins = [Node(self, i) for i in self.inputs[nid]]
        at = self.attrs[nid]
        out = Node(self, nid)
        if op == "add":
            return [gbar, gbar]
        if op == "sub":
            return [gbar, self.scale(gbar, -1.0)]
        if op == "mul":
            a, b = ins
            return [self.mul(gbar, b), self.mul(gbar, a)]
        if op == "scale":
            return [self.scale(gbar, at)]
        if op == "matmul":
            a, b = ins
            return [self.matmul(gbar, self.transpose(b)), self.matmul(self.transpose(a), gbar)]
        if op == "transpose":
            return [self.transpose(gbar)]
        if op == "add_row":
            return [gbar, self.sum_rows(gbar)]
        if op == "sum":
            return [self.bcast_scalar(gbar, ins[0])]
        if op == "sum_rows":
            return [self.bcast_rows(gbar, ins[0])]
        if op == "sum_cols":
            return [self.bcast_cols(gbar, ins[0])]
        if op == "bcast_scalar":
            return [self.sum(gbar), None]
        if op == "bcast_rows":
            return [self.sum_rows(gbar), None]
        if op == "bcast_cols":
            return [self.sum_cols(gbar), None]
        if op == "leaky_relu":
            return [self.mul(gbar, self._node("leaky_mask", (ins[0],), at))]
        if op == "relu":
            return [self.mul(gbar, self._node("step", (ins[0],)))]
        if op == "square":
            return [self.scale(self.mul(gbar, ins[0]), 2.0)]
        if op == "sqrt":
            return [self.mul(gbar, self._node("half_recip", (out,)))]
        if op == "half_recip":
            # d(0.5/y)/dy = -2 (0.5/y)^2
            return [self.mul(gbar, self.scale(self.square(out), -2.0))]
        if op == "tanh":
            return [self.mul(gbar, self._node("tanh_deriv", (out,)))]
        if op == "tanh_deriv":
            # t is tanh(x); d(1 - t^2)/dt = -2t
            return [self.mul(gbar, self.scale(ins[0], -2.0))]
        if op in _NO_GRAD or op in ("input", "const"):
            return [None] * len(ins)
        raise GraphError(f"no derivative rule for op {op!r}", nid)

    def grad(self, output, wrt):
        """Symbolic gradients of scalar ``output`` w.r.t. each node in ``wrt``.

        Returns new nodes; unreachable inputs get ``zeros_like`` nodes.
        """
        key = (output.id, tuple(w.id for w in wrt))
        if key in self._grad_cache:
            return [Node(self, i) for i in self._grad_cache[key]]
        live = self._ancestors([output.id])
        adj = {output.id: self.ones_like(output)}
        for nid in sorted(live, reverse=True):
            gbar = adj.pop(nid, None) if nid not in {w.id for w in wrt} else adj.get(nid)
            if gbar is None or not self.inputs[nid]:
                continue
            for src, g in zip(self.inputs[nid], self._vjp(nid, gbar)):
                if g is None:
                    continue
                adj[src] = self.add(adj[src], g) if src in adj else g
        result = [adj[w.id] if w.id in adj else self.zeros_like(w) for w in wrt]
        self._grad_cache[key] = tuple(r.id for r in result)
        return result

    # -- evaluation
    def _ancestors(self, ids):
        seen = set()
        stack = list(ids)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.inputs[i])
        return seen

    def plan(self, outputs):
        key = tuple(o.id for o in outputs)
        if key not in self._plans:
            self._plans[key] = sorted(self._ancestors(key))
        return self._plans[key]

    def evaluate(self, bindings, outputs, reuse=False):
        """Evaluate ``outputs`` and return their values as a list.

        ``bindings`` maps input names (or input nodes) to arrays.  With
        ``reuse=True`` values already in the cache are kept, which is how
        gradient nodes added after a forward pass see the cached activations.
        """
        values = self.values if reuse else {}
        for k, v in bindings.items():
            nid = k.id if isinstance(k, Node) else self.roots.get(k)
            if nid is None or self.ops[nid] != "input":
                raise GraphError(f"{k!r} is not an input of this graph")
            values[nid] = np.asarray(v, dtype=np.float64)
        ops, inputs, attrs = self.ops, self.inputs, self.attrs
        for nid in self.plan(outputs):
            if nid in values:
                continue
            op = ops[nid]
            if op == "input":
                raise GraphError(f"input {attrs[nid]!r} is unbound", nid)
            if op == "const":
                values[nid] = attrs[nid]
                continue
            args = [values[i] for i in inputs[nid]]
            try:
                values[nid] = _FORWARD[op](nid, attrs[nid], *args)
            except GraphError:
                raise
            except (ValueError, TypeError) as exc:
                raise GraphError(f"{op}: {exc}", nid) from exc
        self.values = values
        return [values[o.id] for o in outputs]


def forward(graph, bindings, output):
    """Evaluate ``output`` with fresh bindings, caching every intermediate."""
    return graph.evaluate(bindings, [output])[0]


def backward(graph, output):
    """Gradients of the scalar ``output`` at every graph input.

    Requires a prior ``forward``.  Returns ``{input name: array}``; inputs the
    output does not depend on get zero arrays.
    """
    if output.id not in graph.values:
        raise GraphError("run forward before backward", output.id)
    if graph.values[output.id].size != 1:
        raise GraphError(f"backward needs a scalar output, got shape "
                         f"{graph.values[output.id].shape}", output.id)
    names = list(graph.roots)
    roots = [Node(graph, graph.roots[n]) for n in names]
    for n, r in zip(names, roots):
        if r.id not in graph.values:
            raise GraphError(f"input {n!r} is unbound", r.id)
    grads = graph.grad(output, roots)
    vals = graph.evaluate({}, grads, reuse=True)
    return dict(zip(names, vals))
