"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Graph` is an immutable program: a topologically ordered list of
nodes, each applying one primitive op to earlier nodes.  Graphs are built
once with :class:`GraphBuilder` and then evaluated many times with fresh
input and parameter bindings, so the same structure serves any batch size
(shapes are checked per call, not frozen into the graph).

Supported ops: matmul, add, mul, relu, sigmoid, softmax, logsumexp (max
subtracted), l2norm along the last axis, dropout, convex mix, concat, mean,
plus plumbing (sum, reshape, scale, const).  ``gradient`` runs one reverse
sweep and returns d(output)/d(binding) for every input and parameter.

Conventions: relu's subgradient at 0 is 0; l2norm maps the zero vector to
the zero vector and takes gradient 0 there; dropout is the identity unless
``training=True`` is passed at call time, in which case masks are drawn
from ``dropout_seed`` so repeated calls are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(Exception):
    """Base error for graph construction and execution."""


class ShapeError(GraphError):
    """Operand shapes incompatible with an op."""


class UnboundInputError(GraphError):
    """A graph input or parameter has no binding."""


class NonFiniteError(GraphError):
    """A NaN or infinity appeared in a node's output."""


def as_dense(x) -> np.ndarray:
    """Coerce to a C-ordered float64 array (the engine's only dtype)."""
    return np.asarray(x, dtype=np.float64, order="C")


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple[int, ...]
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Graph:
    """Immutable op list with named inputs, parameters, and outputs.

    ``params`` maps a parameter name to its optional default binding;
    callers may override any of them per evaluate/gradient call.
    """

    nodes: tuple[Node, ...]
    inputs: dict  # name -> node id
    params: dict  # name -> (node id, default array or None)
    outputs: dict  # name -> node id

    def output_name(self, name: str | None) -> str:
        if name is not None:
            if name not in self.outputs:
                raise GraphError(f"graph has no output named {name!r}")
            return name
        if len(self.outputs) != 1:
            raise GraphError(
                "graph has multiple outputs; pass output=<name> "
                f"(available: {sorted(self.outputs)})"
            )
        return next(iter(self.outputs))


class Ref:
    """Handle to a node inside a builder, returned by every op method."""

    __slots__ = ("builder", "id")

    def __init__(self, builder: "GraphBuilder", node_id: int):
        self.builder = builder
        self.id = node_id


class GraphBuilder:
    """Constructs a Graph; nodes only reference earlier nodes, so the
    result is acyclic by construction."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._inputs: dict[str, int] = {}
        self._params: dict[str, tuple[int, np.ndarray | None]] = {}
        self._outputs: dict[str, int] = {}

    def _emit(self, op: str, args: tuple[Ref, ...], **attrs) -> Ref:
        for a in args:
            if a.builder is not self:
                raise GraphError("node belongs to a different builder")
        node = Node(op, tuple(a.id for a in args), attrs)
        self._nodes.append(node)
        return Ref(self, len(self._nodes) - 1)

    def input(self, name: str) -> Ref:
        if name in self._inputs or name in self._params:
            raise GraphError(f"duplicate binding name {name!r}")
        ref = self._emit("input", (), name=name)
        self._inputs[name] = ref.id
        return ref

    def param(self, name: str, value=None) -> Ref:
        if name in self._inputs:
            raise GraphError(f"duplicate binding name {name!r}")
        if name in self._params:  # parameters may be shared across subgraphs
            node_id, default = self._params[name]
            if value is not None:
                raise GraphError(f"parameter {name!r} already has a default")
            return Ref(self, node_id)
        ref = self._emit("param", (), name=name)
        self._params[name] = (ref.id, None if value is None else as_dense(value))
        return ref

    def const(self, value) -> Ref:
        return self._emit("const", (), value=as_dense(value))

    def matmul(self, a: Ref, b: Ref) -> Ref:
        return self._emit("matmul", (a, b))

    def add(self, a: Ref, b: Ref) -> Ref:
        return self._emit("add", (a, b))

    def mul(self, a: Ref, b: Ref) -> Ref:
        return self._emit("mul", (a, b))

    def relu(self, x: Ref) -> Ref:
        return self._emit("relu", (x,))

    def sigmoid(self, x: Ref) -> Ref:
        return self._emit("sigmoid", (x,))

    def softmax(self, x: Ref) -> Ref:
        return self._emit("softmax", (x,))

    def logsumexp(self, x: Ref) -> Ref:
        return self._emit("logsumexp", (x,))

    def l2norm(self, x: Ref) -> Ref:
        return self._emit("l2norm", (x,))

    def dropout(self, x: Ref, p: float) -> Ref:
        if not 0.0 <= p < 1.0:
            raise GraphError(f"dropout probability {p} outside [0, 1)")
        return self._emit("dropout", (x,), p=float(p))

    def mix(self, w: Ref, pos: Ref, neg: Ref) -> Ref:
        """Convex combination w*pos + (1-w)*neg, broadcasting w."""
        return self._emit("mix", (w, pos, neg))

    def concat(self, parts: list[Ref], axis: int = -1) -> Ref:
        if not parts:
            raise GraphError("concat of zero arrays")
        return self._emit("concat", tuple(parts), axis=int(axis))

    def mean(self, x: Ref, axis: int | None = None) -> Ref:
        return self._emit("mean", (x,), axis=axis)

    def sum(self, x: Ref, axis: int | None = None) -> Ref:
        return self._emit("sum", (x,), axis=axis)

    def reshape(self, x: Ref, shape: tuple) -> Ref:
        return self._emit("reshape", (x,), shape=tuple(shape))

    def scale(self, x: Ref, c: float) -> Ref:
        return self._emit("scale", (x,), c=float(c))

    def output(self, name: str, x: Ref) -> Ref:
        if name in self._outputs:
            raise GraphError(f"duplicate output name {name!r}")
        self._outputs[name] = x.id
        return x

    def build(self) -> Graph:
        if not self._outputs:
            raise GraphError("graph has no outputs")
        return Graph(
            nodes=tuple(self._nodes),
            inputs=dict(self._inputs),
            params=dict(self._params),
            outputs=dict(self._outputs),
        )


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast so it matches `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _l2norm_last(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    y = np.divide(x, n, out=np.zeros_like(x), where=n > 0)
    return y, n


class _Run:
    """One forward (and optionally backward) execution of a graph."""

    def __init__(self, graph: Graph, inputs: dict, params: dict | None,
                 training: bool, dropout_seed: int):
        self.graph = graph
        self.inputs = inputs
        self.params = params or {}
        self.training = training
        self.rng = np.random.default_rng(dropout_seed) if training else None
        self.values: list[np.ndarray | None] = [None] * len(graph.nodes)
        self.aux: dict[int, np.ndarray] = {}  # dropout masks, by node id

    def _bind_param(self, name: str) -> np.ndarray:
        if name in self.params:
            return as_dense(self.params[name])
        _, default = self.graph.params[name]
        if default is None:
            raise UnboundInputError(f"parameter {name!r} has no binding")
        return default

    def forward(self) -> None:
        # overflow surfaces as the explicit NonFiniteError below, so numpy's
        # own RuntimeWarning is redundant noise
        with np.errstate(over="ignore", invalid="ignore"):
            for i, node in enumerate(self.graph.nodes):
                try:
                    v = self._apply(i, node)
                except ValueError as exc:  # numpy shape mismatches
                    raise ShapeError(f"node {i} ({node.op}): {exc}") from exc
                if not np.isfinite(v).all():
                    raise NonFiniteError(
                        f"non-finite value at node {i} ({node.op})"
                    )
                self.values[i] = v

    def _apply(self, i: int, node: Node) -> np.ndarray:
        a = self.values
        op = node.op
        if op == "input":
            name = node.attrs["name"]
            if name not in self.inputs:
                raise UnboundInputError(f"input {name!r} has no binding")
            return as_dense(self.inputs[name])
        if op == "param":
            return self._bind_param(node.attrs["name"])
        if op == "const":
            return node.attrs["value"]
        if op == "matmul":
            x, w = a[node.args[0]], a[node.args[1]]
            if w.ndim != 2 or x.shape[-1] != w.shape[0]:
                raise ShapeError(
                    f"node {i} (matmul): {x.shape} @ {w.shape} is invalid "
                    "(right operand must be 2-d with matching inner dim)"
                )
            return x @ w
        if op == "add":
            return a[node.args[0]] + a[node.args[1]]
        if op == "mul":
            return a[node.args[0]] * a[node.args[1]]
        if op == "relu":
            return np.maximum(a[node.args[0]], 0.0)
        if op == "sigmoid":
            return _sigmoid(a[node.args[0]])
        if op == "softmax":
            return _softmax_last(a[node.args[0]])
        if op == "logsumexp":
            x = a[node.args[0]]
            m = x.max(axis=-1)
            return m + np.log(np.exp(x - m[..., None]).sum(axis=-1))
        if op == "l2norm":
            y, _ = _l2norm_last(a[node.args[0]])
            return y
        if op == "dropout":
            x = a[node.args[0]]
            if not self.training:
                return x
            p = node.attrs["p"]
            mask = (self.rng.random(x.shape) >= p) / (1.0 - p)
            self.aux[i] = mask
            return x * mask
        if op == "mix":
            w, pos, neg = (a[j] for j in node.args)
            return w * pos + (1.0 - w) * neg
        if op == "concat":
            return np.concatenate([a[j] for j in node.args], axis=node.attrs["axis"])
        if op == "mean":
            return np.asarray(a[node.args[0]].mean(axis=node.attrs["axis"]))
        if op == "sum":
            return np.asarray(a[node.args[0]].sum(axis=node.attrs["axis"]))
        if op == "reshape":
            return a[node.args[0]].reshape(node.attrs["shape"])
        if op == "scale":
            return a[node.args[0]] * node.attrs["c"]
        raise GraphError(f"unknown op {op!r}")

    def backward(self, out_id: int, seed: np.ndarray) -> dict[int, np.ndarray]:
        adj: dict[int, np.ndarray] = {out_id: seed}
        for i in range(len(self.graph.nodes) - 1, -1, -1):
            g = adj.pop(i, None)
            if g is None:
                continue
            node = self.graph.nodes[i]
            for arg_id, contrib in self._vjp(i, node, g):
                if arg_id in adj:
                    adj[arg_id] = adj[arg_id] + contrib
                else:
                    adj[arg_id] = contrib
            if node.op in ("input", "param"):
                adj[i] = g  # keep leaf adjoints for collection
        return adj

    def _vjp(self, i: int, node: Node, g: np.ndarray):
        a = self.values
        op = node.op
        if op in ("input", "param", "const"):
            return []
        if op == "matmul":
            x, w = a[node.args[0]], a[node.args[1]]
            gx = g @ w.T
            gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return [(node.args[0], gx), (node.args[1], gw)]
        if op == "add":
            x, y = a[node.args[0]], a[node.args[1]]
            return [
                (node.args[0], _reduce_to(g, x.shape)),
                (node.args[1], _reduce_to(g, y.shape)),
            ]
        if op == "mul":
            x, y = a[node.args[0]], a[node.args[1]]
            return [
                (node.args[0], _reduce_to(g * y, x.shape)),
                (node.args[1], _reduce_to(g * x, y.shape)),
            ]
        if op == "relu":
            x = a[node.args[0]]
            return [(node.args[0], g * (x > 0))]
        if op == "sigmoid":
            y = a[i]
            return [(node.args[0], g * y * (1.0 - y))]
        if op == "softmax":
            y = a[i]
            inner = (g * y).sum(axis=-1, keepdims=True)
            return [(node.args[0], y * (g - inner))]
        if op == "logsumexp":
            x = a[node.args[0]]
            return [(node.args[0], g[..., None] * _softmax_last(x))]
        if op == "l2norm":
            x = a[node.args[0]]
            y, n = _l2norm_last(x)
            inner = (g * y).sum(axis=-1, keepdims=True)
            gx = np.divide(g - y * inner, n, out=np.zeros_like(x), where=n > 0)
            return [(node.args[0], gx)]
        if op == "dropout":
            if not self.training:
                return [(node.args[0], g)]
            return [(node.args[0], g * self.aux[i])]
        if op == "mix":
            w, pos, neg = (a[j] for j in node.args)
            return [
                (node.args[0], _reduce_to(g * (pos - neg), w.shape)),
                (node.args[1], _reduce_to(g * w, pos.shape)),
                (node.args[2], _reduce_to(g * (1.0 - w), neg.shape)),
            ]
        if op == "concat":
            axis = node.attrs["axis"]
            sizes = [a[j].shape[axis] for j in node.args]
            splits = np.cumsum(sizes)[:-1]
            pieces = np.split(g, splits, axis=axis)
            return list(zip(node.args, pieces))
        if op == "mean":
            x = a[node.args[0]]
            axis = node.attrs["axis"]
            count = x.size if axis is None else x.shape[axis]
            if axis is None:
                return [(node.args[0], np.broadcast_to(g / count, x.shape).copy())]
            ge = np.expand_dims(g, axis) / count
            return [(node.args[0], np.broadcast_to(ge, x.shape).copy())]
        if op == "sum":
            x = a[node.args[0]]
            axis = node.attrs["axis"]
            ge = g if axis is None else np.expand_dims(g, axis)
            return [(node.args[0], np.broadcast_to(ge, x.shape).copy())]
        if op == "reshape":
            x = a[node.args[0]]
            return [(node.args[0], g.reshape(x.shape))]
        if op == "scale":
            return [(node.args[0], g * node.attrs["c"])]
        raise GraphError(f"unknown op {op!r}")


def evaluate(graph: Graph, inputs: dict, params: dict | None = None,
             training: bool = False, dropout_seed: int = 0) -> dict:
    """Run the graph forward and return all named outputs.

    Deterministic given (graph, bindings, dropout_seed); bindings are
    never mutated.
    """
    run = _Run(graph, inputs, params, training, dropout_seed)
    run.forward()
    return {name: run.values[nid] for name, nid in graph.outputs.items()}


def value_and_gradient(graph: Graph, inputs: dict, params: dict | None = None,
                       output: str | None = None, seed=None,
                       training: bool = False, dropout_seed: int = 0,
                       wrt: list[str] | None = None) -> tuple[dict, dict]:
    """One forward plus one reverse sweep: (all outputs, all gradients)."""
    run = _Run(graph, inputs, params, training, dropout_seed)
    run.forward()
    outputs = {name: run.values[nid] for name, nid in graph.outputs.items()}
    grads = _collect_gradients(run, graph, output, seed, wrt)
    return outputs, grads


def gradient(graph: Graph, inputs: dict, params: dict | None = None,
             output: str | None = None, seed=None,
             training: bool = False, dropout_seed: int = 0,
             wrt: list[str] | None = None) -> dict:
    """Return d(output)/d(binding) for every graph input and parameter.

    The chosen output must be scalar unless an explicit ``seed`` array of
    the output's shape is given (then the result is the vector-Jacobian
    product with that seed).
    """
    run = _Run(graph, inputs, params, training, dropout_seed)
    run.forward()
    return _collect_gradients(run, graph, output, seed, wrt)


def _collect_gradients(run: _Run, graph: Graph, output, seed, wrt) -> dict:
    out_name = graph.output_name(output)
    out_id = graph.outputs[out_name]
    out_val = run.values[out_id]
    if seed is None:
        if out_val.size != 1:
            raise GraphError(
                f"output {out_name!r} has shape {out_val.shape}; "
                "a seed array is required for non-scalar outputs"
            )
        seed = np.ones_like(out_val)
    else:
        seed = as_dense(seed)
        if seed.shape != out_val.shape:
            raise ShapeError(
                f"seed shape {seed.shape} != output shape {out_val.shape}"
            )
    adj = run.backward(out_id, seed)

    names = {}
    names.update({name: nid for name, nid in graph.inputs.items()})
    names.update({name: nid for name, (nid, _) in graph.params.items()})
    if wrt is not None:
        names = {n: names[n] for n in wrt}
    grads = {}
    for name, nid in names.items():
        g = adj.get(nid)
        if g is None:
            g = np.zeros_like(run.values[nid])
        grads[name] = g
    return grads


def check_gradient(graph: Graph, point: dict, step: float,
                   output: str | None = None,
                   training: bool = False, dropout_seed: int = 0) -> float:
    """Max over all coordinates of |analytic - central difference| /
    max(1, |analytic|) for a scalar-valued graph at ``point``.

    ``point`` binds every input and parameter by name.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    input_names = set(graph.inputs)
    param_names = set(graph.params)

    def split(bindings):
        ins = {k: v for k, v in bindings.items() if k in input_names}
        ps = {k: v for k, v in bindings.items() if k in param_names}
        return ins, ps

    # private copies: perturbation happens in place, and aliased bindings
    # would otherwise move together
    point = {k: as_dense(v).copy() for k, v in point.items()}
    ins, ps = split(point)
    analytic = gradient(graph, ins, ps, output=output,
                        training=training, dropout_seed=dropout_seed)
    out_name = graph.output_name(output)

    def value_at(bindings):
        i, p = split(bindings)
        v = evaluate(graph, i, p, training=training, dropout_seed=dropout_seed)
        return float(v[out_name])

    worst = 0.0
    for name, arr in point.items():
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = value_at(point)
            flat[j] = orig - step
            lo = value_at(point)
            flat[j] = orig
            fd = (hi - lo) / (2.0 * step)
            an = analytic[name].reshape(-1)[j]
            err = abs(an - fd) / max(1.0, abs(an))
            worst = max(worst, err)
    return worst
