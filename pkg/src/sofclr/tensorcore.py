"""Small static-graph reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` is built once (inputs, parameter slots, op nodes recorded in
topological order) and then evaluated many times with different flat
parameter vectors and inputs::

    g = Graph()
    x = g.input("x", (None, 3))
    W = g.param("W", (3, 2))
    g.output("loss", (x @ W).relu().sum())
    value = forward(g, params, {"x": X})["loss"]
    grad = backward(g, params, {"x": X}, "loss")

Only the ops needed by the contrastive and adversarial losses are provided.
Broadcasting is limited to a trailing-suffix match (a bias row added to every
row of a batch, or a scalar).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Graph",
    "Var",
    "ShapeError",
    "NonFiniteError",
    "forward",
    "backward",
    "value_and_grad",
    "Tape",
    "finite_diff_grad",
    "NORM_EPS",
]

NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value produced at node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class Node(NamedTuple):
    op: str
    inputs: tuple
    attr: object = None


class Var:
    """Handle to a node of a :class:`Graph`; supports arithmetic operators."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    def _wrap(self, other) -> "Var":
        if isinstance(other, Var):
            if other.graph is not self.graph:
                raise ValueError("cannot mix nodes from different graphs")
            return other
        return self.graph.const(other)

    def __add__(self, other):
        return self.graph.add(self, self._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.add(self, self.graph.mul(self._wrap(other), -1.0))

    def __rsub__(self, other):
        return self.graph.add(self._wrap(other), self.graph.mul(self, -1.0))

    def __mul__(self, other):
        return self.graph.mul(self, self._wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.div(self, self._wrap(other))

    def __rtruediv__(self, other):
        return self.graph.div(self._wrap(other), self)

    def __neg__(self):
        return self.graph.mul(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._wrap(other))

    def relu(self):
        return self.graph.relu(self)

    def exp(self):
        return self.graph.exp(self)

    def log(self):
        return self.graph.log(self)

    def sum(self, axis=None):
        return self.graph.sum(self, axis)

    def mean(self, axis=None):
        return self.graph.mean(self, axis)

    def __repr__(self):
        return f"Var({self.id}: {self.graph.nodes[self.id].op})"


@dataclass
class Graph:
    nodes: list = field(default_factory=list)
    param_slots: dict = field(default_factory=dict)  # name -> (offset, shape)
    input_shapes: dict = field(default_factory=dict)  # name -> (node id, shape)
    outputs: dict = field(default_factory=dict)  # name -> node id
    n_params: int = 0

    def _add(self, op, inputs=(), attr=None) -> Var:
        ids = tuple(v.id for v in inputs)
        self.nodes.append(Node(op, ids, attr))
        return Var(self, len(self.nodes) - 1)

    # leaves

    def input(self, name: str, shape: Sequence) -> Var:
        if name in self.input_shapes:
            raise ValueError(f"duplicate input {name!r}")
        v = self._add("input", (), name)
        self.input_shapes[name] = (v.id, tuple(shape))
        return v

    def param(self, name: str, shape: Sequence[int]) -> Var:
        if name in self.param_slots:
            raise ValueError(f"duplicate parameter slot {name!r}")
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape)) if shape else 1
        self.param_slots[name] = (self.n_params, shape)
        self.n_params += size
        return self._add("param", (), name)

    def const(self, value) -> Var:
        return self._add("const", (), np.asarray(value, dtype=np.float64))

    def output(self, name: str, var: Var) -> Var:
        self.outputs[name] = var.id
        return var

    # ops

    def matmul(self, a: Var, b: Var, transpose_b: bool = False) -> Var:
        return self._add("matmul", (a, b), bool(transpose_b))

    def add(self, a: Var, b: Var) -> Var:
        return self._add("add", (a, b))

    def mul(self, a: Var, b) -> Var:
        return self._add("mul", (a, a._wrap(b)))

    def div(self, a: Var, b) -> Var:
        return self._add("div", (a, a._wrap(b)))

    def relu(self, a: Var) -> Var:
        return self._add("relu", (a,))

    def exp(self, a: Var) -> Var:
        return self._add("exp", (a,))

    def log(self, a: Var) -> Var:
        return self._add("log", (a,))

    def sum(self, a: Var, axis=None) -> Var:
        return self._add("sum", (a,), _check_axis(axis))

    def mean(self, a: Var, axis=None) -> Var:
        return self._add("mean", (a,), _check_axis(axis))

    def dot(self, a: Var, b: Var) -> Var:
        """Inner product over the last axis (row-wise for batches)."""
        return self._add("dot", (a, b))

    def l2_normalize(self, a: Var) -> Var:
        return self._add("l2_normalize", (a,))

    def log_softmax(self, a: Var) -> Var:
        return self._add("log_softmax", (a,))

    # parameter layout helpers

    def unflatten(self, params: np.ndarray) -> dict:
        return {
            name: params[off : off + _size(shape)].reshape(shape)
            for name, (off, shape) in self.param_slots.items()
        }

    def flatten(self, arrays: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_params)
        for name, (off, shape) in self.param_slots.items():
            out[off : off + _size(shape)] = np.asarray(arrays[name], dtype=np.float64).ravel()
        return out


def _size(shape) -> int:
    return int(np.prod(shape)) if shape else 1


def _check_axis(axis):
    if axis not in (None, -1):
        raise ValueError("reductions support axis=None or axis=-1 only")
    return axis


def _broadcast(a: np.ndarray, b: np.ndarray, node_id: int):
    # only suffix broadcasting: b over a's leading (batch) axes, or vice versa
    for small, big in ((a, b), (b, a)):
        if small.ndim <= big.ndim and small.shape == big.shape[big.ndim - small.ndim :]:
            return
    raise ShapeError(f"node {node_id}: cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))) if lead else grad


def _l2n(x: np.ndarray):
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    small = norm < NORM_EPS
    safe = np.where(small, 1.0, norm)
    y = x / safe
    if np.any(small):
        basis = np.zeros(x.shape[-1])
        basis[0] = 1.0
        y = np.where(small, basis, y)
    return y, safe, small


def _run(graph: Graph, params: np.ndarray, inputs: Mapping[str, np.ndarray]) -> list:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (graph.n_params,):
        raise ShapeError(f"expected {graph.n_params} parameters, got shape {params.shape}")
    missing = set(graph.input_shapes) - set(inputs)
    if missing:
        raise ShapeError(f"missing inputs: {sorted(missing)}")
    vals: list = [None] * len(graph.nodes)
    cache: dict = {}
    for i, node in enumerate(graph.nodes):
        op, ins, attr = node
        if op == "input":
            x = np.asarray(inputs[attr], dtype=np.float64)
            decl = graph.input_shapes[attr][1]
            if x.ndim != len(decl) or any(d is not None and d != s for d, s in zip(decl, x.shape)):
                raise ShapeError(f"input {attr!r}: expected shape {decl}, got {x.shape}")
            out = x
        elif op == "param":
            off, shape = graph.param_slots[attr]
            out = params[off : off + _size(shape)].reshape(shape)
        elif op == "const":
            out = attr
        else:
            a = vals[ins[0]]
            if op == "matmul":
                b = vals[ins[1]]
                if a.ndim != 2 or b.ndim != 2:
                    raise ShapeError(f"node {i}: matmul needs 2-D operands, got {a.shape}, {b.shape}")
                bb = b.T if attr else b
                if a.shape[1] != bb.shape[0]:
                    raise ShapeError(f"node {i}: matmul shape mismatch {a.shape} @ {bb.shape}")
                out = a @ bb
            elif op in ("add", "mul", "div"):
                b = vals[ins[1]]
                _broadcast(a, b, i)
                out = a + b if op == "add" else (a * b if op == "mul" else a / b)
            elif op == "relu":
                out = np.maximum(a, 0.0)
            elif op == "exp":
                out = np.exp(a)
            elif op == "log":
                with np.errstate(divide="ignore", invalid="ignore"):
                    out = np.log(a)
            elif op == "sum":
                out = np.sum(a) if attr is None else np.sum(a, axis=-1)
            elif op == "mean":
                out = np.mean(a) if attr is None else np.mean(a, axis=-1)
            elif op == "dot":
                b = vals[ins[1]]
                if a.shape != b.shape:
                    raise ShapeError(f"node {i}: dot shape mismatch {a.shape} vs {b.shape}")
                out = np.sum(a * b, axis=-1)
            elif op == "l2_normalize":
                out, norm, small = _l2n(a)
                cache[i] = (norm, small)
            elif op == "log_softmax":
                shifted = a - np.max(a, axis=-1, keepdims=True)
                out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
            else:  # pragma: no cover - graph builder prevents this
                raise ValueError(f"unknown op {op}")
            out = np.asarray(out, dtype=np.float64)
            if not np.isfinite(out).all():
                raise NonFiniteError(i, op)
        vals[i] = out
    vals.append(cache)
    return vals


def _grad(graph: Graph, vals: list, cotangents: dict) -> np.ndarray:
    cache = vals[-1]
    grads: list = [None] * len(graph.nodes)
    for nid, cot in cotangents.items():
        cot = np.asarray(cot, dtype=np.float64)
        if cot.shape != np.shape(vals[nid]):
            raise ShapeError(f"cotangent shape {cot.shape} does not match node {nid} shape {np.shape(vals[nid])}")
        grads[nid] = cot if grads[nid] is None else grads[nid] + cot
    flat = np.zeros(graph.n_params)

    def acc(j, g):
        grads[j] = g if grads[j] is None else grads[j] + g

    for i in range(max(cotangents, default=-1), -1, -1):
        g = grads[i]
        if g is None:
            continue
        op, ins, attr = graph.nodes[i]
        if op in ("input", "const"):
            continue
        if op == "param":
            off, shape = graph.param_slots[attr]
            flat[off : off + _size(shape)] += np.reshape(g, -1)
            continue
        a = vals[ins[0]]
        out = vals[i]
        if op == "matmul":
            b = vals[ins[1]]
            if attr:  # a @ b.T
                acc(ins[0], g @ b)
                acc(ins[1], g.T @ a)
            else:
                acc(ins[0], g @ b.T)
                acc(ins[1], a.T @ g)
        elif op == "add":
            acc(ins[0], _unbroadcast(g, a.shape))
            acc(ins[1], _unbroadcast(g, vals[ins[1]].shape))
        elif op == "mul":
            b = vals[ins[1]]
            acc(ins[0], _unbroadcast(g * b, a.shape))
            acc(ins[1], _unbroadcast(g * a, b.shape))
        elif op == "div":
            b = vals[ins[1]]
            acc(ins[0], _unbroadcast(g / b, a.shape))
            acc(ins[1], _unbroadcast(-g * a / (b * b), b.shape))
        elif op == "relu":
            acc(ins[0], g * (a > 0.0))
        elif op == "exp":
            acc(ins[0], g * out)
        elif op == "log":
            acc(ins[0], g / a)
        elif op == "sum":
            acc(ins[0], np.broadcast_to(g, a.shape) if attr is None else np.broadcast_to(g[..., None], a.shape))
        elif op == "mean":
            scale = a.size if attr is None else a.shape[-1]
            gg = g if attr is None else g[..., None]
            acc(ins[0], np.broadcast_to(gg / scale, a.shape))
        elif op == "dot":
            b = vals[ins[1]]
            acc(ins[0], g[..., None] * b)
            acc(ins[1], g[..., None] * a)
        elif op == "l2_normalize":
            norm, small = cache[i]
            proj = g - out * np.sum(g * out, axis=-1, keepdims=True)
            acc(ins[0], np.where(small, 0.0, proj / norm))
        elif op == "log_softmax":
            acc(ins[0], g - np.exp(out) * np.sum(g, axis=-1, keepdims=True))
    return flat


def _node_id(graph: Graph, ref) -> int:
    if isinstance(ref, Var):
        return ref.id
    if ref not in graph.outputs:
        raise KeyError(f"unknown output {ref!r}")
    return graph.outputs[ref]


class Tape:
    """Stored forward values of one evaluation; reusable for several reverse sweeps."""

    def __init__(self, graph: Graph, params, inputs: Mapping[str, np.ndarray]):
        self.graph = graph
        self._vals = _run(graph, params, inputs)

    def __getitem__(self, ref) -> np.ndarray:
        return self._vals[_node_id(self.graph, ref)]

    def grad(self, seed) -> np.ndarray:
        nid = _node_id(self.graph, seed)
        if np.ndim(self._vals[nid]) != 0:
            raise ShapeError(f"seed node {nid} is not scalar (shape {np.shape(self._vals[nid])})")
        return _grad(self.graph, self._vals, {nid: np.ones(())})

    def vjp(self, cotangents: Mapping) -> np.ndarray:
        """Sum over ``{node: cotangent}`` of cotangent-weighted gradients."""
        cots: dict = {}
        for ref, cot in cotangents.items():
            nid = _node_id(self.graph, ref)
            cots[nid] = cots[nid] + cot if nid in cots else cot
        return _grad(self.graph, self._vals, cots)


def forward(graph: Graph, params, inputs: Mapping[str, np.ndarray]) -> dict:
    """Evaluate every declared output. Pure: ``params`` is never written."""
    vals = _run(graph, params, inputs)
    return {name: vals[nid] for name, nid in graph.outputs.items()}


def backward(graph: Graph, params, inputs: Mapping[str, np.ndarray], seed) -> np.ndarray:
    """Gradient of the scalar output ``seed`` w.r.t. the flat parameter vector."""
    return Tape(graph, params, inputs).grad(seed)


def value_and_grad(graph: Graph, params, inputs, seeds: Sequence) -> tuple[dict, dict]:
    """One forward pass, one reverse sweep per seed."""
    tape = Tape(graph, params, inputs)
    outs = {name: tape[name] for name in graph.outputs}
    return outs, {s: tape.grad(s) for s in seeds}


def finite_diff_grad(f: Callable[[np.ndarray], float], params, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    p = np.array(params, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + step
        fp = float(f(p))
        p[i] = orig - step
        fm = float(f(p))
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(i, "finite_diff")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad
