"""Declarative operation graphs over the tensor engine.

Networks are described as named `OpNode`s wired by id; `Graph.run` executes
them eagerly in topological order so the autodiff tape underneath records
everything. Training code usually calls `forward_backward`; the gradient
checker re-runs the same graph in float64 against central finite differences.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, ShapeError, Tensor

OP_KINDS = frozenset({
    "conv2d", "conv3d", "transposed-conv", "nearest-upsample", "average-downsample",
    "dense", "batch-norm", "pixelwise-feature-norm", "minibatch-stddev",
    "relu", "leaky-relu", "elu", "tanh", "sigmoid", "dropout",
    "concat", "add", "mul", "mean", "sum", "l1", "l2-norm",
})


class GraphError(ValueError):
    """Structural problem in a graph: unknown ids, cycles, bad wiring."""


class NodeExecutionError(RuntimeError):
    """Failure while evaluating one node; carries the node id."""

    def __init__(self, node_id: str, kind: str, cause: Exception):
        super().__init__(f"node {node_id!r} ({kind}): {cause}")
        self.node_id = node_id
        self.kind = kind
        self.cause = cause


@dataclass
class OpNode:
    kind: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise GraphError(f"unknown op kind {self.kind!r}")
        self.inputs = tuple(self.inputs)


class Graph:
    """A named, acyclic wiring of op nodes, parameters and constants."""

    def __init__(self):
        self.nodes: dict[str, OpNode] = {}
        self.params: dict[str, Tensor] = {}
        self.consts: dict[str, Tensor] = {}
        self.input_names: list[str] = []
        self.bn_state: dict[str, BatchNormState] = {}

    # -- construction -------------------------------------------------------

    def add_input(self, name: str) -> str:
        self._check_fresh(name)
        self.input_names.append(name)
        return name

    def add_param(self, name: str, value: np.ndarray | Tensor) -> str:
        self._check_fresh(name)
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self.params[name] = t
        return name

    def add_const(self, name: str, value) -> str:
        self._check_fresh(name)
        self.consts[name] = Tensor(np.asarray(value, dtype=np.float32), name=name)
        return name

    def add(self, name: str, kind: str, inputs: Sequence[str], **attrs) -> str:
        self._check_fresh(name)
        self.nodes[name] = OpNode(kind, tuple(inputs), attrs)
        return name

    def _check_fresh(self, name: str) -> None:
        if name in self.nodes or name in self.params or name in self.consts or name in self.input_names:
            raise GraphError(f"id {name!r} already defined")

    # -- introspection ------------------------------------------------------

    def topo_order(self) -> list[str]:
        """Topological order of op nodes; raises GraphError on cycles."""
        order: list[str] = []
        mark: dict[str, int] = {}  # 1 = visiting, 2 = done

        def visit(nid: str, chain: list[str]):
            state = mark.get(nid, 0)
            if state == 2:
                return
            if state == 1:
                raise GraphError(f"cycle through node {nid!r}: {' -> '.join(chain + [nid])}")
            mark[nid] = 1
            node = self.nodes[nid]
            for dep in node.inputs:
                if dep in self.nodes:
                    visit(dep, chain + [nid])
                elif dep not in self.params and dep not in self.consts and dep not in self.input_names:
                    raise GraphError(f"node {nid!r} references unknown id {dep!r}")
            mark[nid] = 2
            order.append(nid)

        for nid in self.nodes:
            visit(nid, [])
        return order

    def param_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def astype(self, dtype) -> "Graph":
        """Copy of this graph with parameters/constants cast to dtype."""
        g = Graph()
        g.nodes = {k: OpNode(n.kind, n.inputs, dict(n.attrs)) for k, n in self.nodes.items()}
        g.input_names = list(self.input_names)
        for name, p in self.params.items():
            g.add_param(name, p.data.astype(dtype))
        for name, c in self.consts.items():
            g.consts[name] = Tensor(c.data.astype(dtype), name=name)
        for nid, st in self.bn_state.items():
            new = BatchNormState(len(st.running_mean), dtype=dtype)
            new.running_mean = st.running_mean.astype(dtype)
            new.running_var = st.running_var.astype(dtype)
            new.initialized = st.initialized
            g.bn_state[nid] = new
        return g

    # -- execution ----------------------------------------------------------

    def run(self, feeds: Mapping[str, np.ndarray | Tensor] | None = None,
            outputs: str | Sequence[str] | None = None,
            training: bool = False, rng: np.random.Generator | None = None):
        """Evaluate the graph; returns one Tensor or a dict of them."""
        feeds = dict(feeds or {})
        missing = [n for n in self.input_names if n not in feeds]
        if missing:
            raise GraphError(f"missing inputs: {missing}")
        values: dict[str, Tensor] = {}
        for name, v in feeds.items():
            values[name] = v if isinstance(v, Tensor) else Tensor(v)
        values.update(self.params)
        values.update(self.consts)

        order = self.topo_order()
        if outputs is None:
            wanted = [order[-1]] if order else []
        elif isinstance(outputs, str):
            wanted = [outputs]
        else:
            wanted = list(outputs)
        for w in wanted:
            if w not in self.nodes and w not in values:
                raise GraphError(f"unknown output id {w!r}")

        # restrict execution to the ancestors of the requested outputs
        needed: set[str] = set()
        frontier = [w for w in wanted if w in self.nodes]
        while frontier:
            nid = frontier.pop()
            if nid in needed:
                continue
            needed.add(nid)
            frontier.extend(d for d in self.nodes[nid].inputs if d in self.nodes)
        order = [nid for nid in order if nid in needed]

        for nid in order:
            node = self.nodes[nid]
            args = [values[i] for i in node.inputs]
            try:
                values[nid] = self._eval(nid, node, args, training, rng)
            except NodeExecutionError:
                raise
            except Exception as e:
                raise NodeExecutionError(nid, node.kind, e) from e
        if isinstance(outputs, str) or outputs is None:
            return values[wanted[0]]
        return {w: values[w] for w in wanted}

    def _eval(self, nid: str, node: OpNode, args: list[Tensor],
              training: bool, rng: np.random.Generator | None) -> Tensor:
        kind, attrs = node.kind, node.attrs
        if kind in ("conv2d", "conv3d"):
            fn = T.conv2d if kind == "conv2d" else T.conv3d
            out = fn(args[0], args[1], stride=attrs.get("stride", 1), pad=attrs.get("pad", 0))
            if len(args) > 2:
                out = T.bias_add(out, args[2])
            return out
        if kind == "transposed-conv":
            fn = T.conv_transpose2d if args[0].ndim == 4 else T.conv_transpose3d
            out = fn(args[0], args[1], stride=attrs.get("stride", 1), pad=attrs.get("pad", 0))
            if len(args) > 2:
                out = T.bias_add(out, args[2])
            return out
        if kind == "nearest-upsample":
            return T.upsample_nearest(args[0], factor=attrs.get("factor", 2))
        if kind == "average-downsample":
            return T.downsample_avg(args[0], factor=attrs.get("factor", 2))
        if kind == "dense":
            x = args[0]
            if x.ndim > 2:
                x = T.reshape(x, (x.shape[0], -1))
            out = T.dense(x, args[1], args[2] if len(args) > 2 else None)
            to = attrs.get("reshape_to")
            if to is not None:
                out = T.reshape(out, (out.shape[0], *to))
            return out
        if kind == "batch-norm":
            state = self.bn_state.get(nid)
            if state is None:
                state = BatchNormState(args[0].shape[1], dtype=args[0].dtype)
                self.bn_state[nid] = state
            return T.batch_norm(args[0], args[1], args[2], state, training=training,
                                momentum=attrs.get("momentum", 0.9), eps=attrs.get("eps", 1e-5))
        if kind == "pixelwise-feature-norm":
            return T.pixel_norm(args[0], eps=attrs.get("eps", 1e-8))
        if kind == "minibatch-stddev":
            return T.minibatch_stddev(args[0], eps=attrs.get("eps", 1e-8))
        if kind == "relu":
            return T.relu(args[0])
        if kind == "leaky-relu":
            return T.leaky_relu(args[0], slope=attrs.get("slope", 0.2))
        if kind == "elu":
            return T.elu(args[0], alpha=attrs.get("alpha", 1.0))
        if kind == "tanh":
            return T.tanh_(args[0])
        if kind == "sigmoid":
            return T.sigmoid(args[0])
        if kind == "dropout":
            rate = attrs.get("rate", 0.5)
            if training and rate > 0 and rng is None:
                raise GraphError(f"dropout node {nid!r} needs an rng in training mode")
            return T.dropout(args[0], rate, rng, training=training)
        if kind == "concat":
            return T.concat(args, axis=attrs.get("axis", 1))
        if kind == "add":
            return T.add(args[0], args[1])
        if kind == "mul":
            return T.mul(args[0], args[1])
        if kind == "mean":
            return T.mean(args[0], axis=_axis(attrs), keepdims=attrs.get("keepdims", False))
        if kind == "sum":
            return T.sum_(args[0], axis=_axis(attrs), keepdims=attrs.get("keepdims", False))
        if kind == "l1":
            return T.l1(args[0])
        if kind == "l2-norm":
            return T.l2_norm(args[0])
        raise GraphError(f"unhandled kind {kind!r}")


def _axis(attrs: dict):
    ax = attrs.get("axis")
    if isinstance(ax, list):
        return tuple(ax)
    return ax


def forward_backward(graph: Graph, inputs: Mapping[str, np.ndarray | Tensor], loss_node: str,
                     training: bool = True, rng: np.random.Generator | None = None,
                     ) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate the graph to a scalar loss and return per-parameter gradients.

    Deterministic for a fixed rng seed; raises NonFiniteError with the loss
    diagnostics when the loss leaves the finite range.
    """
    feeds = {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in inputs.items()}
    loss = graph.run(feeds, outputs=loss_node, training=training, rng=rng)
    if loss.size != 1:
        raise ShapeError(f"loss node {loss_node!r} evaluates to shape {loss.shape}, expected a scalar")
    if not np.isfinite(loss.data).all():
        raise T.NonFiniteError(
            f"loss node {loss_node!r} is non-finite ({float(loss.data)}); "
            f"inputs: {[f'{k}:{tuple(v.shape)}' for k, v in feeds.items()]}")
    wanted: dict[str, Tensor] = {n: p for n, p in graph.params.items() if p.requires_grad}
    for name, t in feeds.items():
        if t.requires_grad:
            wanted[name] = t
    order = list(wanted)
    grads = T.grad_of(loss, [wanted[n] for n in order], create_graph=False)
    return float(loss.data), {n: g.data for n, g in zip(order, grads)}


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict[str, float]
    passed: bool

    def worst(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0


def grad_check(graph: Graph, inputs: Mapping[str, np.ndarray], loss_node: str,
               tolerance: float = 1e-4, epsilon: float = 1e-5,
               training: bool = True) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    Runs in float64. Graphs with active dropout are rejected: the comparison
    needs a deterministic forward pass.
    """
    for nid, node in graph.nodes.items():
        if node.kind == "dropout" and training and node.attrs.get("rate", 0.5) > 0:
            raise GraphError(
                f"grad_check: dropout node {nid!r} is stochastic; run with rate=0 or training=False")
    g64 = graph.astype(np.float64)
    feeds64 = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    _, analytic = forward_backward(g64, feeds64, loss_node, training=training)

    def loss_value() -> float:
        out = g64.run(feeds64, outputs=loss_node, training=training)
        return float(out.data)

    per_param: dict[str, float] = {}
    for name, p in g64.params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_value()
            flat[i] = orig - epsilon
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2 * epsilon)
            an = analytic[name].reshape(-1)[i]
            denom = max(abs(an), abs(fd), 1e-8)
            err = abs(an - fd) / denom if (an != fd) else 0.0
            worst = max(worst, err)
        per_param[name] = worst
    passed = all(v < tolerance for v in per_param.values())
    return GradCheckReport(tolerance=tolerance, per_param=per_param, passed=passed)
