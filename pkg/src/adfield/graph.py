"""Coarse-grained reverse-mode tape.

Nodes are solver-scale operators (field evaluation, assembly, linear or
Newton solves, time marching, losses).  Forward values are computed when a
node is recorded; ``Tape.backward`` replays the vector-Jacobian products in
reverse order.

Values are numpy arrays, Python floats or CSR matrices.  The adjoint of a
CSR matrix is an array aligned with its ``data`` (pattern entries only).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, UnsupportedOperatorError


@dataclass(frozen=True)
class Operator:
    """``forward(*values) -> (output, ctx)``; ``vjp(ctx, out_bar) -> tuple`` of input adjoints.

    A ``None`` entry in the tuple means no contribution to that input.
    """
    tag: str
    forward: Callable
    vjp: Callable | None = None


@dataclass(eq=False)
class Node:
    index: int
    tag: str
    inputs: tuple
    value: Any
    ctx: Any = None
    op: Operator | None = None
    name: str | None = None  # set for parameter leaves

    @property
    def is_leaf(self) -> bool:
        return self.op is None


def _zeros_like_adjoint(value):
    if sp.issparse(value):
        return np.zeros(value.nnz)
    return np.zeros_like(np.asarray(value, dtype=float))


def _output_len(value) -> int:
    if sp.issparse(value):
        return value.nnz
    return int(np.size(value))


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    def parameter(self, name: str, value) -> Node:
        if name in self.params:
            raise InvalidArgumentError(f"parameter {name!r} already registered")
        node = Node(len(self.nodes), "parameter", (), np.array(value, dtype=float), name=name)
        self.nodes.append(node)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        node = Node(len(self.nodes), "constant", (), value)
        self.nodes.append(node)
        return node

    def record(self, op: Operator, *inputs: Node) -> Node:
        for x in inputs:
            if not isinstance(x, Node) or x.index >= len(self.nodes) or self.nodes[x.index] is not x:
                raise InvalidArgumentError(f"input to {op.tag!r} is not on this tape")
        index = len(self.nodes)
        try:
            value, ctx = op.forward(*(x.value for x in inputs))
        except Exception as exc:
            exc.node_index = index
            exc.node_tag = op.tag
            raise
        node = Node(index, op.tag, tuple(inputs), value, ctx, op)
        self.nodes.append(node)
        return node

    def backward(self, loss: Node) -> dict:
        """Gradients of the scalar ``loss`` with respect to every parameter leaf."""
        if np.size(loss.value) != 1 or sp.issparse(loss.value):
            raise InvalidArgumentError("backward needs a scalar loss node")
        adj = {loss.index: np.ones_like(np.asarray(loss.value, dtype=float))}
        for node in reversed(self.nodes[: loss.index + 1]):
            bar = adj.pop(node.index, None)
            if bar is None or node.is_leaf:
                if node.is_leaf and bar is not None and node.name is not None:
                    adj[node.index] = bar  # keep leaf adjoints for collection
                continue
            if node.op.vjp is None:
                raise UnsupportedOperatorError(f"operator {node.tag!r} has no vjp rule")
            in_bars = node.op.vjp(node.ctx, bar)
            if len(in_bars) != len(node.inputs):
                raise InvalidArgumentError(f"vjp of {node.tag!r} returned {len(in_bars)} adjoints "
                                           f"for {len(node.inputs)} inputs")
            for x, xb in zip(node.inputs, in_bars):
                if xb is None or x.tag == "constant":
                    continue
                if x.index in adj:
                    adj[x.index] = adj[x.index] + xb
                else:
                    adj[x.index] = np.array(xb, dtype=float)
        grads = {}
        for name, leaf in self.params.items():
            grads[name] = adj.get(leaf.index, _zeros_like_adjoint(leaf.value))
        return grads

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for node in self.nodes:
                ins = ",".join(str(x.index) for x in node.inputs) or "-"
                fh.write(f"{node.index} {node.tag} {ins} {_output_len(node.value)}\n")


def record(tape: Tape, op: Operator, *inputs: Node) -> Node:
    return tape.record(op, *inputs)


def backward(tape: Tape, loss: Node) -> dict:
    return tape.backward(loss)


# small elementwise operators, used by tests and loss assembly

def _add_fwd(a, b):
    return np.asarray(a) + np.asarray(b), None


ADD = Operator("add", _add_fwd, lambda ctx, g: (g, g))


def _dot_fwd(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(a @ b), (a, b)


DOT = Operator("dot", _dot_fwd, lambda ctx, g: (g * ctx[1], g * ctx[0]))

SUM = Operator("sum", lambda a: (float(np.sum(a)), np.shape(a)),
               lambda ctx, g: (np.full(ctx, float(g)),))


def squared_misfit(observed, indices=None) -> Operator:
    """``sum((u.ravel()[indices] - observed.ravel())**2)``; ``u`` may have any shape."""
    observed = np.asarray(observed, dtype=float).ravel()

    def forward(u):
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        r = (flat if indices is None else flat[indices]) - observed
        return float(r @ r), (u.shape, r)

    def vjp(ctx, g):
        shape, r = ctx
        ubar = np.zeros(int(np.prod(shape)))
        if indices is None:
            ubar += 2.0 * g * r
        else:
            np.add.at(ubar, indices, 2.0 * g * r)
        return (ubar.reshape(shape),)

    return Operator("loss", forward, vjp)
