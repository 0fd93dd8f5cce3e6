"""Parameterizations of an unknown scalar field.

``MlpField`` is a fully connected tanh network mapping ``(x, y)`` to a
scalar, plus a constant positive output shift.  ``DiscretizedField`` holds
one trainable value per quadrature point or per element, optionally passed
through ``abs`` to keep it nonnegative.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .graph import Node, Operator, Tape

DEFAULT_SIZES = (2, 20, 20, 20, 1)


def num_weights(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class MlpField:
    theta: np.ndarray
    sizes: tuple = DEFAULT_SIZES
    output_shift: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if len(self.theta) != num_weights(self.sizes):
            raise InvalidArgumentError(
                f"{len(self.theta)} weights do not match layer sizes {self.sizes}")
        if not self.output_shift > 0:
            raise InvalidArgumentError("output_shift must be positive")

    def layers(self, theta=None):
        """Split the flat vector into ``(W, b)`` pairs with ``W`` of shape (out, in)."""
        theta = self.theta if theta is None else theta
        out, pos = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[pos:pos + a * b].reshape(b, a)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out

    def with_theta(self, theta) -> "MlpField":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def __call__(self, coords) -> np.ndarray:
        return mlp_forward(self, coords)

    def record(self, tape: Tape, theta: Node, coords) -> Node:
        coords = np.asarray(coords, dtype=float)

        def forward(th):
            layers = self.layers(th)
            out, acts = _forward(layers, coords, self.output_shift)
            return out, (layers, acts)

        def vjp(ctx, vbar):
            return (_backward(*ctx, vbar),)

        return tape.record(Operator("mlp", forward, vjp), theta)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            sizes = " ".join(str(s) for s in self.sizes)
            fh.write(f"mlp {sizes} shift={self.output_shift!r} seed={self.seed}\n")
            for v in self.theta:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def read(cls, path) -> "MlpField":
        with open(path) as fh:
            head = fh.readline().split()
            if not head or head[0] != "mlp":
                raise InvalidArgumentError(f"{path} is not an mlp checkpoint")
            sizes = tuple(int(s) for s in head[1:] if "=" not in s)
            meta = dict(s.split("=", 1) for s in head[1:] if "=" in s)
            theta = np.array([float(line) for line in fh if line.strip()])
        seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
        return cls(theta, sizes, float(meta.get("shift", 1.0)), seed)


def _forward(layers, coords, shift):
    acts = [coords]
    h = coords
    for W, b in layers[:-1]:
        h = np.tanh(h @ W.T + b)
        acts.append(h)
    W, b = layers[-1]
    return (h @ W.T + b)[:, 0] + shift, acts


def _backward(layers, acts, vbar):
    grads = []
    delta = np.asarray(vbar, dtype=float)[:, None]
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h = acts[i]
        grads.append((delta.sum(axis=0), delta.T @ h))
        if i:
            delta = (delta @ W) * (1.0 - h * h)
    flat = []
    for db, dW in reversed(grads):
        flat.extend([dW.ravel(), db])
    return np.concatenate(flat)


def mlp_forward(field: MlpField, coords) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    return _forward(field.layers(), coords, field.output_shift)[0]


def mlp_vjp(field: MlpField, coords, vbar) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    vbar = np.asarray(vbar, dtype=float).ravel()
    if len(vbar) != len(coords):
        raise InvalidArgumentError(f"{len(vbar)} adjoints for {len(coords)} points")
    layers = field.layers()
    _, acts = _forward(layers, coords, field.output_shift)
    return _backward(layers, acts, vbar)


def init_mlp(seed: int, output_shift: float = 1.0, sizes=DEFAULT_SIZES) -> MlpField:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return MlpField(np.concatenate(parts), tuple(sizes), float(output_shift), seed)


GRANULARITIES = ("quad_points", "per_element")
TRANSFORMS = ("abs", "none")


@dataclass(frozen=True)
class DiscretizedField:
    theta: np.ndarray
    quad_per_element: int
    granularity: str = "quad_points"
    transform: str = "abs"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise InvalidArgumentError(f"unknown granularity {self.granularity!r}")
        if self.transform not in TRANSFORMS:
            raise InvalidArgumentError(f"unknown transform {self.transform!r}")

    def with_theta(self, theta) -> "DiscretizedField":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def num_values(self, num_elements: int) -> int:
        if self.granularity == "per_element":
            return num_elements
        return num_elements * self.quad_per_element

    def record(self, tape: Tape, theta: Node, num_elements: int) -> Node:
        op = Operator("discretized_field",
                      lambda th: (self._eval(th, num_elements), th),
                      lambda th, g: (self._vjp(th, g),))
        return tape.record(op, theta)

    def _eval(self, theta, num_elements):
        theta = np.asarray(theta, dtype=float)
        if len(theta) != self.num_values(num_elements):
            raise InvalidArgumentError(
                f"{len(theta)} values do not match {self.granularity} on {num_elements} elements")
        v = np.abs(theta) if self.transform == "abs" else theta.copy()
        if self.granularity == "per_element":
            v = np.repeat(v, self.quad_per_element)
        return v

    def _vjp(self, theta, vbar):
        vbar = np.asarray(vbar, dtype=float)
        if self.granularity == "per_element":
            vbar = vbar.reshape(-1, self.quad_per_element).sum(axis=1)
        if self.transform == "abs":
            vbar = vbar * np.sign(theta)
        return vbar

    def values_at_quad(self, num_elements: int) -> np.ndarray:
        return self._eval(self.theta, num_elements)


def discretized_eval(field: DiscretizedField, num_elements: int) -> np.ndarray:
    return field.values_at_quad(num_elements)


def discretized_vjp(field: DiscretizedField, vbar) -> np.ndarray:
    return field._vjp(field.theta, vbar)


def sample_field(field, points, mesh=None, quad_points=None) -> np.ndarray:
    """Evaluate a parameterization at arbitrary points of the square.

    Discretized fields are piecewise constant: the value of the containing
    element, or of the nearest quadrature point inside it.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(field, MlpField):
        return mlp_forward(field, points)
    if mesh is None:
        raise InvalidArgumentError("discretized fields need a mesh to be sampled")
    nq = field.quad_per_element
    vals = field.values_at_quad(mesh.num_elements).reshape(-1, nq)
    elem = mesh.locate(points)
    if field.granularity == "per_element":
        return vals[elem, 0]
    if quad_points is None:
        raise InvalidArgumentError("per-quadrature-point fields need the quadrature points")
    qp = np.asarray(quad_points).reshape(-1, nq, 2)[elem]
    nearest = np.argmin(((qp - points[:, None, :]) ** 2).sum(axis=2), axis=1)
    return vals[elem, nearest]
