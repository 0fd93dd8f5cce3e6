"""Shared machinery for the benchmark inverse problems."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..graph import Node, Tape
from ..mesh import build_unit_square_mesh
from ..nn import DiscretizedField, MlpField


def ground_truth(x, y):
    """Smooth positive bump: 2 at the centre, about 1.08 at the corners."""
    return 1.0 + np.exp(-5.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))


@dataclass
class Observation:
    """Observed state entries.

    ``values`` is ``(len(indices),)`` for static problems and
    ``(steps, len(indices))`` for time-dependent ones.
    """
    indices: np.ndarray
    values: np.ndarray

    @property
    def is_transient(self) -> bool:
        return np.ndim(self.values) == 2

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.is_transient:
                w.writerow(["step", "dof_index", "value"])
                for t, row in enumerate(self.values, start=1):
                    w.writerows((t, i, repr(float(v))) for i, v in zip(self.indices, row))
            else:
                w.writerow(["dof_index", "value"])
                w.writerows((i, repr(float(v))) for i, v in zip(self.indices, self.values))

    @classmethod
    def read_csv(cls, path) -> "Observation":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if header[0] == "step":
            steps = sorted({int(r[0]) for r in rows})
            indices = np.array([int(r[1]) for r in rows if int(r[0]) == steps[0]])
            values = np.array([float(r[2]) for r in rows]).reshape(len(steps), len(indices))
        else:
            indices = np.array([int(r[0]) for r in rows])
            values = np.array([float(r[1]) for r in rows])
        return cls(indices, values)


class InverseProblem:
    """Forward model ``nu_at_quad -> state`` plus a misfit loss, built on a tape.

    Subclasses set ``kind``, ``truth_scale``, ``table`` (the shape table whose
    quadrature points carry the coefficient) and implement
    ``record_forward``, ``record_loss`` and ``observe``.
    """

    kind = "abstract"
    truth_scale = 1.0

    def __init__(self, n: int):
        if n < 1:
            raise InvalidArgumentError(f"mesh resolution must be positive, got {n}")
        self.n = n
        self.mesh = build_unit_square_mesh(n)

    @property
    def quad_points(self) -> np.ndarray:
        return self.table.quad_points

    @property
    def quad_per_element(self) -> int:
        return self.table.num_quad

    @property
    def num_coefficients(self) -> int:
        return len(self.quad_points)

    def truth(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        return self.truth_scale * ground_truth(points[:, 0], points[:, 1])

    def truth_at_quad(self) -> np.ndarray:
        return self.truth(self.quad_points)

    def record_forward(self, tape: Tape, nu: Node) -> Node:
        raise NotImplementedError

    def record_loss(self, tape: Tape, state: Node, obs: Observation) -> Node:
        raise NotImplementedError

    def observe(self, state) -> Observation:
        raise NotImplementedError

    def forward(self, nu_at_quad):
        tape = Tape()
        return self.record_forward(tape, tape.constant(np.asarray(nu_at_quad, dtype=float))).value

    def synthesize_observations(self, nu_at_quad=None) -> Observation:
        nu = self.truth_at_quad() if nu_at_quad is None else nu_at_quad
        return self.observe(self.forward(nu))

    def record_field(self, tape: Tape, param, theta: Node) -> Node:
        if isinstance(param, MlpField):
            return param.record(tape, theta, self.quad_points)
        if isinstance(param, DiscretizedField):
            return param.record(tape, theta, self.mesh.num_elements)
        raise InvalidArgumentError(f"unsupported parameterization {type(param).__name__}")

    def loss_and_grad(self, param, obs: Observation, theta=None):
        """Loss and its gradient with respect to the parameterization's raw vector."""
        tape = Tape()
        th = tape.parameter("theta", param.theta if theta is None else theta)
        nu = self.record_field(tape, param, th)
        loss = self.record_loss(tape, self.record_forward(tape, nu), obs)
        grads = tape.backward(loss)
        return float(loss.value), grads["theta"]

    def loss(self, param, obs: Observation, theta=None) -> float:
        tape = Tape()
        th = tape.constant(np.asarray(param.theta if theta is None else theta, dtype=float))
        nu = self.record_field(tape, param, th)
        return float(self.record_loss(tape, self.record_forward(tape, nu), obs).value)

    def metadata(self) -> dict:
        return {"problem": self.kind, "mesh_n": self.n, "truth_scale": self.truth_scale,
                "truth": "1 + exp(-5((x-0.5)^2 + (y-0.5)^2))",
                "quad_per_element": self.quad_per_element}
