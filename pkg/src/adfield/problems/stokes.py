"""Stokes flow with spatially varying viscosity, observed through pressure only.

P2 velocity / P0 pressure.  The saddle-point system is
``[[A(nu), -B], [B^T, 0]] [U; P] = [F; 0]``.  The pressure gauge is fixed by
pinning pressure dof 0; the loss compares mean-free pressures.

With homogeneous velocity data the pressure is invariant under
``nu -> c nu`` (velocity rescales by ``1/c``), so the viscosity scale could
not be recovered.  The default boundary velocity ``(x^2, -2xy)`` is
divergence-free with zero net flux and breaks that invariance.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .. import fem, la
from ..graph import Operator, Tape
from ..mesh import build_dofmap, quadrature
from .base import InverseProblem, Observation


def default_boundary_velocity(x, y):
    return np.stack([x * x, -2.0 * x * y], axis=-1)


def zero_boundary_velocity(x, y):
    return np.zeros(np.shape(x) + (2,))


BOUNDARY_VELOCITIES = {"quadratic": default_boundary_velocity, "zero": zero_boundary_velocity}


class Stokes(InverseProblem):
    kind = "stokes"
    truth_scale = 0.1

    def __init__(self, n: int, force=(0.0, -1.0), boundary_velocity: str = "quadratic"):
        super().__init__(n)
        self.force = tuple(float(f) for f in force)
        self.boundary_velocity = boundary_velocity
        mesh = self.mesh
        self.velocity = build_dofmap(mesh, "P2-vector")
        self.pressure = build_dofmap(mesh, "P0")
        nv, npr = self.velocity.num_dofs, self.pressure.num_dofs
        self.num_velocity = nv
        self.stiffness = fem.ScalarStiffness(mesh, self.velocity, quadrature(4))
        self.table = self.stiffness.table
        self.B = fem.assemble_divergence(mesh, self.velocity, self.pressure)

        A0 = self.stiffness.assemble(np.ones(self.stiffness.num_coeffs))
        Bc = self.B.tocoo()
        rows_a, cols_a = la.row_indices(A0), A0.indices
        self.block = la.SparsePattern(
            np.concatenate([rows_a, Bc.row, nv + Bc.col]),
            np.concatenate([cols_a, nv + Bc.col, Bc.row]), (nv + npr, nv + npr))
        self._b_vals = np.concatenate([-Bc.data, Bc.data])
        self._nnz_a = A0.nnz

        wall = np.unique(np.concatenate([self.velocity.side_dofs(mesh, s) for s in
                                         ("left", "right", "bottom", "top")]))
        xy = self.velocity.dof_coords[wall]
        ub = BOUNDARY_VELOCITIES[boundary_velocity](xy[:, 0], xy[:, 1])
        g = ub[np.arange(len(wall)), wall % 2]
        dofs = np.concatenate([wall, [nv]])
        vals = np.concatenate([g, [0.0]])
        load = np.concatenate([fem.assemble_load(mesh, self.velocity, self.force), np.zeros(npr)])
        self.load = load
        self.bc = fem.DirichletSystem(self._block_matrix(A0), dofs, vals)
        self.pressure_dofs = nv + np.arange(npr)

    def _block_matrix(self, A) -> sp.csr_matrix:
        return self.block.assemble(np.concatenate([A.data, self._b_vals]))

    def _block_op(self) -> Operator:
        nnz = self._nnz_a
        return Operator("saddle_block", lambda A: (self._block_matrix(A), None),
                        lambda ctx, g: (self.block.gather(g)[:nnz],))

    def record_forward(self, tape: Tape, nu):
        A = tape.record(self.stiffness.operator(), nu)
        K = tape.record(self._block_op(), A)
        Kd = tape.record(self.bc.matrix_operator(), K)
        b = tape.record(self.bc.rhs_operator(), K, tape.constant(self.load))
        return tape.record(la.SOLVE, Kd, b)

    def split(self, state):
        state = np.asarray(state)
        return state[: self.num_velocity], state[self.num_velocity:]

    def record_loss(self, tape: Tape, state, obs: Observation):
        return tape.record(mean_free_misfit(obs.values, obs.indices), state)

    def observe(self, state) -> Observation:
        p = np.asarray(state)[self.pressure_dofs]
        return Observation(self.pressure_dofs.copy(), p - p.mean())

    def divergence_residual(self, state) -> np.ndarray:
        U, _ = self.split(state)
        return self.B.T @ U

    def metadata(self) -> dict:
        meta = super().metadata()
        meta.update(force=list(self.force), boundary_velocity=self.boundary_velocity,
                    element="P2-vector/P0", quadrature_degree=4,
                    pressure_gauge="dof 0 pinned, mean-free loss")
        return meta


def mean_free_misfit(observed, indices) -> Operator:
    """``sum((p - mean(p) - observed)**2)`` over the observed entries ``p``."""
    observed = np.asarray(observed, dtype=float)

    def forward(u):
        p = np.asarray(u)[indices]
        r = p - p.mean() - observed
        return float(r @ r), (len(u), r)

    def vjp(ctx, g):
        n, r = ctx
        out = np.zeros(n)
        out[indices] = 2.0 * g * (r - r.mean())
        return (out,)

    return Operator("loss", forward, vjp)
