"""2D vector Burgers' equation with spatially varying viscosity.

    du/dt + (u . grad) u = div(nu(x) grad u)

P1 vector elements, homogeneous Dirichlet data, backward Euler in time.
Each step solves

    F_t = M (u_t - u_{t-1}) / dt + N(u_t) + K(nu) u_t = 0

with Newton; constrained rows are replaced by ``u_i = 0``.
"""
from __future__ import annotations

import numpy as np

from .. import fem
from ..graph import Tape, squared_misfit
from ..mesh import build_dofmap, quadrature
from ..pcl import DEFAULT_MAX_ITER, DEFAULT_TOL, StepFamily, time_march_operator
from .base import InverseProblem, Observation


class BurgersStep(StepFamily):
    def __init__(self, mesh, dofmap, dt: float):
        rule = quadrature(2)
        self.dt = dt
        self.cells = dofmap.cell_dofs
        self.num_dofs = dofmap.num_dofs
        self.mass = fem.MassMatrix(mesh, dofmap, rule)
        self.stiffness = fem.ScalarStiffness(mesh, dofmap, rule)
        self.table = self.stiffness.table
        self.pattern = self.stiffness.pattern
        self.M = self.mass.matrix()
        assert np.array_equal(self.M.indices, self.pattern.indices)
        self.fixed = dofmap.dirichlet_dofs
        self.free = np.ones(self.num_dofs, dtype=bool)
        self.free[self.fixed] = False
        rows = self.pattern.row_of_slot
        self._fixed_slots = ~self.free[rows]
        self._diag_slots = np.flatnonzero((rows == self.pattern.indices) & self._fixed_slots)

    def _fields(self, u):
        ue = u[self.cells].reshape(len(self.cells), -1, 2)  # (ne, node, comp)
        U = np.einsum("qk,ekc->eqc", self.table.values, ue)
        dU = np.einsum("ekc,eqkj->eqcj", ue, self.table.grads)  # d U_c / d x_j
        return U, dU

    def _scatter(self, local):
        return np.bincount(self.cells.ravel(), weights=local.reshape(len(self.cells), -1).ravel(),
                           minlength=self.num_dofs)

    def residual(self, u, u_prev, nu):
        U, dU = self._fields(u)
        conv = np.einsum("eq,qk,eqj,eqcj->ekc", self.table.wdet, self.table.values, U, dU)
        R = (self.M @ (u - u_prev)) / self.dt + self._scatter(conv) + self.stiffness.assemble(nu) @ u
        R[self.fixed] = u[self.fixed]
        return R

    def jacobian(self, u, u_prev, nu):
        U, dU = self._fields(u)
        V, G, w = self.table.values, self.table.grads, self.table.wdet
        # (du . grad) u + (u . grad) du, for du = phi_l e_d
        term1 = np.einsum("eq,qk,ql,eqcd->ekcld", w, V, V, dU)
        adv = np.einsum("eqj,eqlj->eql", U, G)
        term2 = np.einsum("eq,qk,eql,cd->ekcld", w, V, adv, np.eye(2))
        ne, n = len(self.cells), V.shape[1]
        conv = self.pattern.assemble((term1 + term2).reshape(ne, 2 * n, 2 * n))
        J = conv
        J.data += self.M.data / self.dt + self.stiffness.assemble(nu).data
        J.data[self._fixed_slots] = 0.0
        J.data[self._diag_slots] = 1.0
        return J

    def param_vjp(self, u, u_prev, nu, lam):
        z = np.where(self.free, lam, 0.0)
        _, dU = self._fields(u)
        _, dZ = self._fields(z)
        return (self.table.wdet * np.einsum("eqcj,eqcj->eq", dU, dZ)).ravel()

    def prev_vjp(self, u, u_prev, nu, lam):
        z = np.where(self.free, lam, 0.0)
        return -(self.M.T @ z) / self.dt


class Burgers(InverseProblem):
    kind = "burgers"
    truth_scale = 0.1

    def __init__(self, n: int, steps: int = 10, dt: float = 0.05, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        super().__init__(n)
        self.steps, self.dt = steps, dt
        self.tol, self.max_iter = tol, max_iter
        dofmap = build_dofmap(self.mesh, "P1-vector")
        wall = np.unique(np.concatenate([dofmap.side_dofs(self.mesh, s) for s in
                                         ("left", "right", "bottom", "top")]))
        self.dofmap = dofmap.with_dirichlet(wall, 0.0)
        self.family = BurgersStep(self.mesh, self.dofmap, dt)
        self.table = self.family.table
        x, y = self.dofmap.dof_coords.T
        u0 = np.where(np.arange(self.dofmap.num_dofs) % 2 == 0,
                      np.sin(np.pi * x) * np.sin(np.pi * y), 0.0)
        u0[wall] = 0.0
        self.initial_state = u0
        self.newton_log = None

    def record_forward(self, tape: Tape, nu):
        op = time_march_operator(self.family, self.initial_state, self.steps, self.tol,
                                 self.max_iter, self.newton_log)
        return tape.record(op, nu)

    def record_loss(self, tape: Tape, state, obs: Observation):
        return tape.record(squared_misfit(obs.values), state)

    def observe(self, trajectory) -> Observation:
        trajectory = np.asarray(trajectory, dtype=float)
        return Observation(np.arange(trajectory.shape[1]), trajectory.copy())

    def energy(self, trajectory) -> np.ndarray:
        """Discrete ``||u_t||_M`` for ``t = 0 .. T``."""
        states = np.vstack([self.initial_state, np.asarray(trajectory)])
        return np.sqrt(np.einsum("ti,ti->t", states, (self.family.M @ states.T).T))

    def metadata(self) -> dict:
        meta = super().metadata()
        meta.update(steps=self.steps, dt=self.dt, element="P1-vector", quadrature_degree=2,
                    initial_condition="(sin(pi x) sin(pi y), 0)", boundary="u = 0",
                    newton_tol=self.tol, newton_max_iter=self.max_iter)
        return meta

