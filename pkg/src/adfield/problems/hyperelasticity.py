"""Compressible neo-Hookean plate with a spatially varying Young's modulus.

Stored energy per unit reference area::

    psi = mu/2 (tr(F^T F) - 2) - mu ln J + lam/2 (ln J)^2,   F = I + grad u

with ``mu = E / (2 (1 + nu))`` and ``lam = E nu / ((1 + nu)(1 - 2 nu))``.
The plate is clamped on the left, pulled by a prescribed displacement on
the right and loaded by a uniform body force.  Without the body force the
equilibrium displacement would not depend on the scale of ``E``.
"""
from __future__ import annotations

import numpy as np

from .. import fem, la
from ..errors import NonphysicalStateError
from ..graph import Tape, squared_misfit
from ..mesh import build_dofmap, quadrature
from ..pcl import DEFAULT_MAX_ITER, DEFAULT_TOL, NonlinearProblem, newton_operator
from .base import InverseProblem, Observation


def neo_hookean_stress(F, lam, mu):
    """First Piola-Kirchhoff stress, and the pieces the tangent needs."""
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    Finv = np.empty_like(F)
    Finv[..., 0, 0] = F[..., 1, 1]
    Finv[..., 1, 1] = F[..., 0, 0]
    Finv[..., 0, 1] = -F[..., 0, 1]
    Finv[..., 1, 0] = -F[..., 1, 0]
    Finv /= det[..., None, None]
    FinvT = np.swapaxes(Finv, -1, -2)
    logJ = np.log(det)
    P = mu[..., None, None] * (F - FinvT) + (lam * logJ)[..., None, None] * FinvT
    return P, Finv, logJ


def neo_hookean_tangent(Finv, logJ, lam, mu):
    """``dP_iJ / dF_kL`` as an array indexed ``[..., i, J, k, L]``."""
    eye = np.eye(2)
    A = mu[..., None, None, None, None] * np.einsum("ik,JL->iJkL", eye, eye)
    A = A + lam[..., None, None, None, None] * np.einsum("...Ji,...Lk->...iJkL", Finv, Finv)
    A = A + (mu - lam * logJ)[..., None, None, None, None] * np.einsum("...Jk,...Li->...iJkL",
                                                                      Finv, Finv)
    return A


class NeoHookeanResidual(NonlinearProblem):
    """Residual of the discrete equilibrium equations, constrained rows replaced by ``u - g``."""

    def __init__(self, mesh, dofmap, table, lambda_per_E, mu_per_E, body_force):
        self.dofmap = dofmap
        self.table = table
        self.lambda_per_E = lambda_per_E
        self.mu_per_E = mu_per_E
        self.cells = dofmap.cell_dofs
        self.num_dofs = dofmap.num_dofs
        self.external = fem.assemble_load(mesh, dofmap, body_force, quadrature(4))
        self.fixed = dofmap.dirichlet_dofs
        self.fixed_values = dofmap.dirichlet_values
        self.free = np.ones(self.num_dofs, dtype=bool)
        self.free[self.fixed] = False
        ne, nloc = self.cells.shape
        rows = np.broadcast_to(self.cells[:, :, None], (ne, nloc, nloc))
        cols = np.broadcast_to(self.cells[:, None, :], (ne, nloc, nloc))
        self.pattern = la.SparsePattern(rows, cols, (self.num_dofs,) * 2)
        slot_rows = self.pattern.row_of_slot
        self._fixed_slots = ~self.free[slot_rows]
        self._diag_slots = np.flatnonzero((slot_rows == self.pattern.indices) & self._fixed_slots)

    def _kinematics(self, u):
        ue = u[self.cells].reshape(len(self.cells), -1, 2)  # (ne, n, comp)
        grad_u = np.einsum("ekc,eqkJ->eqcJ", ue, self.table.grads)
        return np.eye(2) + grad_u

    def _lame(self, E):
        E = np.asarray(E, dtype=float).reshape(self.table.wdet.shape)
        return self.lambda_per_E * E, self.mu_per_E * E

    def _stress(self, u, E):
        F = self._kinematics(u)
        det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        if np.any(det <= 0) or not np.all(np.isfinite(det)):
            bad = int(np.flatnonzero(~(det.ravel() > 0))[0])
            raise NonphysicalStateError(f"det F <= 0 at quadrature point {bad}", quad_point=bad)
        lam, mu = self._lame(E)
        P, Finv, logJ = neo_hookean_stress(F, lam, mu)
        return F, P, Finv, logJ, lam, mu

    def residual(self, u, E):
        _, P, *_ = self._stress(u, E)
        local = np.einsum("eq,eqcJ,eqkJ->ekc", self.table.wdet, P, self.table.grads)
        R = np.bincount(self.cells.ravel(), weights=local.reshape(len(self.cells), -1).ravel(),
                        minlength=self.num_dofs) - self.external
        R[self.fixed] = u[self.fixed] - self.fixed_values
        return R

    def jacobian(self, u, E):
        _, _, Finv, logJ, lam, mu = self._stress(u, E)
        A = neo_hookean_tangent(Finv, logJ, lam, mu)
        G = self.table.grads
        if self.table.kind == "P1":
            # gradients are constant per element: integrate the tangent first
            G0 = G[:, 0]
            A_int = np.einsum("eq,eqcJdL->ecJdL", self.table.wdet, A)
            local = np.einsum("ekJ,ecJdL,elL->ekcld", G0, A_int, G0, optimize=True)
        else:
            GA = np.einsum("eqkJ,eqcJdL->eqkcdL", G * self.table.wdet[..., None, None], A)
            local = np.einsum("eqkcdL,eqlL->ekcld", GA, G)
        ne, n = G.shape[0], G.shape[2]
        K = self.pattern.assemble(local.reshape(ne, 2 * n, 2 * n))
        K.data[self._fixed_slots] = 0.0
        K.data[self._diag_slots] = 1.0
        return K

    def param_vjp(self, u, E, lam_adj):
        F, _, Finv, logJ, *_ = self._stress(u, E)
        z = np.where(self.free, lam_adj, 0.0)
        ze = z[self.cells].reshape(len(self.cells), -1, 2)
        grad_z = np.einsum("ekc,eqkJ->eqcJ", ze, self.table.grads)
        FinvT = np.swapaxes(Finv, -1, -2)
        dP_dE = self.mu_per_E * (F - FinvT) + self.lambda_per_E * logJ[..., None, None] * FinvT
        return (self.table.wdet * np.einsum("eqcJ,eqcJ->eq", dP_dE, grad_z)).ravel()


class Hyperelasticity(InverseProblem):
    kind = "hyperelasticity"
    truth_scale = 1.0

    def __init__(self, n: int, poisson: float = 0.3, stretch=(0.05, 0.0),
                 body_force=(0.0, -0.1), tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        super().__init__(n)
        self.material = fem.ElasticMaterial(poisson, "standard")
        self.stretch = tuple(float(s) for s in stretch)
        self.body_force = tuple(float(b) for b in body_force)
        self.tol, self.max_iter = tol, max_iter
        dofmap = build_dofmap(self.mesh, "P1-vector")
        left = dofmap.side_dofs(self.mesh, "left")
        right = dofmap.side_dofs(self.mesh, "right")
        dofmap = dofmap.with_dirichlet(np.concatenate([left, right]),
                                       np.concatenate([np.zeros(len(left)),
                                                       np.array(self.stretch)[right % 2]]))
        self.dofmap = dofmap
        self.table = fem.shape_table(self.mesh, "P1", quadrature(4))
        self.residual = NeoHookeanResidual(self.mesh, dofmap, self.table,
                                           self.material.lambda_per_E, self.material.mu_per_E,
                                           self.body_force)
        # initial guess: the prescribed displacement spread linearly in x
        x = dofmap.dof_coords[:, 0]
        self.initial_state = x * np.array(self.stretch)[np.arange(dofmap.num_dofs) % 2]
        self.initial_state[dofmap.dirichlet_dofs] = dofmap.dirichlet_values
        self.newton_log = None

    def record_forward(self, tape: Tape, E):
        op = newton_operator(self.residual, self.initial_state, self.tol, self.max_iter,
                             self.newton_log)
        return tape.record(op, E)

    def record_loss(self, tape: Tape, state, obs: Observation):
        return tape.record(squared_misfit(obs.values, obs.indices), state)

    def observe(self, state) -> Observation:
        return Observation(np.arange(len(state)), np.array(state, dtype=float))

    def metadata(self) -> dict:
        meta = super().metadata()
        meta.update(poisson=self.material.poisson, lame_mode="standard",
                    right_displacement=list(self.stretch), body_force=list(self.body_force),
                    clamped="left", element="P1-vector", quadrature_degree=4,
                    newton_tol=self.tol, newton_max_iter=self.max_iter)
        return meta
