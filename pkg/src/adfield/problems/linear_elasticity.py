"""Static linear elasticity with a spatially varying Young's modulus.

Cantilever setup: clamped on the left side, a downward traction on the
right side, the other sides traction-free, no body force.
"""
from __future__ import annotations

import numpy as np

from .. import fem, la
from ..graph import Tape, squared_misfit
from ..mesh import build_dofmap, quadrature
from .base import InverseProblem, Observation


class LinearElasticity(InverseProblem):
    kind = "linear_elasticity"
    truth_scale = 1.0

    def __init__(self, n: int, poisson: float = 0.3, mode: str = "poisson-scaled",
                 traction=(0.0, -0.1)):
        super().__init__(n)
        self.material = fem.ElasticMaterial(poisson, mode)
        self.traction = tuple(float(t) for t in traction)
        self.dofmap = build_dofmap(self.mesh, "P1-vector")
        self.stiffness = fem.ElasticityStiffness(self.mesh, self.dofmap, self.material, quadrature(2))
        self.table = self.stiffness.table
        self.load = fem.assemble_boundary_traction(self.mesh, self.dofmap, "right", self.traction)
        clamped = self.dofmap.side_dofs(self.mesh, "left")
        self.dofmap = self.dofmap.with_dirichlet(clamped, 0.0)
        template = self.stiffness.assemble(np.ones(self.stiffness.num_coeffs))
        self.bc = fem.DirichletSystem(template, self.dofmap.dirichlet_dofs,
                                      self.dofmap.dirichlet_values)

    def record_forward(self, tape: Tape, E):
        K = tape.record(self.stiffness.operator(), E)
        Kd = tape.record(self.bc.matrix_operator(), K)
        b = tape.record(self.bc.rhs_operator(), K, tape.constant(self.load))
        return tape.record(la.SOLVE, Kd, b)

    def record_loss(self, tape: Tape, state, obs: Observation):
        return tape.record(squared_misfit(obs.values, obs.indices), state)

    def observe(self, state) -> Observation:
        return Observation(np.arange(len(state)), np.array(state, dtype=float))

    def metadata(self) -> dict:
        meta = super().metadata()
        meta.update(poisson=self.material.poisson, lame_mode=self.material.mode,
                    traction_right=list(self.traction), clamped="left", element="P1-vector",
                    quadrature_degree=2)
        return meta
