"""Shape functions and differentiable finite-element assembly.

Coefficient fields enter every assembler as values at quadrature points,
laid out element-major: entry ``e * nq + q`` belongs to quadrature point
``q`` of element ``e``.  Each assembler precomputes its kernel tensor and
sparsity pattern once so repeated assembly (one per optimizer evaluation)
is a single contraction plus a ``bincount``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import la
from .errors import InvalidArgumentError
from .graph import Operator
from .mesh import DofMap, Mesh, QuadratureRule, edge_quadrature, quadrature


def shape_eval(kind: str, point):
    """Values and reference gradients of the scalar basis at a reference point."""
    xi, eta = (float(v) for v in point)
    L = np.array([1.0 - xi - eta, xi, eta])
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if kind == "P0":
        return np.ones(1), np.zeros((1, 2))
    if kind == "P1":
        return L, dL
    if kind == "P2":
        pairs = ((0, 1), (1, 2), (2, 0))
        vals = np.concatenate([L * (2.0 * L - 1.0), [4.0 * L[a] * L[b] for a, b in pairs]])
        grads = np.vstack([(4.0 * L[:, None] - 1.0) * dL,
                           [4.0 * (L[a] * dL[b] + L[b] * dL[a]) for a, b in pairs]])
        return vals, grads
    raise InvalidArgumentError(f"no scalar basis for kind {kind!r}")


@dataclass(frozen=True)
class ShapeTable:
    """Basis data tabulated at every quadrature point of every element."""
    kind: str
    values: np.ndarray  # (nq, nloc)
    grads: np.ndarray  # (ne, nq, nloc, 2) physical gradients
    wdet: np.ndarray  # (ne, nq) weight times |det J|
    points: np.ndarray  # (ne, nq, 2) physical coordinates

    @property
    def num_quad(self) -> int:
        return self.values.shape[0]

    @property
    def quad_points(self) -> np.ndarray:
        return self.points.reshape(-1, 2)


def shape_table(mesh: Mesh, kind: str, rule: QuadratureRule) -> ShapeTable:
    kind = kind.split("-")[0]
    tab = [shape_eval(kind, p) for p in rule.points]
    values = np.array([v for v, _ in tab])
    ref_grads = np.array([g for _, g in tab])

    p = mesh.nodes[mesh.elements]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.linalg.inv(jac)
    grads = np.einsum("qka,eab->eqkb", ref_grads, inv)
    wdet = np.abs(det)[:, None] * rule.weights[None, :]
    lin, _ = zip(*(shape_eval("P1", q) for q in rule.points))
    points = np.einsum("qi,eix->eqx", np.array(lin), p)
    return ShapeTable(kind, values, grads, wdet, points)


def default_rule(kind: str) -> QuadratureRule:
    return quadrature(4 if kind.startswith("P2") else 2)


def _vectorize(local):
    """Expand scalar local matrices (..., n, n) into interleaved 2-component blocks."""
    n = local.shape[-1]
    out = np.einsum("...ij,cd->...icjd", local, np.eye(2))
    return out.reshape(local.shape[:-2] + (2 * n, 2 * n))


def _cell_pattern(row_dofs, col_dofs, shape):
    rows = np.broadcast_to(row_dofs[:, :, None], row_dofs.shape + (col_dofs.shape[1],))
    cols = np.broadcast_to(col_dofs[:, None, :], rows.shape)
    return la.SparsePattern(rows, cols, shape)


class _QuadCoefficientAssembler:
    """Matrix linear in per-quadrature-point coefficients: ``sum_q c_q K_q``."""

    tag = "assemble"

    def __init__(self, dofmap: DofMap, kernels, pattern):
        self.dofmap = dofmap
        self.kernels = kernels  # (ne, nq, nloc, nloc)
        self.pattern = pattern
        self.num_coeffs = kernels.shape[0] * kernels.shape[1]

    def _check(self, coeff):
        coeff = np.asarray(coeff, dtype=float).ravel()
        if coeff.size != self.num_coeffs:
            raise InvalidArgumentError(
                f"expected {self.num_coeffs} quadrature values, got {coeff.size}")
        return coeff.reshape(self.kernels.shape[:2])

    def assemble(self, coeff) -> sp.csr_matrix:
        c = self._check(coeff)
        return self.pattern.assemble(np.einsum("eq,eqij->eij", c, self.kernels))

    def vjp(self, Abar) -> np.ndarray:
        local = self.pattern.gather(Abar).reshape(self.kernels.shape[0], *self.kernels.shape[2:])
        return np.einsum("eij,eqij->eq", local, self.kernels).ravel()

    def operator(self) -> Operator:
        return Operator(self.tag, lambda c: (self.assemble(c), None),
                        lambda ctx, g: (self.vjp(g),))


class ScalarStiffness(_QuadCoefficientAssembler):
    """``A[i,j] = sum_q w_q nu_q grad phi_i . grad phi_j``; componentwise for vector spaces."""

    tag = "assemble_stiffness"

    def __init__(self, mesh: Mesh, dofmap: DofMap, rule: QuadratureRule | None = None):
        rule = rule or default_rule(dofmap.kind)
        self.table = shape_table(mesh, dofmap.scalar_kind, rule)
        G = self.table.grads
        K = np.einsum("eq,eqia,eqja->eqij", self.table.wdet, G, G)
        if dofmap.is_vector:
            K = _vectorize(K)
        pattern = _cell_pattern(dofmap.cell_dofs, dofmap.cell_dofs, (dofmap.num_dofs,) * 2)
        super().__init__(dofmap, K, pattern)


class MassMatrix(_QuadCoefficientAssembler):
    tag = "assemble_mass"

    def __init__(self, mesh: Mesh, dofmap: DofMap, rule: QuadratureRule | None = None):
        rule = rule or default_rule(dofmap.kind)
        self.table = shape_table(mesh, dofmap.scalar_kind, rule)
        V = self.table.values
        K = np.einsum("eq,qi,qj->eqij", self.table.wdet, V, V)
        if dofmap.is_vector:
            K = _vectorize(K)
        pattern = _cell_pattern(dofmap.cell_dofs, dofmap.cell_dofs, (dofmap.num_dofs,) * 2)
        super().__init__(dofmap, K, pattern)

    def matrix(self) -> sp.csr_matrix:
        return self.assemble(np.ones(self.num_coeffs))


@dataclass(frozen=True)
class ElasticMaterial:
    """Lame parameters as linear functions of Young's modulus.

    ``mode="poisson-scaled"`` uses ``mu = E nu / (1 - nu^2)``; ``mode="standard"``
    uses the shear modulus ``mu = E / (2 (1 + nu))``.  Both share
    ``lambda = E nu / ((1 + nu)(1 - 2 nu))``.
    """
    poisson: float = 0.3
    mode: str = "poisson-scaled"

    def __post_init__(self):
        if self.mode not in ("poisson-scaled", "standard"):
            raise InvalidArgumentError(f"unknown elasticity formula mode {self.mode!r}")

    @property
    def lambda_per_E(self) -> float:
        nu = self.poisson
        return nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def mu_per_E(self) -> float:
        nu = self.poisson
        if self.mode == "poisson-scaled":
            return nu / (1.0 - nu * nu)
        return 1.0 / (2.0 * (1.0 + nu))

    def lame(self, E):
        E = np.asarray(E, dtype=float)
        return self.lambda_per_E * E, self.mu_per_E * E


def _elastic_kernels(table: ShapeTable):
    G = table.grads  # (ne, nq, n, 2)
    ne, nq, n, _ = G.shape
    w = table.wdet[:, :, None, None, None, None]
    # rows (k, c), columns (l, d)
    k_lam = np.einsum("eqkc,eqld->eqkcld", G, G)
    gg = np.einsum("eqka,eqla->eqkl", G, G)
    k_mu = np.einsum("eqkl,cd->eqkcld", gg, np.eye(2)) + np.einsum("eqkd,eqlc->eqkcld", G, G)
    shape = (ne, nq, 2 * n, 2 * n)
    return (w * k_lam).reshape(shape), (w * k_mu).reshape(shape)


class ElasticityStiffness(_QuadCoefficientAssembler):
    """Plane-strain ``int sigma(u) : eps(v)`` with ``E`` given at quadrature points."""

    tag = "assemble_elasticity"

    def __init__(self, mesh: Mesh, dofmap: DofMap, material: ElasticMaterial,
                 rule: QuadratureRule | None = None):
        if not dofmap.is_vector:
            raise InvalidArgumentError("elasticity needs a vector dof map")
        rule = rule or default_rule(dofmap.kind)
        self.material = material
        self.table = shape_table(mesh, dofmap.scalar_kind, rule)
        k_lam, k_mu = _elastic_kernels(self.table)
        K = material.lambda_per_E * k_lam + material.mu_per_E * k_mu
        pattern = _cell_pattern(dofmap.cell_dofs, dofmap.cell_dofs, (dofmap.num_dofs,) * 2)
        super().__init__(dofmap, K, pattern)


def assemble_scalar_stiffness(mesh, dofmap, nu_at_quad, rule=None) -> sp.csr_matrix:
    return ScalarStiffness(mesh, dofmap, rule).assemble(nu_at_quad)


def assemble_elasticity_stiffness(mesh, dofmap, E_at_quad, material=None, rule=None):
    return ElasticityStiffness(mesh, dofmap, material or ElasticMaterial(), rule).assemble(E_at_quad)


def assemble_divergence(mesh: Mesh, velocity: DofMap, pressure: DofMap,
                        rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """``B[i, e] = int_e div phi_i`` for a vector velocity space and P0 pressure."""
    if not velocity.is_vector or pressure.kind != "P0":
        raise InvalidArgumentError("divergence needs a vector velocity space and P0 pressure")
    rule = rule or default_rule(velocity.kind)
    table = shape_table(mesh, velocity.scalar_kind, rule)
    local = np.einsum("eq,eqkc->ekc", table.wdet, table.grads).reshape(mesh.num_elements, -1)
    rows = velocity.cell_dofs
    cols = np.broadcast_to(pressure.cell_dofs, rows.shape)
    return la.assemble_from_triplets(rows, cols, local, (velocity.num_dofs, pressure.num_dofs))


def assemble_load(mesh: Mesh, dofmap: DofMap, f, rule: QuadratureRule | None = None) -> np.ndarray:
    """``F[i] = int f . phi_i`` for a constant body force ``f`` (one entry per component)."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if f.size != dofmap.components:
        raise InvalidArgumentError(f"force needs {dofmap.components} components, got {f.size}")
    rule = rule or default_rule(dofmap.kind)
    table = shape_table(mesh, dofmap.scalar_kind, rule)
    local = np.einsum("eq,qk->ek", table.wdet, table.values)
    if dofmap.is_vector:
        local = (local[:, :, None] * f[None, None, :]).reshape(len(local), -1)
    else:
        local = local * f[0]
    return np.bincount(dofmap.cell_dofs.ravel(), weights=local.ravel(), minlength=dofmap.num_dofs)


def _edge_basis(kind, t):
    if kind == "P1":
        return np.array([1.0 - t, t])
    return np.array([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)])


def assemble_boundary_traction(mesh: Mesh, dofmap: DofMap, side: str, t) -> np.ndarray:
    """Edge integral of ``t . phi_i`` over one side of the square."""
    edges = mesh.side_edges(side)
    kind = dofmap.scalar_kind
    if kind not in ("P1", "P2"):
        raise InvalidArgumentError(f"traction needs a P1 or P2 space, got {dofmap.kind}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size != dofmap.components:
        raise InvalidArgumentError(f"traction needs {dofmap.components} components, got {t.size}")
    s, w = edge_quadrature(3)
    basis = _edge_basis(kind, s)  # (nb, ns)
    moments = basis @ w
    out = np.zeros(dofmap.num_dofs)
    for e in edges:
        a, b = mesh.edges[e]
        length = np.linalg.norm(mesh.nodes[b] - mesh.nodes[a])
        scalar = [a, b] if kind == "P1" else [a, b, mesh.midpoint_index(e)]
        for node, m in zip(scalar, moments):
            if dofmap.is_vector:
                out[2 * node:2 * node + 2] += length * m * t
            else:
                out[node] += length * m * t[0]
    return out


class DirichletSystem:
    """Symmetric row/column elimination of prescribed dofs for a fixed pattern.

    Constrained rows and columns of ``A`` are zeroed and a unit diagonal is
    inserted; the eliminated column couplings move to the right-hand side.
    """

    def __init__(self, A: sp.csr_matrix, dofs, values):
        n = A.shape[0]
        if A.shape[0] != A.shape[1]:
            raise InvalidArgumentError("Dirichlet elimination needs a square matrix")
        dofs = np.asarray(dofs, dtype=np.int64)
        if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
            raise InvalidArgumentError("Dirichlet dof index out of range")
        self.dofs = dofs
        self.values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).copy()
        self.g = np.zeros(n)
        self.g[dofs] = self.values
        self.free = np.ones(n, dtype=bool)
        self.free[dofs] = False
        self.nnz = A.nnz
        self.rows = la.row_indices(A)
        self.cols = A.indices.astype(np.int64)
        self.ff = self.free[self.rows] & self.free[self.cols]
        self.fd = np.flatnonzero(self.free[self.rows] & ~self.free[self.cols])
        self.pattern = la.SparsePattern(np.concatenate([self.rows, dofs]),
                                        np.concatenate([self.cols, dofs]), A.shape)
        self._ones = np.ones(len(dofs))
        self._indptr = A.indptr.copy()
        self._indices = A.indices.copy()

    def _same_pattern(self, A):
        return (A.nnz == self.nnz and np.array_equal(A.indptr, self._indptr)
                and np.array_equal(A.indices, self._indices))

    def matrix(self, A) -> sp.csr_matrix:
        if not self._same_pattern(A):
            raise InvalidArgumentError("matrix pattern differs from the one this system was built for")
        return self.pattern.assemble(np.concatenate([A.data * self.ff, self._ones]))

    def rhs(self, A, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        out = np.where(self.free, b, self.g)
        coupling = A.data[self.fd] * self.g[self.cols[self.fd]]
        out -= np.bincount(self.rows[self.fd], weights=coupling, minlength=len(b))
        return out

    def matrix_vjp(self, Abar_new) -> np.ndarray:
        return self.pattern.gather(Abar_new)[: self.nnz] * self.ff

    def rhs_vjp(self, bbar_new):
        bbar_new = np.asarray(bbar_new, dtype=float)
        Abar = np.zeros(self.nnz)
        Abar[self.fd] = -bbar_new[self.rows[self.fd]] * self.g[self.cols[self.fd]]
        return Abar, np.where(self.free, bbar_new, 0.0)

    def matrix_operator(self) -> Operator:
        return Operator("dirichlet_matrix", lambda A: (self.matrix(A), None),
                        lambda ctx, g: (self.matrix_vjp(g),))

    def rhs_operator(self) -> Operator:
        return Operator("dirichlet_rhs", lambda A, b: (self.rhs(A, b), None),
                        lambda ctx, g: self.rhs_vjp(g))


def apply_dirichlet(A, b, dofs, values):
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    system = DirichletSystem(A, dofs, values)
    return system.matrix(A), system.rhs(A, b)
