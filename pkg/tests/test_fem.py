import numpy as np
import pytest
import scipy.sparse as sp

from adfield import fem, la
from adfield.errors import InvalidArgumentError
from adfield.mesh import build_dofmap, build_unit_square_mesh, quadrature
from oracles import elasticity_error, p1_poisson_error


@pytest.fixture(scope="module")
def mesh3():
    return build_unit_square_mesh(3)


def _fd_check_assembler(assembler, coeff, rng, count=10):
    """Directional check of an assembler's vjp against central differences."""
    Abar = rng.standard_normal(assembler.pattern.nnz)
    g = assembler.vjp(Abar)
    idx = rng.choice(coeff.size, size=count, replace=False)
    for i in idx:
        h = 1e-5 * (1 + abs(coeff[i]))
        e = np.zeros_like(coeff)
        e[i] = h
        fd = (assembler.assemble(coeff + e).data - assembler.assemble(coeff - e).data) @ Abar / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), 1e-8)


def test_p1_shape_at_centroid():
    v, g = fem.shape_eval("P1", (1 / 3, 1 / 3))
    assert np.allclose(v, 1 / 3)
    assert np.allclose(g.sum(axis=0), 0)


def test_p2_nodal_property():
    v, _ = fem.shape_eval("P2", (0.0, 0.0))
    assert np.allclose(v, [1, 0, 0, 0, 0, 0])
    v, _ = fem.shape_eval("P2", (0.5, 0.0))  # midpoint of edge 01
    assert np.allclose(v, [0, 0, 0, 1, 0, 0])


def test_p2_basis_integrals():
    rule = quadrature(4)
    vals = np.array([fem.shape_eval("P2", p)[0] for p in rule.points])
    # corner functions integrate to 0, edge functions to 1/6 on the reference triangle
    assert np.allclose(rule.weights @ vals, [0, 0, 0, 1 / 6, 1 / 6, 1 / 6], atol=1e-15)


def test_p0_basis():
    v, g = fem.shape_eval("P0", (0.2, 0.3))
    assert np.array_equal(v, [1.0]) and not g.any()
    with pytest.raises(InvalidArgumentError):
        fem.shape_eval("Q1", (0, 0))


@pytest.mark.parametrize("kind", ["P1", "P2"])
def test_partition_of_unity_tables(mesh3, kind):
    t = fem.shape_table(mesh3, kind, quadrature(4))
    assert np.allclose(t.values.sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(t.grads.sum(axis=2), 0.0, atol=1e-12)


def test_scalar_stiffness_properties(mesh3):
    d = build_dofmap(mesh3, "P1")
    S = fem.ScalarStiffness(mesh3, d)
    A = S.assemble(np.ones(S.num_coeffs))
    assert np.allclose(A @ np.ones(d.num_dofs), 0, atol=1e-13)
    assert abs(A - A.T).max() <= 1e-12
    with pytest.raises(InvalidArgumentError):
        S.assemble(np.ones(3))


def test_energy_of_linear_field():
    m = build_unit_square_mesh(4)
    d = build_dofmap(m, "P1")
    A = fem.assemble_scalar_stiffness(m, d, np.ones(m.num_elements * 3))
    u = d.dof_coords[:, 0]
    assert abs(u @ A @ u - 1.0) < 1e-12


@pytest.mark.parametrize("kind", ["P1", "P2", "P1-vector", "P2-vector"])
def test_scalar_stiffness_vjp(mesh3, kind):
    rng = np.random.default_rng(4)
    S = fem.ScalarStiffness(mesh3, build_dofmap(mesh3, kind))
    _fd_check_assembler(S, 1 + rng.random(S.num_coeffs), rng)


@pytest.mark.parametrize("mode", ["poisson-scaled", "standard"])
def test_elasticity_kernel_and_vjp(mesh3, mode):
    d = build_dofmap(mesh3, "P1-vector")
    S = fem.ElasticityStiffness(mesh3, d, fem.ElasticMaterial(0.3, mode))
    rng = np.random.default_rng(5)
    E = 1 + rng.random(S.num_coeffs)
    A = S.assemble(E)
    assert abs(A - A.T).max() <= 1e-12
    x, y = d.dof_coords.T
    comp = np.arange(d.num_dofs) % 2
    shift = np.where(comp == 0, 0.3, -0.7)
    rotation = np.where(comp == 0, -y, x)
    assert np.abs(A @ shift).max() < 1e-12
    assert np.abs(A @ rotation).max() < 1e-10
    _fd_check_assembler(S, E, rng)


def test_elastic_material():
    m = fem.ElasticMaterial(0.3, "standard")
    lam, mu = m.lame(2.0)
    assert np.isclose(mu, 2.0 / 2.6) and np.isclose(lam, 2.0 * 0.3 / (1.3 * 0.4))
    assert np.isclose(fem.ElasticMaterial(0.3).mu_per_E, 0.3 / 0.91)
    with pytest.raises(InvalidArgumentError):
        fem.ElasticMaterial(0.3, "other")


def test_divergence_operator():
    m = build_unit_square_mesh(3)
    vel, pre = build_dofmap(m, "P2-vector"), build_dofmap(m, "P0")
    B = fem.assemble_divergence(m, vel, pre)
    assert B.shape == (vel.num_dofs, pre.num_dofs)
    comp = np.arange(vel.num_dofs) % 2
    assert np.abs(B.T @ (comp == 0).astype(float)).max() < 1e-14
    v = np.where(comp == 0, vel.dof_coords[:, 0], 0.0)
    assert np.allclose(B.T @ v, m.signed_areas(), atol=1e-14)
    assert not (B.T @ np.zeros(vel.num_dofs)).any()
    with pytest.raises(InvalidArgumentError):
        fem.assemble_divergence(m, build_dofmap(m, "P2"), pre)


def test_load_vectors():
    m = build_unit_square_mesh(3)
    p1 = build_dofmap(m, "P1")
    assert not fem.assemble_load(m, p1, 0.0).any()
    assert np.isclose(fem.assemble_load(m, p1, 1.0).sum(), 1.0)
    p2v = build_dofmap(m, "P2-vector")
    F = fem.assemble_load(m, p2v, (0.0, -1.0))
    assert abs(F[1::2].sum() + 1.0) < 1e-12 and abs(F[0::2].sum()) < 1e-14
    with pytest.raises(InvalidArgumentError):
        fem.assemble_load(m, p2v, 1.0)


@pytest.mark.parametrize("kind", ["P1-vector", "P2-vector"])
def test_boundary_traction(kind):
    m = build_unit_square_mesh(3)
    d = build_dofmap(m, kind)
    assert not fem.assemble_boundary_traction(m, d, "right", (0.0, 0.0)).any()
    F = fem.assemble_boundary_traction(m, d, "right", (0.0, -0.1))
    assert abs(F[1::2].sum() + 0.1) < 1e-14
    off = np.ones(d.num_dofs, dtype=bool)
    off[d.side_dofs(m, "right")] = False
    assert not F[off].any()
    with pytest.raises(InvalidArgumentError):
        fem.assemble_boundary_traction(m, d, "inside", (0.0, 1.0))


def test_dirichlet_all_dofs():
    A = sp.csr_matrix(np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]]))
    v = np.array([1.0, -2.0, 3.0])
    A2, b2 = fem.apply_dirichlet(A, np.zeros(3), [0, 1, 2], v)
    assert np.allclose(la.solve(A2, b2), v)


def test_dirichlet_symmetric_and_chain():
    # 1D Laplace on three nodes with u(0)=0, u(1)=1
    A = sp.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
    A2, b2 = fem.apply_dirichlet(A, np.zeros(3), [0, 2], [0.0, 1.0])
    assert abs(A2 - A2.T).max() == 0
    assert np.isclose(la.solve(A2, b2)[1], 0.5)
    with pytest.raises(InvalidArgumentError):
        fem.apply_dirichlet(A, np.zeros(3), [3], [0.0])


def test_dirichlet_vjps():
    rng = np.random.default_rng(6)
    D = rng.standard_normal((6, 6)) * (rng.random((6, 6)) < 0.6) + 5 * np.eye(6)
    A = sp.csr_matrix(D)
    b = rng.standard_normal(6)
    system = fem.DirichletSystem(A, [1, 4], [0.5, -1.5])
    Mbar = rng.standard_normal(system.matrix(A).nnz)
    rbar = rng.standard_normal(6)
    gA = system.matrix_vjp(Mbar) + system.rhs_vjp(rbar)[0]
    gb = system.rhs_vjp(rbar)[1]

    def f(data, rhs):
        B = A.copy()
        B.data = data
        return system.matrix(B).data @ Mbar + system.rhs(B, rhs) @ rbar

    h = 1e-6
    d1, d2 = rng.standard_normal(A.nnz), rng.standard_normal(6)
    fd = (f(A.data + h * d1, b + h * d2) - f(A.data - h * d1, b - h * d2)) / (2 * h)
    assert np.isclose(fd, gA @ d1 + gb @ d2, rtol=1e-7)


def test_p1_poisson_convergence_rate():
    e8, e16 = p1_poisson_error(8), p1_poisson_error(16)
    assert e8 / e16 >= 3.5
    assert np.log2(e8 / e16) >= 1.9


@pytest.mark.parametrize("mode", ["poisson-scaled", "standard"])
def test_elasticity_convergence_rate(mode):
    material = fem.ElasticMaterial(0.3, mode)
    e8, e16 = elasticity_error(8, material), elasticity_error(16, material)
    assert np.log2(e8 / e16) >= 1.9


def test_mass_matrix_total():
    m = build_unit_square_mesh(3)
    M = fem.MassMatrix(m, build_dofmap(m, "P1")).matrix()
    assert np.isclose(M.sum(), 1.0)
    Mv = fem.MassMatrix(m, build_dofmap(m, "P1-vector")).matrix()
    assert np.isclose(Mv.sum(), 2.0)
