import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from adfield import la
from adfield.errors import InvalidArgumentError, SingularMatrixError
from adfield.graph import Operator, Tape, squared_misfit


def test_duplicate_triplets_sum():
    A = la.assemble_from_triplets([0, 0], [0, 0], [1.0, 2.0], (2, 2))
    assert A[0, 0] == 3.0 and A.nnz == 1


def test_empty_triplets():
    A = la.assemble_from_triplets([], [], [], (2, 2))
    assert A.shape == (2, 2) and A.nnz == 0
    assert np.array_equal(la.matvec(A, np.ones(2)), np.zeros(2))


def test_triplet_out_of_range():
    with pytest.raises(InvalidArgumentError):
        la.assemble_from_triplets([2], [0], [1.0], (2, 2))


def test_identity_matvec():
    I = la.assemble_from_triplets(range(4), range(4), np.ones(4), (4, 4))
    x = np.arange(4.0)
    assert np.array_equal(la.matvec(I, x), x)
    with pytest.raises(InvalidArgumentError):
        la.matvec(I, np.ones(3))


def test_transpose_matvec():
    rng = np.random.default_rng(3)
    D = rng.standard_normal((10, 10)) * (rng.random((10, 10)) < 0.4)
    x = rng.standard_normal(10)
    assert np.allclose(la.transpose_matvec(sp.csr_matrix(D), x), D.T @ x, atol=1e-14)


def test_pattern_gather_is_adjoint():
    rng = np.random.default_rng(1)
    rows, cols = rng.integers(0, 6, 40), rng.integers(0, 6, 40)
    pat = la.SparsePattern(rows, cols, (6, 6))
    v, w = rng.standard_normal(40), rng.standard_normal(pat.nnz)
    assert np.isclose(pat.assemble(v).data @ w, v @ pat.gather(w))


def test_simple_solves():
    assert np.allclose(la.solve(sp.identity(3, format="csr"), [1.0, 2.0, 3.0]), [1, 2, 3])
    assert np.allclose(la.solve(sp.diags([2.0, 4.0]).tocsr(), [2.0, 8.0]), [1, 2])


def test_spd_residual():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((20, 20))
    A = sp.csr_matrix(M.T @ M + np.eye(20))
    b = rng.standard_normal(20)
    u = la.solve(A, b)
    assert np.linalg.norm(A @ u - b) <= 1e-10 * np.linalg.norm(b)


def test_large_system_uses_sparse_lu():
    n = 600
    A = sp.diags([-1.0, 2.5, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    b = np.ones(n)
    f = la.factorize(A)
    assert f.dense is False
    assert np.allclose(A @ f.solve(b), b)
    assert np.allclose(A.T @ f.solve(b, transpose=True), b)


def test_singular_names_pivot_row():
    A = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1.0]]))
    with pytest.raises(SingularMatrixError) as info:
        la.solve(A, np.ones(3))
    assert info.value.row == 1


def test_factorization_reuse():
    rng = np.random.default_rng(2)
    A = sp.csr_matrix(rng.standard_normal((8, 8)) + 8 * np.eye(8))
    b1, b2 = rng.standard_normal(8), rng.standard_normal(8)
    u1, f = la.solve(A, b1, return_factorization=True)
    assert np.allclose(la.solve(A, b2, factorization=f), la.solve(A, b2), rtol=0, atol=1e-14)
    assert np.array_equal(u1, f.solve(b1))


def test_solve_vjp_identity():
    A = sp.identity(3, format="csr")
    v = np.array([1.0, -2.0, 0.5])
    u = np.array([3.0, 1.0, 2.0])
    Abar, bbar = la.solve_vjp(A, u, v)
    assert np.allclose(bbar, v)
    assert np.allclose(Abar, -v * u)


def test_solve_vjp_diag():
    A = sp.diags([2.0, 4.0]).tocsr()
    u = la.solve(A, [2.0, 8.0])
    Abar, bbar = la.solve_vjp(A, u, np.array([0.0, 1.0]))
    assert np.allclose(bbar, [0, 0.25])
    assert np.allclose(Abar, [0, -0.5])


def test_solve_vjp_zero():
    A = sp.diags([2.0, 4.0]).tocsr()
    Abar, bbar = la.solve_vjp(A, np.ones(2), np.zeros(2))
    assert not Abar.any() and not bbar.any()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_solve_adjoint_matches_fd(seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((15, 15)) * (rng.random((15, 15)) < 0.3) + 6 * np.eye(15)
    A = sp.csr_matrix(D)
    b = rng.standard_normal(15)
    target = rng.standard_normal(15)
    A_pattern = la.SparsePattern(*A.nonzero(), A.shape)
    A = A_pattern.from_data(np.asarray(A[A.nonzero()]).ravel())

    to_matrix = Operator("csr", lambda data: (A_pattern.from_data(data), None),
                         lambda ctx, g: (g,))

    def loss(data, rhs):
        tape = Tape()
        An = tape.record(to_matrix, tape.parameter("A", data))
        u = tape.record(la.SOLVE, An, tape.parameter("b", rhs))
        L = tape.record(squared_misfit(target), u)
        return L.value, tape.backward(L)

    f0, g = loss(A.data, b)
    h = 1e-5
    for name, base in (("A", A.data), ("b", b)):
        for _ in range(5):
            d = rng.standard_normal(base.shape)
            args_p = (base + h * d, b) if name == "A" else (A.data, base + h * d)
            args_m = (base - h * d, b) if name == "A" else (A.data, base - h * d)
            fd = (loss(*args_p)[0] - loss(*args_m)[0]) / (2 * h)
            assert abs(fd - g[name] @ d) <= 1e-6 * max(abs(fd), 1e-12)


def test_matrix_market_dump(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 3.0]]))
    path = tmp_path / "A.mtx"
    la.write_matrix_market(path, A)
    B = scipy.io.mmread(str(path))
    assert np.allclose(B.toarray(), A.toarray())
