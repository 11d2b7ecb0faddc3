import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sp2pat import mesh as fem
from sp2pat.sparse import (
    BlockSystem2x2, Factorized, KrylovSolver, SolverError, make_solver, relative_residual, solve_general, solve_spd,
)


def _shifted_laplacian(n=10):
    m = fem.build_rect_mesh(0, 1, 0, 1, n, n)
    return (fem.stiffness(m) + fem.mass(m)).tocsr()


def test_two_by_two_example():
    A = sp.csr_matrix([[2.0, 1.0], [0.0, 3.0]])
    np.testing.assert_allclose(solve_general(A, [3.0, 3.0]), [1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(Factorized(A).solve([3.0, 3.0]), [1.0, 1.0])
    np.testing.assert_allclose(Factorized(A).solve_transpose([2.0, 4.0]), [1.0, 1.0])


def test_identity_and_zero_rhs():
    I = sp.identity(7, format="csr")
    b = np.arange(7.0)
    np.testing.assert_allclose(solve_spd(I, b), b)
    np.testing.assert_allclose(solve_general(I, b), b)
    A = _shifted_laplacian()
    assert not np.any(solve_spd(A, np.zeros(A.shape[0])))
    assert not np.any(solve_general(A, np.zeros(A.shape[0])))


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_cg_matches_dense_solve(seed):
    A = _shifted_laplacian()
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    x = solve_spd(A, b, tol=1e-12)
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
    assert relative_residual(A, x, b) <= 1e-12


@pytest.mark.parametrize("method", ["gmres", "bicgstab"])
def test_krylov_on_symmetric_matrix_agrees_with_cg(method):
    A = _shifted_laplacian()
    b = np.linspace(-1, 1, A.shape[0])
    np.testing.assert_allclose(solve_general(A, b, method=method), solve_spd(A, b), rtol=1e-7, atol=1e-10)


def test_block_system_assembly_and_solve():
    A = _shifted_laplacian(6)
    n = A.shape[0]
    C = -0.1 * sp.identity(n)
    sys = BlockSystem2x2(A, C, C, 2 * A, b1=np.ones(n), b2=np.zeros(n))
    M = sys.matrix()
    assert M.shape == (2 * n, 2 * n)
    x = solve_general(sys)
    assert relative_residual(M, x, sys.rhs()) <= 1e-10
    with pytest.raises(ValueError):
        BlockSystem2x2(A, C, C, sp.identity(n + 1))


def test_dimension_mismatch_and_bad_tol():
    A = _shifted_laplacian(4)
    with pytest.raises(ValueError):
        solve_spd(A, np.ones(3))
    with pytest.raises(ValueError):
        solve_spd(A, np.ones(A.shape[0]), tol=0.0)
    with pytest.raises(ValueError):
        solve_general(A, np.ones(A.shape[0]), method="qmr")
    with pytest.raises(ValueError):
        make_solver(A, "cholesky")


def test_iteration_cap_raises_with_residual():
    A = _shifted_laplacian(16)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    with pytest.raises(SolverError) as info:
        solve_spd(A, b, tol=1e-12, maxiter=2)
    assert info.value.residual > 1e-12


def test_krylov_solver_matches_factorization_with_transpose():
    A = _shifted_laplacian(8)
    n = A.shape[0]
    N = sp.bmat([[A, 0.3 * sp.identity(n)], [-0.1 * sp.identity(n), A]], format="csr")
    B = np.random.default_rng(3).standard_normal((2 * n, 2))
    lu, kr = make_solver(N), make_solver(N, "krylov", tol=1e-12)
    assert isinstance(kr, KrylovSolver)
    np.testing.assert_allclose(kr.solve(B), lu.solve(B), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(kr.solve_transpose(B), lu.solve_transpose(B), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(N.T @ lu.solve_transpose(B), B, atol=1e-10)
