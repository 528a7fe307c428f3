import numpy as np
import pytest
import scipy.sparse as sp

from rdfem.linalg import (
    DenseCholesky,
    IndefiniteError,
    dense_cholesky_solve,
    finalize,
    identity,
    jacobi,
    pcg,
    positivity_probe,
    read_matrix_market,
    spmv,
    symmetry_probe,
    write_matrix_market,
)


def random_spd(rng, n, density=0.2):
    B = sp.random(n, n, density=density, random_state=np.random.RandomState(rng.integers(1 << 31)))
    return finalize(B @ B.T + sp.identity(n) * n * 0.1)


def test_spmv_examples(rng):
    x = rng.standard_normal(7)
    np.testing.assert_array_equal(spmv(sp.identity(7, format="csr"), x), x)
    A = sp.csr_matrix(np.array([[2.0, 1], [1, 2]]))
    np.testing.assert_array_equal(spmv(A, np.ones(2)), [3.0, 3.0])
    S = random_spd(rng, 50)
    y = rng.standard_normal(50)
    assert np.abs(spmv(S, y) - S.toarray() @ y).max() <= 1e-12
    with pytest.raises(ValueError):
        spmv(A, np.ones(3))


def test_finalize_canonical():
    A = sp.csr_matrix((np.array([1.0, 0.0, 2.0, 3.0]), np.array([1, 0, 1, 0]), np.array([0, 2, 4])), shape=(2, 2))
    A.has_sorted_indices = False
    F = finalize(A)
    assert F.has_canonical_format
    assert F.nnz == 3
    assert np.all(F.data != 0)
    with pytest.raises(ValueError):
        finalize(sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])), symmetric=True)


def test_pcg_scalar():
    u, rep = pcg(sp.csr_matrix([[2.0]]), np.array([4.0]))
    assert u[0] == pytest.approx(2.0)
    assert rep.iterations == 1 and rep.converged


def test_pcg_history_and_stopping(rng):
    A = random_spd(rng, 60)
    f = rng.standard_normal(60)
    u, rep = pcg(A, f, jacobi(A), tol=1e-10)
    assert rep.converged
    assert rep.history[0] == 1.0
    assert rep.history[-1] <= 1e-10
    assert len(rep.history) == rep.iterations + 1
    assert np.abs(u - np.linalg.solve(A.toarray(), f)).max() <= 1e-7


def test_pcg_max_iter_reports_failure(rng):
    A = random_spd(rng, 60)
    _, rep = pcg(A, rng.standard_normal(60), max_iter=2, tol=1e-14)
    assert not rep.converged and rep.iterations == 2


def test_pcg_zero_rhs():
    u, rep = pcg(sp.identity(3, format="csr"), np.zeros(3))
    assert rep.converged and rep.iterations == 0 and not u.any()


def test_pcg_detects_indefinite():
    A = sp.csr_matrix(np.diag([1.0, -1.0]))
    with pytest.raises(IndefiniteError):
        pcg(A, np.array([1.0, 1.0]))
    with pytest.raises(IndefiniteError):
        pcg(sp.identity(2, format="csr"), np.ones(2), precond=lambda r: -r)


def test_pcg_callable_operator(rng):
    A = random_spd(rng, 20)
    f = rng.standard_normal(20)
    a, _ = pcg(A, f)
    b, _ = pcg(lambda x: A @ x, f)
    np.testing.assert_array_equal(a, b)


def test_pcg_energy_error_monotone(smooth_system):
    s = smooth_system(6, 1.0)
    exact = np.linalg.solve(s.A.toarray(), s.f)
    errs = []

    def cb(u):
        e = u - exact
        errs.append(e @ (s.A @ e))

    pcg(s.A, s.f, jacobi(s.A), tol=1e-12, callback=cb)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))


def test_pcg_count_invariant_under_permutation(smooth_system, rng):
    s = smooth_system(5, 1e-2)
    perm = rng.permutation(s.n)
    P = sp.identity(s.n, format="csr")[perm]
    _, a = pcg(s.A, s.f, tol=1e-10)
    _, b = pcg(finalize(P @ s.A @ P.T), s.f[perm], tol=1e-10)
    assert a.iterations == b.iterations


def test_jacobi_matches_dense_oracle(smooth_system):
    s = smooth_system(8, 1.0)
    u, rep = pcg(s.A, s.f, jacobi(s.A), tol=1e-10)
    assert np.abs(u - dense_cholesky_solve(s.A, s.f)).max() <= 1e-6


def test_dense_cholesky():
    b = np.array([2.0, 1.0])
    np.testing.assert_array_equal(dense_cholesky_solve(np.eye(2), b), b)
    np.testing.assert_allclose(dense_cholesky_solve(np.array([[4.0, 2], [2, 3]]), b), [0.5, 0.0], atol=1e-15)
    A = np.array([[4.0, 2, 0.5], [2, 3, 0.1], [0.5, 0.1, 2]])
    L = DenseCholesky(A).L
    assert np.abs(L @ L.T - A).max() <= 1e-12
    with pytest.raises(IndefiniteError):
        DenseCholesky(np.array([[1.0, 2], [2, 1]]))
    assert DenseCholesky(np.zeros((0, 0))).solve(np.zeros(0)).shape == (0,)


def test_probes(rng):
    A = random_spd(rng, 30)
    assert symmetry_probe(jacobi(A), 30) <= 1e-15
    assert positivity_probe(jacobi(A), 30) > 0
    N = rng.standard_normal((30, 30))
    assert symmetry_probe(lambda x: N @ x, 30) > 1e-3
    assert symmetry_probe(identity, 5) == 0.0


def test_matrix_market_round_trip(tmp_path, rng):
    A = random_spd(rng, 25)
    v = rng.standard_normal(25)
    write_matrix_market(tmp_path / "A.mtx", A)
    write_matrix_market(tmp_path / "v.mtx", v)
    B = read_matrix_market(tmp_path / "A.mtx")
    assert abs(B - A).max() == 0.0
    np.testing.assert_array_equal(read_matrix_market(tmp_path / "v.mtx"), v)
