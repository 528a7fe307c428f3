import numpy as np
import pytest

from rdfem.solver import PRECONDITIONERS, direct_solve, solve_system


@pytest.mark.parametrize("n", [3, 6, 8])
@pytest.mark.parametrize("rho", [1.0, 1e-6])
def test_preconditioners_agree_with_direct(smooth_system, n, rho):
    system = smooth_system(n, rho)
    ref = solve_system(system, "none").solution.coefficients
    for precond in ("jacobi", "amg", "bddc"):
        res = solve_system(system, precond, p=2, tol=1e-12)
        assert res.converged
        np.testing.assert_allclose(res.solution.coefficients, ref, atol=1e-6 * max(1.0, np.abs(ref).max()))


def test_direct_reports_no_iterations(smooth_system):
    res = solve_system(smooth_system(4), "none")
    assert res.iterations == 0 and res.converged
    assert res.seconds == res.setup_seconds + res.solve_seconds


def test_history_is_monotone_enough(smooth_system):
    res = solve_system(smooth_system(8, 1e-4), "amg", tol=1e-10)
    h = np.asarray(res.history)
    assert h[-1] <= 1e-10 and len(h) == res.iterations + 1


def test_sparse_direct_path(smooth_system):
    system = smooth_system(16)
    u = direct_solve(system.A, system.f)
    assert np.linalg.norm(system.A @ u - system.f) <= 1e-10 * np.linalg.norm(system.f)


@pytest.mark.parametrize("kwargs", [dict(precond="ilu"), dict(tol=0.0), dict(tol=-1.0)])
def test_invalid_arguments(smooth_system, kwargs):
    with pytest.raises(ValueError):
        solve_system(smooth_system(3), **kwargs)


def test_registry():
    assert PRECONDITIONERS == ("none", "jacobi", "amg", "bddc")
