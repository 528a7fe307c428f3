from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdfem.adapt import Estimate, adaptive_solve, estimate, interior_faces, mark_dorfler
from rdfem.assembly import Solution, build_system, h1_semi_error, l2_error
from rdfem.experiments import get_target, manufactured_exact, target_smooth
from rdfem.mesh import bisect_marked, build_structured_cube
from rdfem.solver import solve_system
from conftest import constant_target


def _solved(mesh, rho, target, precond="none"):
    return solve_system(build_system(mesh, rho, target), precond).solution


def test_interior_faces(cube):
    m = cube(2)
    ta, fa, tb, fb = interior_faces(m)
    # 4 faces per tet, boundary faces = 6 sides * 2 * n^2 triangles
    assert ta.size == (4 * m.n_tets - 6 * 2 * 4) // 2
    for a, i, b, j in zip(ta, fa, tb, fb):
        fa_set = set(np.delete(m.tets[a], i))
        assert fa_set == set(np.delete(m.tets[b], j))


def test_zero_target_zero_indicator(cube):
    sol = _solved(cube(3), 1.0, constant_target(0.0))
    est = estimate(sol, constant_target(0.0))
    assert not est.per_tet_indicator.any()
    assert est.global_ == 0.0


def test_linear_state_has_no_jumps(cube):
    m = cube(3)
    x = m.vertices
    lin = lambda a, b, c: 1 + 2 * a - b + 0.5 * c  # noqa: E731
    nodal = lin(x[:, 0], x[:, 1], x[:, 2])
    fake = SimpleNamespace(mesh=m, system=SimpleNamespace(rho=1e-3), full=lambda: nodal)
    from rdfem.assembly import TargetField

    est = estimate(fake, TargetField(lin))
    assert est.global_ <= 1e-12


@pytest.mark.parametrize("rho", [1.0, 1e-3])
def test_estimate_invariants(cube, rho):
    sol = _solved(cube(4), rho, target_smooth())
    est = estimate(sol, target_smooth())
    assert (est.per_tet_indicator >= 0).all()
    assert est.global_**2 == pytest.approx(est.squared.sum(), rel=1e-12)


def test_efficiency_band(cube):
    u, grad = manufactured_exact(1.0)
    sol = _solved(cube(4), 1.0, target_smooth())
    est = estimate(sol, target_smooth())
    err = np.hypot(l2_error(sol, u), h1_semi_error(sol, grad))
    assert err / 20 <= est.global_ <= 20 * err


def test_dorfler_examples():
    np.testing.assert_array_equal(mark_dorfler(Estimate(np.array([3.0, 0, 0, 0])), 0.5), [0])
    np.testing.assert_array_equal(mark_dorfler(Estimate(np.array([2.0, 2, 1])), 0.8), [0, 1])
    np.testing.assert_array_equal(mark_dorfler(np.array([0.0, 1, 0, 2]), 1.0), [1, 3])
    assert mark_dorfler(np.zeros(4), 0.5).size == 0
    with pytest.raises(ValueError):
        mark_dorfler(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        mark_dorfler(np.ones(3), 1.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=60), st.floats(0.05, 1.0))
def test_dorfler_minimality(values, theta):
    eta = np.array(values)
    marked = mark_dorfler(eta, theta)
    total = (eta**2).sum()
    if total == 0:
        assert marked.size == 0
        return
    s = (eta[marked] ** 2).sum()
    assert s >= theta**2 * total * (1 - 1e-12)
    smallest = marked[np.argmin(eta[marked])]
    assert s - eta[smallest] ** 2 < theta**2 * total
    # greedy: nothing unmarked beats a marked indicator
    rest = np.setdiff1d(np.arange(eta.size), marked)
    if rest.size:
        assert eta[rest].max() <= eta[marked].min()


def test_budget_below_initial_mesh():
    sol, hist = adaptive_solve(target_smooth(), 1.0, 10)
    assert len(hist) == 1 and hist[0].dofs == 27 and hist[0].n_marked == 0
    assert sol.system.n == 27


def test_history_consistency():
    _, hist = adaptive_solve(get_target("box"), 1e-2, 600)
    dofs = [h.dofs for h in hist]
    assert all(b >= a for a, b in zip(dofs, dofs[1:]))
    assert dofs[-1] >= 600 > dofs[-2]
    assert [h.level for h in hist] == list(range(len(hist)))
    assert all(h.converged for h in hist)
    assert all(h.n_marked > 0 for h in hist[:-1])


def test_stagnation_aborts():
    with pytest.raises(RuntimeError, match="stagnated"):
        adaptive_solve(constant_target(0.0), 1.0, 10_000)


def test_adaptive_beats_uniform_on_smooth_target():
    u, _ = manufactured_exact(1.0)
    sol, hist = adaptive_solve(target_smooth(), 1.0, 3375)
    adaptive = l2_error(sol, u)
    # uniform errors interpolated in log-log to the adaptive dof count
    pts = []
    for n in (16, 32):
        s = build_system(build_structured_cube(n), 1.0, target_smooth())
        pts.append((s.n, l2_error(solve_system(s).solution, u)))
    (d0, e0), (d1, e1) = pts
    slope = np.log(e1 / e0) / np.log(d1 / d0)
    uniform = e0 * (hist[-1].dofs / d0) ** slope
    assert adaptive <= 1.5 * uniform


def _marking_run(example, rho, levels=8):
    tgt = get_target(example)
    m = build_structured_cube(4)
    for _ in range(levels):
        sol = _solved(m, rho, tgt, "amg")
        marked = mark_dorfler(estimate(sol, tgt), 0.5)
        last = (m, marked)
        m = bisect_marked(m, marked)
    return last


def test_box_refinement_localizes():
    m, marked = _marking_run("box", 1e-4)
    x = m.vertices[m.tets[marked]]
    inside = ((x > 0.25) & (x < 0.75)).all(axis=(1, 2))
    outside = ((x < 0.25).all(axis=1) | (x > 0.75).all(axis=1)).any(axis=1)
    frac = (~(inside | outside)).mean()
    h = m.tet_diameters()[marked].max()
    pts = np.random.default_rng(7).random((200_000, 3))
    out = np.linalg.norm(np.maximum(np.maximum(0.25 - pts, pts - 0.75), 0), axis=1)
    ins = ((pts > 0.25) & (pts < 0.75)).all(axis=1)
    dist = np.where(ins, np.minimum(pts - 0.25, 0.75 - pts).min(axis=1), out)
    assert frac > (dist <= h).mean()


def test_boundary_refinement_localizes():
    m, marked = _marking_run("nonzero_bc", 1e-4)
    frac = m.boundary_vertex[m.tets[marked]].any(axis=1).mean()
    h = m.tet_diameters()[marked].max()
    assert frac > 1 - max(0.0, 1 - 2 * h) ** 3
