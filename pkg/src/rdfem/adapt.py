"""Residual error indicator, Dörfler marking and the adaptive loop.

The indicator is weighted for the reaction-dominated regime:

    eta_T^2 = a_T^2 ||u_bar - u_h||_T^2
              + 1/2 sum_{F in T, interior} rho^{-1/2} a_F ||[rho d_n u_h]||_F^2,

    a_S = min(h_S rho^{-1/2}, 1).

For P1 elements the Laplacian of ``u_h`` vanishes elementwise, so the element
residual reduces to ``u_bar - u_h``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import Solution, build_system, elementwise_l2_sq, target_errors, tet_gradients, _chunks
from .mesh import TetMesh, bisect_marked, build_structured_cube
from .solver import solve_system

__all__ = ["Estimate", "AdaptiveLevel", "estimate", "mark_dorfler", "adaptive_solve", "interior_faces"]

# face i of a tet is opposite local vertex i
_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


@dataclass(frozen=True, eq=False)
class Estimate:
    per_tet_indicator: np.ndarray

    @property
    def squared(self) -> np.ndarray:
        return self.per_tet_indicator**2

    @property
    def global_(self) -> float:
        """``eta = sqrt(sum eta_T^2)``; trailing underscore since ``global`` is reserved."""
        return float(np.sqrt(self.squared.sum()))


def interior_faces(mesh: TetMesh):
    """Interior faces as pairs of tets and the local face index in each.

    Returns
    -------
    tet_a, face_a, tet_b, face_b : int arrays of equal length
    """
    F = np.sort(mesh.tets[:, _FACES], axis=2).reshape(-1, 3).astype(np.int64)
    nv = np.int64(mesh.n_vertices)
    if mesh.n_vertices < 2_000_000:
        key = (F[:, 0] * nv + F[:, 1]) * nv + F[:, 2]
        order = np.argsort(key, kind="stable")
        ks = key[order]
        same = ks[1:] == ks[:-1]
    else:
        order = np.lexsort((F[:, 2], F[:, 1], F[:, 0]))
        fs = F[order]
        same = (fs[1:] == fs[:-1]).all(axis=1)
    i = np.flatnonzero(same)
    a, b = order[i], order[i + 1]
    return a // 4, a % 4, b // 4, b % 4


def _face_geometry(x):
    """Area, unit normal and diameter of triangles with vertex coordinates ``x`` (F, 3, 3)."""
    n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    nn = np.linalg.norm(n, axis=1)
    e = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 2] - x[:, 1]], axis=1)
    diam = np.linalg.norm(e, axis=2).max(axis=1)
    return 0.5 * nn, n / nn[:, None], diam


def _gradients(mesh: TetMesh, u_full):
    g = np.empty((mesh.n_tets, 3))
    for s in _chunks(mesh.n_tets):
        t = mesh.tets[s]
        _, G = tet_gradients(mesh.vertices[t])
        g[s] = np.einsum("tk,tkd->td", u_full[t], G)
    return g


def estimate(sol: Solution, target) -> Estimate:
    """Per-tet residual indicators for ``-rho Lap u + u = u_bar``."""
    mesh, rho = sol.mesh, sol.system.rho
    u = sol.full()
    sr = 1.0 / np.sqrt(rho)
    cut = getattr(target, "cut_mask", None)
    res = elementwise_l2_sq(mesh, u, target, cut)
    a_tet = np.minimum(mesh.tet_diameters() * sr, 1.0)
    eta2 = a_tet**2 * res

    ta, fa, tb, _ = interior_faces(mesh)
    if ta.size:
        grad = _gradients(mesh, u)
        x = mesh.vertices[mesh.tets[ta][np.arange(ta.size)[:, None], _FACES[fa]]]
        area, normal, diam = _face_geometry(x)
        jump = np.einsum("fd,fd->f", grad[ta] - grad[tb], normal)
        a_face = np.minimum(diam * sr, 1.0)
        contrib = 0.5 * sr * a_face * (rho * jump) ** 2 * area
        eta2 += np.bincount(ta, weights=contrib, minlength=mesh.n_tets)
        eta2 += np.bincount(tb, weights=contrib, minlength=mesh.n_tets)
    return Estimate(per_tet_indicator=np.sqrt(eta2))


def mark_dorfler(est, theta: float = 0.5) -> np.ndarray:
    """Smallest greedy set with ``sum eta_T^2 >= theta^2 eta^2``, as sorted tet ids."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    ind = est.per_tet_indicator if isinstance(est, Estimate) else np.asarray(est, dtype=np.float64)
    eta2 = ind**2
    order = np.argsort(-eta2, kind="stable")
    cs = np.cumsum(eta2[order])
    if cs.size == 0 or cs[-1] == 0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(cs, theta**2 * cs[-1], side="left")) + 1
    return np.sort(order[:k])


@dataclass(frozen=True)
class AdaptiveLevel:
    level: int
    dofs: int
    n_tets: int
    eta: float
    l2_sq: float
    hm1_sq: float
    iterations: int
    setup_seconds: float
    solve_seconds: float
    converged: bool
    n_marked: int


def adaptive_solve(
    target,
    rho: float,
    dof_budget: int,
    precond: str = "amg",
    *,
    mesh0: TetMesh | None = None,
    theta: float = 0.5,
    p: int = 4,
    tol: float = 1e-8,
    threads: int = 1,
    max_levels: int = 200,
    callback=None,
):
    """Solve, estimate, mark, bisect until the mesh has ``dof_budget`` interior dofs.

    Returns
    -------
    solution : Solution on the final mesh
    history : list of AdaptiveLevel, one per solved mesh
    """
    mesh = build_structured_cube(4) if mesh0 is None else mesh0
    history = []
    for level in range(max_levels):
        system = build_system(mesh, rho, target)
        res = solve_system(system, precond, p=p, tol=tol, threads=threads)
        sol = res.solution
        l2_sq, hm1_sq = target_errors(sol, target)
        est = estimate(sol, target)
        done = system.n >= dof_budget
        marked = np.zeros(0, dtype=np.int64) if done else mark_dorfler(est, theta)
        row = AdaptiveLevel(
            level=level,
            dofs=system.n,
            n_tets=mesh.n_tets,
            eta=est.global_,
            l2_sq=l2_sq,
            hm1_sq=hm1_sq,
            iterations=res.iterations,
            setup_seconds=res.setup_seconds,
            solve_seconds=res.solve_seconds,
            converged=res.converged,
            n_marked=int(marked.size),
        )
        history.append(row)
        if callback is not None:
            callback(row)
        if done:
            return sol, history
        new = bisect_marked(mesh, marked)
        # refining at the boundary may add only Dirichlet vertices, so
        # stagnation means no new vertex at all
        if new.n_vertices == mesh.n_vertices:
            raise RuntimeError(
                f"refinement stagnated at level {level}: {system.n} dofs, {marked.size} tets marked"
            )
        mesh = new
    raise RuntimeError(f"dof budget {dof_budget} not reached within {max_levels} levels")
