"""P1 assembly of ``A = rho*K + M``, load vectors and error norms.

Boundary vertices carry homogeneous Dirichlet values and are eliminated:
all returned matrices act on interior dofs only, numbered by ascending vertex
id (``FemSystem.dof_map``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linalg import DenseCholesky, finalize, pcg
from .mesh import TetMesh
from .quadrature import keast4, subdivision_rule

__all__ = [
    "TargetField",
    "FemSystem",
    "Solution",
    "tet_gradients",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "build_system",
    "l2_error",
    "h1_semi_error",
    "elementwise_l2_sq",
    "hminus1_error",
    "hminus1_norm",
    "target_errors",
    "recover_control",
    "solve_spd",
]

CHUNK = 200_000
SUBDIVISION_DEPTH = 3
SMOOTHNESS_TAGS = ("smooth_h2", "discontinuous", "smooth_nonzero_bc")


@dataclass(frozen=True)
class TargetField:
    """A desired state ``u_bar``.

    ``evaluator(x, y, z)`` takes coordinate arrays of any common shape.
    ``cut_mask``, given the (T, 4, 3) vertex coordinates of some tets, flags the
    tets crossed by a discontinuity; those are integrated by subdivision.
    """

    evaluator: Callable
    smoothness_tag: str = "smooth_h2"
    quadrature_order_hint: int = 4
    cut_mask: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.smoothness_tag not in SMOOTHNESS_TAGS:
            raise ValueError(f"unknown smoothness tag {self.smoothness_tag!r}")

    def __call__(self, x, y, z):
        return self.evaluator(x, y, z)

    def at(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.evaluator(points[..., 0], points[..., 1], points[..., 2])


@dataclass(frozen=True, eq=False)
class FemSystem:
    rho: float
    K: sp.csr_matrix
    M: sp.csr_matrix
    A: sp.csr_matrix
    f: np.ndarray
    dof_map: np.ndarray
    mesh: TetMesh

    @property
    def n(self) -> int:
        return self.dof_map.size


@dataclass(eq=False)
class Solution:
    coefficients: np.ndarray
    system: FemSystem
    mesh: TetMesh

    def __post_init__(self):
        if self.coefficients.shape != (self.system.n,):
            raise ValueError("coefficient vector does not match the number of interior dofs")

    def full(self) -> np.ndarray:
        """Nodal values on all vertices (zero on the boundary)."""
        u = np.zeros(self.mesh.n_vertices)
        u[self.system.dof_map] = self.coefficients
        return u


def _chunks(n, size=CHUNK):
    for s in range(0, n, size):
        yield slice(s, min(s + size, n))


def tet_gradients(x):
    """Volumes and barycentric gradients of tets with vertex coordinates ``x`` (T, 4, 3)."""
    e1, e2, e3 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]
    c23, c31, c12 = np.cross(e2, e3), np.cross(e3, e1), np.cross(e1, e2)
    det = np.einsum("ij,ij->i", e1, c23)
    if (det <= 0).any():
        bad = int(np.argmax(det <= 0))
        raise ValueError(f"degenerate or inverted tet in assembly (local index {bad}, det={det[bad]:.3e})")
    G = np.empty((x.shape[0], 4, 3))
    G[:, 1] = c23 / det[:, None]
    G[:, 2] = c31 / det[:, None]
    G[:, 3] = c12 / det[:, None]
    G[:, 0] = -(G[:, 1] + G[:, 2] + G[:, 3])
    return det / 6.0, G


_MASS_REF = (np.ones((4, 4)) + np.eye(4)) / 20.0


def _assemble_full(mesh: TetMesh, local) -> sp.csr_matrix:
    nv = mesh.n_vertices
    out = None
    for s in _chunks(mesh.n_tets):
        t = mesh.tets[s]
        vol, G = tet_gradients(mesh.vertices[t])
        Ke = local(vol, G)
        rows = np.repeat(t, 4, axis=1).ravel()
        cols = np.tile(t, (1, 4)).ravel()
        part = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
        out = part if out is None else out + part
    # local matrices are symmetric; averaging with the transpose removes
    # summation-order roundoff so the result is exactly symmetric
    out = (out + out.T) * 0.5
    return finalize(out)


def _stiffness_local(vol, G):
    return vol[:, None, None] * np.einsum("tik,tjk->tij", G, G)


def _mass_local(vol, G):
    return vol[:, None, None] * _MASS_REF


def _restrict(A, mesh, eliminate):
    if not eliminate:
        return A
    idx = mesh.interior_vertices
    return finalize(A[idx][:, idx])


def assemble_stiffness(mesh: TetMesh, eliminate: bool = True) -> sp.csr_matrix:
    return _restrict(_assemble_full(mesh, _stiffness_local), mesh, eliminate)


def assemble_mass(mesh: TetMesh, eliminate: bool = True) -> sp.csr_matrix:
    return _restrict(_assemble_full(mesh, _mass_local), mesh, eliminate)


def _quadrature_chunks(mesh: TetMesh, cut_mask=None, tets=None, depth=SUBDIVISION_DEPTH):
    """Yield ``(tet_ids, vol, G, points, lam, w)`` batches.

    Tets flagged by ``cut_mask`` use the subdivision rule, the rest Keast's rule.
    """
    ids_all = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    if cut_mask is not None and ids_all.size:
        cut = np.zeros(ids_all.size, dtype=bool)
        for s in _chunks(ids_all.size):
            cut[s] = cut_mask(mesh.vertices[mesh.tets[ids_all[s]]])
        groups = [(ids_all[~cut], keast4()), (ids_all[cut], subdivision_rule(depth))]
    else:
        groups = [(ids_all, keast4())]
    for ids, (lam, w) in groups:
        size = max(1, CHUNK * 11 // (4 * lam.shape[0]))
        for s in _chunks(ids.size, size):
            tid = ids[s]
            x = mesh.vertices[mesh.tets[tid]]
            vol, G = tet_gradients(x)
            pts = np.einsum("qk,tkd->tqd", lam, x)
            yield tid, vol, G, pts, lam, w


def _eval(fn, pts):
    return np.broadcast_to(fn(pts[..., 0], pts[..., 1], pts[..., 2]), pts.shape[:-1])


def assemble_load(mesh: TetMesh, target, eliminate: bool = True) -> np.ndarray:
    """``f_i = int u_bar phi_i`` over the interior dofs (or all vertices)."""
    cut = getattr(target, "cut_mask", None)
    if getattr(target, "smoothness_tag", "smooth_h2") == "discontinuous" and cut is None:
        cut = lambda x: np.ones(x.shape[0], dtype=bool)  # noqa: E731
    f = np.zeros(mesh.n_vertices)
    for tid, vol, _, pts, lam, w in _quadrature_chunks(mesh, cut):
        vals = _eval(target, pts)
        contrib = vol[:, None] * ((vals * w) @ lam)
        f += np.bincount(mesh.tets[tid].ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)
    return f[mesh.interior_vertices] if eliminate else f


def build_system(mesh: TetMesh, rho: float, target, _allow_zero: bool = False) -> FemSystem:
    """Assemble ``A = rho*K + M`` and the load for ``-rho*Lap(u) + u = u_bar``."""
    rho = float(rho)
    if not (rho > 0 or (_allow_zero and rho == 0)):
        raise ValueError(f"regularization parameter must be positive, got {rho}")
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    A = finalize(rho * K + M) if rho > 0 else M.copy()
    f = assemble_load(mesh, target)
    return FemSystem(rho=rho, K=K, M=M, A=A, f=f, dof_map=mesh.interior_vertices, mesh=mesh)


def elementwise_l2_sq(mesh: TetMesh, u_full, exact, cut_mask=None, tets=None) -> np.ndarray:
    """Per-tet ``||u_h - exact||^2_{L2(tau)}`` for nodal values ``u_full``.

    With ``tets`` given, only those entries are filled; the rest stay zero.
    """
    out = np.zeros(mesh.n_tets)
    for tid, vol, _, pts, lam, w in _quadrature_chunks(mesh, cut_mask, tets):
        uh = u_full[mesh.tets[tid]] @ lam.T
        d = uh - _eval(exact, pts)
        out[tid] = vol * ((d * d) @ w)
    # the degree-4 rule has a negative weight; clamp roundoff below zero
    return np.maximum(out, 0.0)


def l2_error(sol: Solution, exact, cut_mask=None) -> float:
    cut = cut_mask if cut_mask is not None else getattr(exact, "cut_mask", None)
    return float(np.sqrt(elementwise_l2_sq(sol.mesh, sol.full(), exact, cut).sum()))


def h1_semi_error(sol: Solution, exact_grad) -> float:
    """``||grad(u_h - u)||_{L2}``; ``exact_grad(x, y, z)`` returns a (..., 3) array."""
    mesh, u = sol.mesh, sol.full()
    total = 0.0
    for tid, vol, G, pts, lam, w in _quadrature_chunks(mesh):
        gh = np.einsum("tk,tkd->td", u[mesh.tets[tid]], G)
        ge = exact_grad(pts[..., 0], pts[..., 1], pts[..., 2])
        d = ge - gh[:, None, :]
        total += float(vol @ (((d * d).sum(axis=2)) @ w))
    return float(np.sqrt(total))


def solve_spd(A, b, tol: float = 1e-12, dense_limit: int = 3000):
    """Solve an SPD system: dense Cholesky when small, AMG-PCG otherwise."""
    if A.shape[0] <= dense_limit:
        return DenseCholesky(A.toarray()).solve(b)
    from .amg import AmgHierarchy

    x, rep = pcg(A, b, AmgHierarchy(A), tol=tol, max_iter=1000)
    if not rep.converged:
        raise RuntimeError("SPD solve did not converge")
    return x


def hminus1_norm(K, r) -> float:
    """Discrete dual norm ``sqrt(r' K^{-1} r)``."""
    if not np.any(r):
        return 0.0
    w = solve_spd(K, r)
    val = float(r @ w)
    if val < 0:
        raise ArithmeticError("negative energy in H^-1 norm: stiffness matrix is not SPD")
    return float(np.sqrt(val))


def hminus1_error(field, mesh: TetMesh, K=None) -> float:
    """Discrete H^-1 norm of ``field``: load vector against the nodal basis, then ``K^{-1}``."""
    r = assemble_load(mesh, field)
    if K is None:
        K = assemble_stiffness(mesh)
    return hminus1_norm(K, r)


def target_errors(sol: Solution, target):
    """Squared errors ``(||u_bar - u_h||^2_{L2}, ||u_bar - u_h||^2_{H^-1})``.

    The dual residual uses ``f - M u``, since the load of ``u_h`` is ``M u``.
    """
    sysm = sol.system
    l2sq = float(elementwise_l2_sq(sol.mesh, sol.full(), target, getattr(target, "cut_mask", None)).sum())
    r = sysm.f - sysm.M @ sol.coefficients
    return l2sq, hminus1_norm(sysm.K, r) ** 2


def recover_control(sol: Solution, target) -> np.ndarray:
    """Nodal control ``z_h = (u_bar - u_h) / rho`` on every vertex."""
    x = sol.mesh.vertices
    return (target(x[:, 0], x[:, 1], x[:, 2]) - sol.full()) / sol.system.rho
