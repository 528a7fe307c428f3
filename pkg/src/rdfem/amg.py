"""Algebraic multigrid V-cycle preconditioner.

Red-black coarsening on the matrix graph, interpolation of every fine dof as
the plain average of its coarse neighbours, Galerkin coarse operators and
Gauss-Seidel smoothing (forward on the way down, backward on the way up, so
the V-cycle is a symmetric operator).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .linalg import DenseCholesky, finalize

__all__ = [
    "AmgLevel",
    "AmgHierarchy",
    "coarsen_redblack",
    "galerkin_coarse",
    "gs_forward",
    "gs_backward",
    "sgs_sweep",
    "sgs_preconditioner",
    "amg_apply",
]

COARSE_LIMIT = 64
UNMARKED, COARSE, FINE = 0, 1, 2


@numba.njit(cache=True)
def _redblack(indptr, indices, n):
    state = np.zeros(n, dtype=np.int8)
    for i in range(n):
        if state[i] != UNMARKED:
            continue
        state[i] = COARSE
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and state[j] == UNMARKED:
                state[j] = FINE
    return state


@numba.njit(cache=True)
def _count_coarse_neighbours(indptr, indices, state, n):
    cnt = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if state[i] != FINE:
            continue
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and state[j] == COARSE:
                cnt[i] += 1
    return cnt


@numba.njit(cache=True)
def _interpolation(indptr, indices, state, cidx, cnt, n):
    nnz = 0
    for i in range(n):
        nnz += 1 if state[i] == COARSE else cnt[i]
    p_ptr = np.zeros(n + 1, dtype=np.int64)
    p_idx = np.empty(nnz, dtype=np.int64)
    p_val = np.empty(nnz, dtype=np.float64)
    pos = 0
    for i in range(n):
        if state[i] == COARSE:
            p_idx[pos] = cidx[i]
            p_val[pos] = 1.0
            pos += 1
        else:
            w = 1.0 / cnt[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i and state[j] == COARSE:
                    p_idx[pos] = cidx[j]
                    p_val[pos] = w
                    pos += 1
        p_ptr[i + 1] = pos
    return p_ptr, p_idx, p_val


@numba.njit(cache=True)
def _gs_forward(indptr, indices, data, diag, f, u):
    n = f.shape[0]
    for i in range(n):
        s = f[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * u[j]
        u[i] = s / diag[i]


@numba.njit(cache=True)
def _gs_backward(indptr, indices, data, diag, f, u):
    n = f.shape[0]
    for i in range(n - 1, -1, -1):
        s = f[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * u[j]
        u[i] = s / diag[i]


def coarsen_redblack(A):
    """Red-black coarsening and averaging interpolation.

    Dofs are visited in ascending order; an unmarked dof becomes coarse and its
    unmarked neighbours fine. Every structural off-diagonal counts as a
    neighbour. A fine dof left without coarse neighbours is promoted to coarse.

    Returns
    -------
    coarse : (n,) bool array
    P : (n, n_coarse) csr_matrix
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    state = _redblack(indptr, indices, n)
    cnt = _count_coarse_neighbours(indptr, indices, state, n)
    orphans = (state == FINE) & (cnt == 0)
    if orphans.any():
        state[orphans] = COARSE
        cnt = _count_coarse_neighbours(indptr, indices, state, n)
    coarse = state == COARSE
    cidx = np.cumsum(coarse) - 1
    p_ptr, p_idx, p_val = _interpolation(indptr, indices, state, cidx, cnt, n)
    P = sp.csr_matrix((p_val, p_idx, p_ptr), shape=(n, int(coarse.sum())))
    return coarse, P


def galerkin_coarse(A, P):
    """``P^T A P``, symmetrized exactly."""
    Ac = (P.T @ (A @ P)).tocsr()
    Ac = (Ac + Ac.T) * 0.5
    return finalize(Ac)


def _diag(A):
    d = np.asarray(A.diagonal(), dtype=np.float64)
    if (d == 0).any():
        raise ZeroDivisionError("Gauss-Seidel needs a nonzero diagonal")
    return d


def gs_forward(A, f, u, diag=None):
    """One forward Gauss-Seidel pass, in place on ``u``."""
    d = _diag(A) if diag is None else diag
    _gs_forward(A.indptr, A.indices, A.data, d, np.asarray(f, dtype=np.float64), u)
    return u


def gs_backward(A, f, u, diag=None):
    d = _diag(A) if diag is None else diag
    _gs_backward(A.indptr, A.indices, A.data, d, np.asarray(f, dtype=np.float64), u)
    return u


def sgs_sweep(A, f, u=None):
    """Symmetric Gauss-Seidel: one forward then one backward pass."""
    A = sp.csr_matrix(A)
    u = np.zeros(A.shape[0]) if u is None else np.array(u, dtype=np.float64)
    d = _diag(A)
    gs_forward(A, f, u, d)
    gs_backward(A, f, u, d)
    return u


def sgs_preconditioner(A):
    """``(D+U)^{-1} D (D+L)^{-1}``, i.e. one SGS sweep from zero."""
    A = sp.csr_matrix(A)
    d = _diag(A)

    def apply(r):
        u = np.zeros(A.shape[0])
        gs_forward(A, r, u, d)
        gs_backward(A, r, u, d)
        return u

    return apply


@dataclass(eq=False)
class AmgLevel:
    A: sp.csr_matrix
    P: sp.csr_matrix | None = None
    coarse_flags: np.ndarray | None = None
    diag: np.ndarray | None = None


class AmgHierarchy:
    """Multilevel hierarchy; calling it applies one V-cycle to a residual.

    Parameters
    ----------
    A : sparse SPD matrix
    coarse_limit : int
        Levels are added until the matrix has at most this many rows; the
        coarsest system is solved by dense Cholesky.
    smoothing_steps : int
        Gauss-Seidel passes before and after each coarse correction.
    """

    def __init__(self, A, coarse_limit: int = COARSE_LIMIT, smoothing_steps: int = 1, max_levels: int = 50):
        self.smoothing_steps = int(smoothing_steps)
        A = finalize(A)
        self.levels = []
        while A.shape[0] > coarse_limit and len(self.levels) < max_levels - 1:
            coarse, P = coarsen_redblack(A)
            if P.shape[1] == A.shape[0]:
                # no coarsening possible (no off-diagonal couplings)
                break
            self.levels.append(AmgLevel(A=A, P=P, coarse_flags=coarse, diag=_diag(A)))
            A = galerkin_coarse(A, P)
        self.levels.append(AmgLevel(A=A, diag=_diag(A)))
        self.coarsest_factorization = DenseCholesky(A.toarray())

    @property
    def n(self):
        return self.levels[0].A.shape[0]

    @property
    def sizes(self):
        return [lvl.A.shape[0] for lvl in self.levels]

    def _vcycle(self, k, r):
        lvl = self.levels[k]
        if k == len(self.levels) - 1:
            return self.coarsest_factorization.solve(r)
        A, d = lvl.A, lvl.diag
        z = np.zeros_like(r)
        for _ in range(self.smoothing_steps):
            gs_forward(A, r, z, d)
        rc = lvl.P.T @ (r - A @ z)
        if rc.shape[0] != self.levels[k + 1].A.shape[0]:
            raise RuntimeError(f"hierarchy corrupted between levels {k} and {k + 1}")
        z += lvl.P @ self._vcycle(k + 1, rc)
        for _ in range(self.smoothing_steps):
            gs_backward(A, r, z, d)
        return z

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise ValueError(f"residual has shape {r.shape}, hierarchy expects ({self.n},)")
        return self._vcycle(0, r)


def amg_apply(h: AmgHierarchy, r):
    return h(r)
