"""One entry point for the interchangeable solvers of ``A u = f``."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .amg import AmgHierarchy
from .assembly import FemSystem, Solution
from .bddc import BddcOperator, partition_geometric
from .linalg import DenseCholesky, jacobi, pcg

__all__ = ["PRECONDITIONERS", "SolveResult", "solve_system", "direct_solve"]

PRECONDITIONERS = ("none", "jacobi", "amg", "bddc")
DENSE_LIMIT = 3000


@dataclass(eq=False)
class SolveResult:
    solution: Solution
    iterations: int
    setup_seconds: float
    solve_seconds: float
    converged: bool = True
    history: list = field(default_factory=list)

    @property
    def seconds(self) -> float:
        return self.setup_seconds + self.solve_seconds


def direct_solve(A, f):
    """Dense Cholesky for small systems, sparse LU otherwise."""
    if A.shape[0] <= DENSE_LIMIT:
        return DenseCholesky(A.toarray()).solve(f)
    return spla.splu(sp.csc_matrix(A)).solve(np.asarray(f, dtype=np.float64))


def solve_system(
    system: FemSystem,
    precond: str = "amg",
    p: int = 4,
    tol: float = 1e-8,
    threads: int = 1,
    max_iter: int = 1000,
) -> SolveResult:
    """Solve ``system`` with PCG and the named preconditioner.

    ``precond="none"`` means a direct solve, reported with zero iterations.
    For ``"bddc"`` PCG runs on the interface Schur complement with ``p``
    subdomains.
    """
    if precond not in PRECONDITIONERS:
        raise ValueError(f"unknown preconditioner {precond!r}; choose from {PRECONDITIONERS}")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    A, f = system.A, system.f
    if system.n == 0:
        return SolveResult(Solution(np.zeros(0), system, system.mesh), 0, 0.0, 0.0)

    t0 = time.perf_counter()
    if precond == "none":
        u = direct_solve(A, f)
        t1 = time.perf_counter()
        return SolveResult(Solution(u, system, system.mesh), 0, 0.0, t1 - t0)

    if precond == "bddc":
        op = BddcOperator(system, partition_geometric(system.mesh, p), threads=threads)
        t1 = time.perf_counter()
        u, report = op.solve(f, tol=tol, max_iter=max_iter)
    else:
        M = AmgHierarchy(A) if precond == "amg" else jacobi(A)
        t1 = time.perf_counter()
        u, report = pcg(A, f, M, tol=tol, max_iter=max_iter)
    t2 = time.perf_counter()
    return SolveResult(
        Solution(u, system, system.mesh),
        report.iterations,
        t1 - t0,
        t2 - t1,
        report.converged,
        list(report.history),
    )
