"""Two-level BDDC preconditioner for the interface Schur complement.

The tets are split into ``p`` subdomains by recursive coordinate bisection.
Dofs touched by a single subdomain are interior (I), the rest form the
interface (C). PCG runs on ``S_C u_C = g``; the preconditioner adds scaled,
constrained subdomain corrections and a coarse correction built from
minimal-energy basis functions.

Primal constraints are point values at subdomain corners (interface dofs shared
by three or more subdomains, or by two subdomains next to the Dirichlet
boundary) and averages over each connected face. Scaling is by multiplicity.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .assembly import FemSystem, tet_gradients, _MASS_REF
from .linalg import DenseCholesky, pcg
from .mesh import TetMesh

__all__ = [
    "Partition",
    "BddcOperator",
    "partition_geometric",
    "schur_apply",
    "reduce_rhs",
    "expand_solution",
    "build_coarse_basis",
    "bddc_apply",
]

DENSE_LIMIT = 4000


@dataclass(eq=False)
class Partition:
    """Tet ownership and the induced interior/interface split of the dofs.

    ``incidence`` is an (n_dofs, p) boolean CSR matrix, row ``d`` listing the
    subdomains that touch dof ``d``.
    """

    p: int
    owner: np.ndarray
    incidence: sp.csr_matrix

    @property
    def multiplicity(self) -> np.ndarray:
        return np.diff(self.incidence.indptr)

    @property
    def dof_class(self) -> np.ndarray:
        """0 for subdomain-interior dofs, 1 for interface dofs."""
        return (self.multiplicity >= 2).astype(np.int8)

    def dof_subdomains(self, d: int) -> tuple:
        s = self.incidence
        return tuple(int(i) for i in s.indices[s.indptr[d]:s.indptr[d + 1]])

    def tet_counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.p)


def _rcb(centroids, ids, p, owner, first):
    if p == 1:
        owner[ids] = first
        return
    c = centroids[ids]
    axis = int(np.argmax(np.ptp(c, axis=0)))
    p_left = p // 2
    n_left = int(round(ids.size * p_left / p))
    srt = ids[np.argsort(c[:, axis], kind="stable")]
    _rcb(centroids, srt[:n_left], p_left, owner, first)
    _rcb(centroids, srt[n_left:], p - p_left, owner, first + p_left)


def partition_geometric(mesh: TetMesh, p: int) -> Partition:
    """Recursive coordinate bisection of tet centroids along the longest box axis."""
    p = int(p)
    if p < 2:
        raise ValueError("BDDC needs at least two subdomains")
    if p > mesh.n_tets:
        raise ValueError(f"cannot split {mesh.n_tets} tets into {p} subdomains")
    owner = np.empty(mesh.n_tets, dtype=np.int64)
    _rcb(mesh.centroids(), np.arange(mesh.n_tets), p, owner, 0)
    return Partition(p=p, owner=owner, incidence=_incidence(mesh, owner, p))


def _incidence(mesh, owner, p):
    v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
    interior = mesh.interior_vertices
    v2d[interior] = np.arange(interior.size)
    d = v2d[mesh.tets].ravel()
    s = np.repeat(owner, 4)
    keep = d >= 0
    inc = sp.csr_matrix(
        (np.ones(int(keep.sum()), dtype=bool), (d[keep], s[keep])), shape=(interior.size, p)
    )
    inc.sum_duplicates()
    inc.sort_indices()
    return inc


class _SpdSolve:
    """Factorization of a sparse SPD block; dense Cholesky when small."""

    def __init__(self, A):
        self.n = A.shape[0]
        if self.n <= DENSE_LIMIT:
            self._chol = DenseCholesky(A.toarray())
            self._lu = None
        else:
            self._chol = None
            self._lu = spla.splu(sp.csc_matrix(A))

    def __call__(self, b):
        if self.n == 0:
            return np.zeros_like(b)
        if self._chol is not None:
            return self._chol.solve(b)
        return self._lu.solve(np.asarray(b, dtype=np.float64))


@dataclass(eq=False)
class _Subdomain:
    index: int
    interior: np.ndarray  # global dof ids
    gamma: np.ndarray  # global dof ids of the local interface
    gamma_pos: np.ndarray  # positions in the global interface vector
    scaling: np.ndarray
    solve_II: _SpdSolve
    A_CI: sp.csr_matrix  # global rows C, columns interior of this subdomain
    A_IC: sp.csr_matrix
    S: np.ndarray  # local Schur complement on gamma
    primal: np.ndarray = None  # global constraint ids
    C: np.ndarray = None
    kkt: tuple = None
    Phi: np.ndarray = None


class BddcOperator:
    """Assembled BDDC data for one system and partition.

    Parameters
    ----------
    system : FemSystem
    partition : Partition
    threads : int
        Worker threads for the per-subdomain work.
    """

    def __init__(self, system: FemSystem, partition: Partition, threads: int = 1):
        t0 = time.perf_counter()
        self.system = system
        self.partition = partition
        self.threads = max(1, int(threads))
        mesh = system.mesh
        A = system.A
        mult = partition.multiplicity
        if (mult == 0).any():
            raise ValueError("partition leaves dofs untouched")
        self.interface = np.flatnonzero(mult >= 2)
        self.interior = np.flatnonzero(mult == 1)
        self.cpos = np.full(system.n, -1, dtype=np.int64)
        self.cpos[self.interface] = np.arange(self.interface.size)
        self.A_CC = A[self.interface][:, self.interface].tocsr()

        v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
        v2d[system.dof_map] = np.arange(system.n)
        self._v2d = v2d
        inc = partition.incidence.tocsc()
        A_C = A[self.interface].tocsc()

        def setup(i):
            dofs = np.sort(inc.indices[inc.indptr[i]:inc.indptr[i + 1]])
            interior = dofs[mult[dofs] == 1]
            gamma = dofs[mult[dofs] >= 2]
            A_loc = self._neumann_matrix(i, np.concatenate([interior, gamma]))
            ni = interior.size
            solve_II = _SpdSolve(A[interior][:, interior])
            A_IG = A_loc[:ni, ni:].toarray()
            S = A_loc[ni:, ni:].toarray()
            if ni and gamma.size:
                S -= A_IG.T @ solve_II(A_IG)
            S = 0.5 * (S + S.T)
            A_CI = A_C[:, interior].tocsr()
            return _Subdomain(
                index=i,
                interior=interior,
                gamma=gamma,
                gamma_pos=self.cpos[gamma],
                scaling=1.0 / mult[gamma],
                solve_II=solve_II,
                A_CI=A_CI,
                A_IC=A_CI.T.tocsr(),
                S=S,
            )

        self.subdomains = self._map(setup, range(partition.p))
        self._build_constraints()
        build_coarse_basis(self)
        self.setup_seconds = time.perf_counter() - t0

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(fn, items))

    def _neumann_matrix(self, i, local_dofs):
        """Subdomain matrix ``rho*K_i + M_i`` assembled from the subdomain's tets only."""
        mesh, rho = self.system.mesh, self.system.rho
        tets = mesh.tets[self.partition.owner == i]
        vol, G = tet_gradients(mesh.vertices[tets])
        Ke = rho * vol[:, None, None] * np.einsum("tik,tjk->tij", G, G) + vol[:, None, None] * _MASS_REF
        g2l = np.full(self.system.n, -1, dtype=np.int64)
        g2l[local_dofs] = np.arange(local_dofs.size)
        loc = g2l[np.where(self._v2d[tets] >= 0, self._v2d[tets], 0)]
        loc[self._v2d[tets] < 0] = -1
        rows = np.repeat(loc, 4, axis=1).ravel()
        cols = np.tile(loc, (1, 4)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        n = local_dofs.size
        out = sp.coo_matrix((Ke.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
        return (out + out.T) * 0.5

    def _build_constraints(self):
        mesh, part = self.system.mesh, self.partition
        mult = part.multiplicity
        # interface dofs with an edge to a Dirichlet vertex
        e = mesh.edges()
        bnd = mesh.boundary_vertex
        touch = np.zeros(mesh.n_vertices, dtype=bool)
        touch[e[bnd[e[:, 1]], 0]] = True
        touch[e[bnd[e[:, 0]], 1]] = True
        near_dirichlet = touch[self.system.dof_map]

        iface = self.interface
        corner = (mult[iface] >= 3) | near_dirichlet[iface]
        constraints = [(np.array([d]), np.ones(1)) for d in iface[corner]]

        rest = iface[~corner]
        if rest.size:
            keys = [part.dof_subdomains(d) for d in rest]
            groups = {}
            for d, k in zip(rest, keys):
                groups.setdefault(k, []).append(d)
            graph = self.system.A
            for k in sorted(groups):
                dofs = np.array(groups[k])
                sub = graph[dofs][:, dofs]
                ncomp, label = csgraph.connected_components(sub, directed=False)
                for c in range(ncomp):
                    members = dofs[label == c]
                    constraints.append((members, np.full(members.size, 1.0 / members.size)))
        self.constraints = constraints
        self.n_primal = len(constraints)

        owners = [[] for _ in range(part.p)]
        for j, (dofs, _) in enumerate(constraints):
            for i in part.dof_subdomains(int(dofs[0])):
                owners[i].append(j)
        for sd in self.subdomains:
            sd.primal = np.array(owners[sd.index], dtype=np.int64)
            g2l = {int(d): k for k, d in enumerate(sd.gamma)}
            C = np.zeros((sd.primal.size, sd.gamma.size))
            for r, j in enumerate(sd.primal):
                dofs, w = constraints[j]
                for d, wd in zip(dofs, w):
                    C[r, g2l[int(d)]] = wd
            _check_rank(C, sd.index)
            sd.C = C

    @property
    def n_interface(self) -> int:
        return self.interface.size

    def schur(self, x):
        return schur_apply(self, x)

    def __call__(self, r):
        return bddc_apply(self, r)

    def solve(self, f=None, tol: float = 1e-8, max_iter: int = 500):
        """Full solution of ``A u = f`` through the preconditioned interface problem."""
        f = self.system.f if f is None else np.asarray(f, dtype=np.float64)
        g = reduce_rhs(self, f)
        u_C, report = pcg(self.schur, g, self, tol=tol, max_iter=max_iter)
        return expand_solution(self, u_C, f), report

    def schur_dense(self) -> np.ndarray:
        """Assembled ``S_C`` from the local Schur complements (small problems only)."""
        S = np.zeros((self.n_interface, self.n_interface))
        for sd in self.subdomains:
            S[np.ix_(sd.gamma_pos, sd.gamma_pos)] += sd.S
        return S


def _check_rank(C, index):
    if C.shape[0] and np.linalg.matrix_rank(C) < C.shape[0]:
        raise ValueError(f"primal constraints of subdomain {index} are rank deficient")


def schur_apply(op: BddcOperator, x):
    """``S_C x = A_CC x - sum_i A_CI^i (A_II^i)^{-1} A_IC^i x``."""
    x = np.asarray(x, dtype=np.float64)
    y = op.A_CC @ x
    parts = op._map(lambda sd: sd.A_CI @ sd.solve_II(sd.A_IC @ x), op.subdomains)
    for p in parts:
        y -= p
    return y


def reduce_rhs(op: BddcOperator, f):
    """``g = f_C - A_CI A_II^{-1} f_I``."""
    f = np.asarray(f, dtype=np.float64)
    g = f[op.interface].copy()
    parts = op._map(lambda sd: sd.A_CI @ sd.solve_II(f[sd.interior]), op.subdomains)
    for p in parts:
        g -= p
    return g


def expand_solution(op: BddcOperator, u_C, f):
    """Back-substitute ``u_I = A_II^{-1} (f_I - A_IC u_C)`` in every subdomain."""
    f = np.asarray(f, dtype=np.float64)
    u = np.zeros(op.system.n)
    u[op.interface] = u_C
    parts = op._map(lambda sd: sd.solve_II(f[sd.interior] - sd.A_IC @ u_C), op.subdomains)
    for sd, p in zip(op.subdomains, parts):
        u[sd.interior] = p
    return u


def build_coarse_basis(op: BddcOperator):
    """Solve the constrained local problems for every subdomain's coarse basis ``Phi``.

    Each column of ``Phi_i`` has minimal ``S_i`` energy among interface vectors
    with value one on one local primal constraint and zero on the others. The
    coarse matrix ``sum_i Phi_i^T S_i Phi_i`` is assembled and factored.
    """

    def local(sd):
        ng, nc = sd.gamma.size, sd.primal.size
        K = np.zeros((ng + nc, ng + nc))
        K[:ng, :ng] = sd.S
        K[ng:, :ng] = sd.C
        K[:ng, ng:] = sd.C.T
        sd.kkt = scipy.linalg.lu_factor(K, check_finite=False) if ng + nc else None
        if nc:
            rhs = np.zeros((ng + nc, nc))
            rhs[ng:] = np.eye(nc)
            sd.Phi = scipy.linalg.lu_solve(sd.kkt, rhs, check_finite=False)[:ng]
        else:
            sd.Phi = np.zeros((ng, 0))
        return sd.Phi.T @ sd.S @ sd.Phi

    blocks = op._map(local, op.subdomains)
    S0 = np.zeros((op.n_primal, op.n_primal))
    for sd, b in zip(op.subdomains, blocks):
        S0[np.ix_(sd.primal, sd.primal)] += b
    op.coarse_matrix = 0.5 * (S0 + S0.T)
    op.coarse_factorization = DenseCholesky(op.coarse_matrix)
    return [sd.Phi for sd in op.subdomains]


def bddc_apply(op: BddcOperator, r):
    """``z = R_C^T (T_sub + T_0) R_C r`` with multiplicity-scaled restrictions."""
    r = np.asarray(r, dtype=np.float64)

    def local(sd):
        ri = sd.scaling * r[sd.gamma_pos]
        ng = sd.gamma.size
        if sd.kkt is None:
            return ri, np.zeros(ng)
        rhs = np.concatenate([ri, np.zeros(sd.primal.size)])
        x = scipy.linalg.lu_solve(sd.kkt, rhs, check_finite=False)[:ng]
        return ri, x

    parts = op._map(local, op.subdomains)
    rp = np.zeros(op.n_primal)
    for sd, (ri, _) in zip(op.subdomains, parts):
        rp[sd.primal] += sd.Phi.T @ ri
    up = op.coarse_factorization.solve(rp)
    z = np.zeros_like(r)
    for sd, (_, x) in zip(op.subdomains, parts):
        z[sd.gamma_pos] += sd.scaling * (x + sd.Phi @ up[sd.primal])
    return z
