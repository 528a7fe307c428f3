"""Conforming tetrahedral meshes of the unit cube.

Meshes start from the Kuhn (Freudenthal) subdivision of a structured grid and
are refined by tagged newest-vertex bisection (Maubach's rule). Every tet is
stored twice: ``order`` keeps the vertex sequence the bisection rule needs,
``tets`` is the same vertex set with positive orientation.

Example
-------
>>> m = build_structured_cube(2)
>>> m = bisect_marked(m, {0, 5})
>>> check_conforming(m)
True
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import permutations

import numpy as np

__all__ = [
    "TetMesh",
    "MeshStats",
    "build_structured_cube",
    "uniform_refine",
    "bisect_marked",
    "check_conforming",
    "min_dihedral_angle",
    "write_vtk",
]

BOUNDARY_TOL = 1e-14
# edge key = a * _KEY + b with a < b; vertex counts stay far below 2**31
_KEY = np.int64(1) << np.int64(31)

# the six local edges, as pairs of positions in a 4-tuple
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
_EDGE_INDEX = {(int(a), int(b)): k for k, (a, b) in enumerate(LOCAL_EDGES)}


def _edge_keys(a, b):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * _KEY + hi


@dataclass(frozen=True)
class MeshStats:
    n_vertices: int
    n_tets: int
    n_interior_dofs: int
    h_max: float
    h_min: float


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable tetrahedral mesh.

    Parameters
    ----------
    vertices : (nv, 3) float array
    order : (nt, 4) int array
        Vertices of each tet in bisection order ``(x0, x1, x2, x3)``.
    tag : (nt,) int array
        Maubach tag ``k`` in ``{1, 2, 3}``; the refinement edge is ``x0-xk``.
    generation : (nt,) int array
        Number of bisections separating the tet from the initial mesh.
    """

    vertices: np.ndarray
    order: np.ndarray
    tag: np.ndarray
    generation: np.ndarray

    def __post_init__(self):
        for arr in (self.vertices, self.order, self.tag, self.generation):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.order.shape[0]

    @cached_property
    def tets(self) -> np.ndarray:
        """Tets with positively oriented vertex order."""
        t = np.array(self.order, copy=True)
        neg = self._signed_det(t) < 0
        t[neg, 2], t[neg, 3] = self.order[neg, 3], self.order[neg, 2]
        t.setflags(write=False)
        return t

    def _signed_det(self, t):
        x = self.vertices
        x0 = x[t[:, 0]]
        e1, e2, e3 = x[t[:, 1]] - x0, x[t[:, 2]] - x0, x[t[:, 3]] - x0
        return np.einsum("ij,ij->i", e1, np.cross(e2, e3))

    @cached_property
    def volumes(self) -> np.ndarray:
        return self._signed_det(self.tets) / 6.0

    @cached_property
    def boundary_vertex(self) -> np.ndarray:
        x = self.vertices
        on = (np.abs(x) <= BOUNDARY_TOL) | (np.abs(x - 1.0) <= BOUNDARY_TOL)
        return on.any(axis=1)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        """Vertex ids of the free dofs, ascending."""
        return np.flatnonzero(~self.boundary_vertex)

    @property
    def refinement_edge(self) -> np.ndarray:
        """Local edge index (into ``LOCAL_EDGES`` over ``tets``) of each refinement edge."""
        a = self.order[np.arange(self.n_tets), 0]
        b = self.order[np.arange(self.n_tets), self.tag]
        pos_a = np.argmax(self.tets == a[:, None], axis=1)
        pos_b = np.argmax(self.tets == b[:, None], axis=1)
        lo, hi = np.minimum(pos_a, pos_b), np.maximum(pos_a, pos_b)
        lut = np.full((4, 4), -1)
        for (i, j), k in _EDGE_INDEX.items():
            lut[i, j] = k
        return lut[lo, hi]

    def refinement_edge_keys(self) -> np.ndarray:
        rows = np.arange(self.n_tets)
        return _edge_keys(self.order[:, 0], self.order[rows, self.tag])

    def edge_keys(self) -> np.ndarray:
        """(nt, 6) sorted-pair keys of all tet edges."""
        o = self.order
        return _edge_keys(o[:, LOCAL_EDGES[:, 0]], o[:, LOCAL_EDGES[:, 1]])

    def edges(self) -> np.ndarray:
        """Unique edges as (ne, 2) vertex pairs, lower index first."""
        k = np.unique(self.edge_keys().ravel())
        return np.stack([k // _KEY, k % _KEY], axis=1)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def tet_diameters(self) -> np.ndarray:
        x = self.vertices
        o = self.order
        d = x[o[:, LOCAL_EDGES[:, 0]]] - x[o[:, LOCAL_EDGES[:, 1]]]
        return np.sqrt((d * d).sum(axis=2)).max(axis=1)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.order].mean(axis=1)

    def stats(self) -> MeshStats:
        lengths = self.edge_lengths()
        return MeshStats(
            n_vertices=self.n_vertices,
            n_tets=self.n_tets,
            n_interior_dofs=int(self.interior_vertices.size),
            h_max=float(lengths.max()),
            h_min=float(lengths.min()),
        )


def build_structured_cube(n: int) -> TetMesh:
    """Uniform ``n**3`` grid of the unit cube, each cell split into 6 Kuhn tets."""
    n = int(n)
    if n < 1:
        raise ValueError(f"need at least one cell per axis, got n={n}")
    g = np.arange(n + 1, dtype=np.float64) / n
    # vertex (i, j, k) has id i*(n+1)^2 + j*(n+1) + k, coordinates (g_i, g_j, g_k)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    stride = np.array([(n + 1) ** 2, n + 1, 1], dtype=np.int64)
    c = np.arange(n, dtype=np.int64)
    I, J, K = np.meshgrid(c, c, c, indexing="ij")
    base = (I * stride[0] + J * stride[1] + K * stride[2]).ravel()

    blocks = []
    for perm in permutations(range(3)):
        # Kuhn path 0 -> e_p0 -> e_p0 + e_p1 -> (1,1,1)
        s1 = stride[perm[0]]
        s2 = s1 + stride[perm[1]]
        s3 = stride.sum()
        blocks.append(np.stack([base, base + s1, base + s2, base + s3], axis=1))
    # cell-major ordering keeps the 6 tets of one cell adjacent
    order = np.stack(blocks, axis=1).reshape(-1, 4)
    nt = order.shape[0]
    return TetMesh(
        vertices=vertices,
        order=order,
        tag=np.full(nt, 3, dtype=np.int8),
        generation=np.zeros(nt, dtype=np.int32),
    )


def _bisect(order, tag, mid):
    """Maubach bisection of every row of ``order`` with midpoint ids ``mid``."""
    c1 = np.empty_like(order)
    c2 = np.empty_like(order)
    for k in (1, 2, 3):
        s = tag == k
        if not s.any():
            continue
        o = order[s]
        z = mid[s]
        # child 1: (x0..x_{k-1}, z, x_{k+1}..x3); child 2: (x1..x_k, z, x_{k+1}..x3)
        a = np.empty((o.shape[0], 4), dtype=order.dtype)
        b = np.empty_like(a)
        a[:, :k] = o[:, :k]
        a[:, k] = z
        a[:, k + 1:] = o[:, k + 1:]
        b[:, :k] = o[:, 1:k + 1]
        b[:, k] = z
        b[:, k + 1:] = o[:, k + 1:]
        c1[s] = a
        c2[s] = b
    new_tag = np.where(tag > 1, tag - 1, 3).astype(tag.dtype)
    return c1, c2, new_tag


def bisect_marked(mesh: TetMesh, marked, max_rounds: int = 1000) -> TetMesh:
    """Bisect every marked tet at its refinement edge, plus the conforming closure.

    ``marked`` is any iterable of tet indices (a set, list or integer array).
    Midpoints are looked up by exact edge key, so a vertex is never duplicated.
    """
    marked = np.unique(np.fromiter((int(t) for t in marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_tets:
        raise IndexError("marked tet index out of range")

    vertices = mesh.vertices
    order = np.asarray(mesh.order, dtype=np.int64)
    tag = np.array(mesh.tag)
    gen = np.array(mesh.generation)
    new_vertices = []
    nv = vertices.shape[0]
    mid_keys = np.empty(0, dtype=np.int64)
    mid_ids = np.empty(0, dtype=np.int64)

    split = np.unique(_edge_keys(order[marked, 0], order[marked, tag[marked]]))

    for _ in range(max_rounds):
        ekeys = _edge_keys(order[:, LOCAL_EDGES[:, 0]], order[:, LOCAL_EDGES[:, 1]])
        rows = np.arange(order.shape[0])
        rkeys = _edge_keys(order[:, 0], order[rows, tag])
        # closure: a tet touching a to-be-split edge must itself be bisected
        while True:
            hit = np.isin(ekeys, split).any(axis=1)
            grown = np.union1d(split, rkeys[hit])
            if grown.size == split.size:
                break
            split = grown
        if not hit.any():
            break

        rk = rkeys[hit]
        uk = np.unique(rk)
        fresh = uk[~np.isin(uk, mid_keys)]
        if fresh.size:
            a, b = fresh // _KEY, fresh % _KEY
            allv = vertices if not new_vertices else np.vstack([vertices] + new_vertices)
            new_vertices.append(0.5 * (allv[a] + allv[b]))
            ids = np.arange(nv, nv + fresh.size, dtype=np.int64)
            nv += fresh.size
            mid_keys = np.concatenate([mid_keys, fresh])
            mid_ids = np.concatenate([mid_ids, ids])
            srt = np.argsort(mid_keys, kind="stable")
            mid_keys, mid_ids = mid_keys[srt], mid_ids[srt]
        mid = mid_ids[np.searchsorted(mid_keys, rk)]

        c1, c2, t_new = _bisect(order[hit], tag[hit], mid)
        g_new = gen[hit] + 1
        # children take the parent's slot, in sequence
        keep = ~hit
        counts = np.where(hit, 2, 1)
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        total = int(counts.sum())
        o2 = np.empty((total, 4), dtype=np.int64)
        tg2 = np.empty(total, dtype=tag.dtype)
        gn2 = np.empty(total, dtype=gen.dtype)
        o2[start[keep]] = order[keep]
        tg2[start[keep]] = tag[keep]
        gn2[start[keep]] = gen[keep]
        s = start[hit]
        o2[s], o2[s + 1] = c1, c2
        tg2[s] = tg2[s + 1] = t_new
        gn2[s] = gn2[s + 1] = g_new
        order, tag, gen = o2, tg2, gn2

        ekeys = _edge_keys(order[:, LOCAL_EDGES[:, 0]], order[:, LOCAL_EDGES[:, 1]])
        split = split[np.isin(split, ekeys)]
        if split.size == 0:
            break
    else:
        raise RuntimeError("bisection closure did not terminate; mesh labelling is inconsistent")

    if new_vertices:
        vertices = np.vstack([vertices] + new_vertices)
    return TetMesh(vertices=vertices, order=order, tag=tag, generation=gen)


def uniform_refine(mesh: TetMesh) -> TetMesh:
    """Eight children per tet: three full bisection sweeps."""
    for _ in range(3):
        mesh = bisect_marked(mesh, np.arange(mesh.n_tets))
    return mesh


def _face_keys(tets: np.ndarray, nv: int):
    faces = np.concatenate(
        [tets[:, [1, 2, 3]], tets[:, [0, 2, 3]], tets[:, [0, 1, 3]], tets[:, [0, 1, 2]]]
    )
    faces = np.sort(faces, axis=1).astype(np.int64)
    return faces


def check_conforming(mesh: TetMesh) -> bool:
    """Face-matching oracle.

    Every face must be shared by exactly two tets, or by exactly one tet when it
    lies in the boundary of the cube. A hanging node leaves an unmatched face in
    the interior and fails the check.
    """
    if (mesh.volumes <= 0).any():
        return False
    faces = _face_keys(mesh.order, mesh.n_vertices)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    if (counts > 2).any():
        return False
    single = uniq[counts == 1]
    x = mesh.vertices[single]  # (nf, 3 vertices, 3 coords)
    on_plane = np.zeros(single.shape[0], dtype=bool)
    for d in range(3):
        c = x[:, :, d]
        on_plane |= (np.abs(c) <= BOUNDARY_TOL).all(axis=1)
        on_plane |= (np.abs(c - 1.0) <= BOUNDARY_TOL).all(axis=1)
    return bool(on_plane.all())


def min_dihedral_angle(mesh: TetMesh) -> float:
    """Smallest interior dihedral angle over all tets, in radians."""
    x = mesh.vertices[mesh.tets]
    angles = []
    for i, j in LOCAL_EDGES:
        k, l = [m for m in range(4) if m not in (i, j)]
        e = x[:, j] - x[:, i]
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        a = x[:, k] - x[:, i]
        b = x[:, l] - x[:, i]
        a -= (a * e).sum(1, keepdims=True) * e
        b -= (b * e).sum(1, keepdims=True) * e
        cosang = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


def write_vtk(path, mesh: TetMesh, point_data=None, cell_data=None, title="rdfem mesh"):
    """Write a legacy ASCII VTK unstructured grid (cell type 10).

    ``point_data`` and ``cell_data`` map names to per-vertex / per-tet arrays.
    Integer cell arrays (e.g. a partition) are written as ``int``.
    """
    nv, nt = mesh.n_vertices, mesh.n_tets
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, mesh.vertices, fmt="%.17g")
        fh.write(f"CELLS {nt} {5 * nt}\n")
        cells = np.hstack([np.full((nt, 1), 4, dtype=np.int64), mesh.tets])
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 10), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, vals in point_data.items():
                _write_scalars(fh, name, np.asarray(vals), nv)
        if cell_data:
            fh.write(f"CELL_DATA {nt}\n")
            for name, vals in cell_data.items():
                _write_scalars(fh, name, np.asarray(vals), nt)


def _write_scalars(fh, name, vals, n):
    if vals.shape != (n,):
        raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({n},)")
    if np.issubdtype(vals.dtype, np.integer):
        fh.write(f"SCALARS {name} int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, vals, fmt="%d")
    else:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, vals, fmt="%.17g")
