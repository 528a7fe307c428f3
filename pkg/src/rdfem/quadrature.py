"""Quadrature rules on tetrahedra, in barycentric coordinates.

Weights are normalized to sum to one, so ``sum_q w_q g(x_q) * |tau|``
approximates the integral of ``g`` over ``tau``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["keast4", "vertex_rule", "centroid_rule", "subdivision_rule"]


@lru_cache(maxsize=None)
def keast4():
    """Keast's 11-point rule, exact for polynomials of degree 4.

    The centroid carries a negative weight.
    """
    a = (1.0 + np.sqrt(5.0 / 14.0)) / 4.0
    b = (1.0 - np.sqrt(5.0 / 14.0)) / 4.0
    pts = [(0.25, 0.25, 0.25, 0.25)]
    w = [-74.0 / 5625.0]
    for i in range(4):
        p = [1.0 / 14.0] * 4
        p[i] = 11.0 / 14.0
        pts.append(tuple(p))
        w.append(343.0 / 45000.0)
    for i, j in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]:
        p = [b] * 4
        p[i] = p[j] = a
        pts.append(tuple(p))
        w.append(56.0 / 2250.0)
    pts = np.array(pts)
    w = np.array(w) * 6.0
    return _frozen(pts, w)


@lru_cache(maxsize=None)
def centroid_rule():
    return _frozen(np.full((1, 4), 0.25), np.ones(1))


@lru_cache(maxsize=None)
def vertex_rule():
    return _frozen(np.eye(4), np.full(4, 0.25))


@lru_cache(maxsize=None)
def subdivision_rule(depth: int = 3):
    """Composite centroid rule on ``8**depth`` equal-volume sub-tets.

    The sub-tets come from ``3 * depth`` bisection sweeps of the reference
    simplex, so the rule samples a discontinuous integrand on a fine lattice.
    """
    from .mesh import TetMesh, bisect_marked

    # reference Kuhn simplex, vertex i has barycentric coordinate e_i
    ref = TetMesh(
        vertices=np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=np.float64),
        order=np.array([[0, 1, 2, 3]]),
        tag=np.array([3], dtype=np.int8),
        generation=np.zeros(1, dtype=np.int32),
    )
    m = ref
    for _ in range(3 * depth):
        m = bisect_marked(m, np.arange(m.n_tets))
    # barycentric coordinates of the vertices of the reference simplex
    x = m.vertices
    lam = np.stack([1 - x[:, 0], x[:, 0] - x[:, 1], x[:, 1] - x[:, 2], x[:, 2]], axis=1)
    pts = lam[m.order].mean(axis=1)
    w = np.full(m.n_tets, 1.0 / m.n_tets)
    return _frozen(pts, w)


def _frozen(pts, w):
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w
