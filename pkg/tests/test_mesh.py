import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdfem.mesh import (
    TetMesh,
    bisect_marked,
    build_structured_cube,
    check_conforming,
    min_dihedral_angle,
    uniform_refine,
    write_vtk,
)


def test_single_cell():
    m = build_structured_cube(1)
    assert (m.n_vertices, m.n_tets) == (8, 6)
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert m.interior_vertices.size == 0


def test_n4_counts():
    s = build_structured_cube(4).stats()
    assert (s.n_vertices, s.n_tets, s.n_interior_dofs) == (125, 384, 27)
    assert s.h_min <= s.h_max


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_structured_invariants(n):
    m = build_structured_cube(n)
    assert m.n_vertices == (n + 1) ** 3
    assert m.n_tets == 6 * n**3
    assert m.stats().h_max == pytest.approx(math.sqrt(3) / n, rel=1e-14)
    assert (m.volumes > 0).all()
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert check_conforming(m)
    s = m.stats()
    assert s.n_interior_dofs == m.n_vertices - int(m.boundary_vertex.sum()) == (n - 1) ** 3


def test_rejects_empty_grid():
    with pytest.raises(ValueError):
        build_structured_cube(0)


def test_boundary_flag_definition():
    m = build_structured_cube(3)
    x = m.vertices
    expected = ((np.abs(x) <= 1e-14) | (np.abs(x - 1) <= 1e-14)).any(axis=1)
    np.testing.assert_array_equal(m.boundary_vertex, expected)


def test_uniform_refine():
    m = uniform_refine(build_structured_cube(1))
    assert m.n_tets == 48
    assert check_conforming(m)
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    m2 = uniform_refine(build_structured_cube(2))
    assert m2.stats().h_max == pytest.approx(math.sqrt(3) / 4, rel=1e-14)
    # original vertices plus one midpoint per edge
    base = build_structured_cube(2)
    assert m2.n_vertices == base.n_vertices + base.edges().shape[0]


def test_uniform_refine_matches_finer_grid_sizes():
    a = uniform_refine(build_structured_cube(2)).stats()
    b = build_structured_cube(4).stats()
    assert (a.n_vertices, a.n_tets, a.n_interior_dofs) == (b.n_vertices, b.n_tets, b.n_interior_dofs)


def test_empty_marking_is_identity():
    m = build_structured_cube(2)
    assert bisect_marked(m, set()) is m


def test_single_marked_tet_closure():
    m = build_structured_cube(1)
    r = bisect_marked(m, {0})
    assert r.n_tets >= 7
    assert check_conforming(r)
    # the marked tet's refinement edge is the cube diagonal, shared by all 6 tets
    assert r.n_tets == 12
    assert r.generation.max() == 1


def test_generation_increments():
    m = build_structured_cube(2)
    r = bisect_marked(m, [3])
    assert set(np.unique(r.generation)) <= {0, 1}
    assert (r.generation == 1).sum() >= 2


def test_three_full_sweeps_grow_eightfold():
    m = build_structured_cube(2)
    r = m
    for _ in range(3):
        r = bisect_marked(r, range(r.n_tets))
    assert r.n_tets >= 8 * m.n_tets


def test_out_of_range_mark():
    with pytest.raises(IndexError):
        bisect_marked(build_structured_cube(1), [6])


def test_shape_regularity_ten_sweeps():
    m = build_structured_cube(1)
    angles = [min_dihedral_angle(m)]
    for _ in range(10):
        m = bisect_marked(m, np.arange(m.n_tets))
        angles.append(min_dihedral_angle(m))
        assert m.volumes.min() > 1e-14
    assert m.n_tets == 6 * 2**10
    # Kuhn simplices only produce finitely many similarity classes
    assert min(angles) == pytest.approx(math.pi / 4, abs=1e-12)
    assert check_conforming(m)


def test_midpoint_boundary_flags():
    base = build_structured_cube(2)
    ref = uniform_refine(base)
    lookup = {tuple(np.round(v, 12)): i for i, v in enumerate(ref.vertices)}
    xb = base.vertices
    for a, b in base.edges():
        mid = tuple(np.round(0.5 * (xb[a] + xb[b]), 12))
        shared = (((xb[a] == 0) & (xb[b] == 0)) | ((xb[a] == 1) & (xb[b] == 1))).any()
        assert ref.boundary_vertex[lookup[mid]] == shared


def test_conformity_oracle_detects_hanging_node():
    m = build_structured_cube(1)
    r = bisect_marked(m, {0})
    # drop the closure: bisect only tet 0 by hand, leaving its neighbours intact
    o = np.array(m.order)
    mid = np.full(6, m.n_vertices)
    from rdfem.mesh import _bisect

    c1, c2, t = _bisect(o[:1], np.array(m.tag[:1]), mid[:1])
    verts = np.vstack([m.vertices, 0.5 * (m.vertices[o[0, 0]] + m.vertices[o[0, 3]])])
    bad = TetMesh(
        vertices=verts,
        order=np.vstack([c1, c2, o[1:]]),
        tag=np.concatenate([t, t, m.tag[1:]]),
        generation=np.zeros(7, dtype=np.int32),
    )
    assert check_conforming(r)
    assert not check_conforming(bad)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.integers(0, 10_000), min_size=1, max_size=6), min_size=1, max_size=5))
def test_random_adaptive_sequences_stay_conforming(rounds):
    m = build_structured_cube(2)
    for picks in rounds:
        m = bisect_marked(m, {p % m.n_tets for p in picks})
        assert check_conforming(m)
        assert m.volumes.min() > 1e-14
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    # vertices are never duplicated
    assert np.unique(np.round(m.vertices, 13), axis=0).shape[0] == m.n_vertices


def test_refinement_edge_is_longest_on_structured_mesh():
    m = build_structured_cube(3)
    lengths = np.linalg.norm(
        m.vertices[m.order[:, 0]] - m.vertices[m.order[np.arange(m.n_tets), m.tag]], axis=1
    )
    np.testing.assert_allclose(lengths, m.tet_diameters(), rtol=1e-14)


def test_write_vtk(tmp_path):
    m = build_structured_cube(2)
    p = tmp_path / "m.vtk"
    write_vtk(p, m, point_data={"u": np.arange(m.n_vertices, dtype=float)},
              cell_data={"part": np.arange(m.n_tets) % 3})
    text = p.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert f"POINTS {m.n_vertices} double" in text
    assert f"CELLS {m.n_tets} {5 * m.n_tets}" in text
    assert "SCALARS part int 1" in text
    lines = text.splitlines()
    i = lines.index(f"CELL_TYPES {m.n_tets}")
    assert set(lines[i + 1:i + 1 + m.n_tets]) == {"10"}
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "bad.vtk", m, point_data={"u": np.zeros(3)})
