import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from divdivfem.mesh import (TriMesh, load_mesh, read_mesh, refine_uniform,
                            structured_unit_square, write_mesh)


def independent_edge_set(cells):
    """Oracle: enumerate undirected edges straight from the cell list."""
    edges = set()
    for a, b, c in cells:
        edges.update({tuple(sorted(p)) for p in ((a, b), (b, c), (c, a))})
    return edges


def test_smallest_grid_counts():
    m = structured_unit_square(1)
    assert (m.n_vertices, m.n_cells, m.n_edges) == (4, 2, 5)


def test_two_by_two_counts_and_euler():
    m = structured_unit_square(2)
    assert (m.n_vertices, m.n_cells, m.n_edges) == (9, 8, 16)
    assert m.n_edges + 1 == m.n_vertices + m.n_cells


def test_four_by_four_edges_against_enumeration_oracle():
    m = structured_unit_square(4)
    oracle = independent_edge_set(m.cells)
    assert m.n_edges == len(oracle) == 56
    assert {tuple(e) for e in m.edges} == oracle
    assert 56 + 1 == 25 + 32


@given(st.integers(min_value=1, max_value=6))
def test_structured_counts_formulas(n):
    m = structured_unit_square(n)
    assert m.n_vertices == (n + 1) ** 2
    assert m.n_cells == 2 * n * n
    assert m.n_edges == 3 * n * n + 2 * n
    assert m.n_edges + 1 == m.n_vertices + m.n_cells


def test_zero_resolution_rejected():
    with pytest.raises(ValueError):
        structured_unit_square(0)


def test_refinement_counts():
    m = refine_uniform(structured_unit_square(1))
    assert m.n_cells == 8
    assert refine_uniform(m).n_cells == 32


def test_refinement_preserves_euler_by_recount():
    m = refine_uniform(structured_unit_square(2))
    oracle = independent_edge_set(m.cells)
    assert m.n_edges == len(oracle)
    assert m.n_edges + 1 == m.n_vertices + m.n_cells


def test_refinement_keeps_min_angle():
    m = structured_unit_square(2)
    a0 = m.min_angle()
    for _ in range(2):
        m = refine_uniform(m)
        assert m.min_angle() == pytest.approx(a0, abs=1e-10)


def test_cells_positively_oriented():
    m = refine_uniform(structured_unit_square(3))
    assert np.all(m.areas > 0)


def test_shared_edges_have_opposite_signs():
    m = structured_unit_square(2)
    sign_sum = np.zeros(m.n_edges)
    np.add.at(sign_sum, m.cell_edges.ravel(), m.cell_edge_signs.ravel())
    assert np.all(sign_sum[~m.boundary_edge] == 0)
    assert np.all(np.abs(sign_sum[m.boundary_edge]) == 1)


def test_orientation_sign_matches_outward_normal():
    m = structured_unit_square(2)
    for t in range(m.n_cells):
        verts = m.cell_coords(t)
        signs = m.edge_orientation_signs(t)
        for i in range(3):
            a, b = verts[i], verts[(i + 1) % 3]
            tang = (b - a) / np.linalg.norm(b - a)
            outward = np.array([tang[1], -tang[0]])
            n_e = m.edge_normal[m.cell_edges[t, i]]
            assert np.allclose(outward, signs[i] * n_e)


def test_edge_frames():
    m = structured_unit_square(3)
    # tangent from the lower to the higher vertex index, normal a clockwise
    # quarter turn of it
    vec = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    assert np.allclose(vec / np.linalg.norm(vec, axis=1)[:, None], m.edge_tangent)
    assert np.allclose(m.edge_tangent[:, 0], -m.edge_normal[:, 1])
    assert np.allclose(m.edge_tangent[:, 1], m.edge_normal[:, 0])
    assert np.allclose(np.linalg.norm(m.edge_normal, axis=1), 1.0)


def test_orientation_sign_index_check():
    m = structured_unit_square(1)
    with pytest.raises(IndexError):
        m.edge_orientation_signs(5)


def test_degenerate_cell_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        TriMesh(verts, np.array([[0, 1, 2]]))


def test_nonmanifold_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 1.0]])
    cells = np.array([[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 1, 4]])
    with pytest.raises(ValueError):
        TriMesh(verts, cells)


def test_roundtrip_io(tmp_path):
    m = refine_uniform(structured_unit_square(2))
    path = tmp_path / "mesh.txt"
    write_mesh(m, path)
    m2 = read_mesh(path)
    assert np.array_equal(m.cells, m2.cells)
    assert np.allclose(m.vertices, m2.vertices)


def test_load_mesh_selector(tmp_path):
    assert load_mesh("square:3").n_cells == 18
    m = structured_unit_square(1)
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    assert load_mesh(str(path)).n_cells == 2
