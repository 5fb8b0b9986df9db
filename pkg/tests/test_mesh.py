import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinlayer.mesh import (InvalidGeometryError, build_interval_mesh,
                            build_rect_mesh, cell_gradients, dual_p1_integrals,
                            edge_neighbors, point_weights, quadrature_points,
                            solution_points)


def test_interval_basic(unit_interval_4):
    m = unit_interval_4
    assert m.n_cells == 4
    assert np.allclose(m.cell_areas, 0.25)
    assert abs(m.domain_volume - 1.0) <= 1e-12
    assert m.n_edges == 3


def test_interval_single_cell():
    m = build_interval_mesh(0.0, 1.0, 1)
    assert m.n_cells == 1
    assert m.n_edges == 0


def test_interval_dual_widths(unit_interval_4):
    # midpoint-to-midpoint construction, half cells at the ends
    w = unit_interval_4.dual_widths
    assert np.array_equal(w, [0.125, 0.25, 0.25, 0.25, 0.125])
    assert abs(w.sum() - 1.0) <= 1e-12


def test_rect_counts():
    m = build_rect_mesh((0, 1), (0, 1), 2, 2)
    assert m.n_cells == 4
    assert np.allclose(m.cell_areas, 0.25)
    assert m.n_edges == 4

    m1 = build_rect_mesh((0, 1), (0, 1), 1, 1)
    assert m1.n_cells == 1
    assert m1.n_edges == 0

    # interior edges: (nx-1)*ny + nx*(ny-1)
    m32 = build_rect_mesh((0, 1), (0, 1), 3, 2)
    assert m32.n_cells == 6
    assert m32.n_edges == 7


def test_edge_neighbors_counts():
    m = build_rect_mesh((0, 1), (0, 1), 3, 3)
    assert len(edge_neighbors(m, 4)) == 4   # center cell
    assert len(edge_neighbors(m, 0)) == 2   # corner
    m1 = build_interval_mesh(0, 1, 4)
    nbrs = edge_neighbors(m1, 0)
    assert len(nbrs) == 1 and nbrs[0][0] == 1


def test_edge_neighbor_symmetry_and_normal_antisymmetry():
    m = build_rect_mesh((0, 2), (0, 1), 4, 3)
    for j in range(m.n_cells):
        for k, ell, n in edge_neighbors(m, j):
            back = [(kk, e, nn) for kk, e, nn in edge_neighbors(m, k) if kk == j]
            assert len(back) == 1
            _, ell_back, n_back = back[0]
            assert ell_back == ell
            # exact bitwise negation of the paired normal
            assert np.array_equal(n_back, -n)


def test_geometry_errors():
    with pytest.raises(InvalidGeometryError):
        build_interval_mesh(0.0, 0.0, 4)
    with pytest.raises(InvalidGeometryError):
        build_interval_mesh(0.0, 1.0, 0)
    with pytest.raises(InvalidGeometryError):
        build_rect_mesh((0, 1), (1, 1), 2, 2)
    with pytest.raises(KeyError):
        edge_neighbors(build_interval_mesh(0, 1, 3), 7)


@given(n=st.integers(min_value=1, max_value=60),
       a=st.floats(min_value=-5, max_value=5),
       width=st.floats(min_value=1e-3, max_value=10))
@settings(max_examples=50, deadline=None)
def test_partitions_hold(n, a, width):
    m = build_interval_mesh(a, a + width, n)
    assert abs(m.cell_areas.sum() - width) <= 1e-12 * max(1.0, width)
    assert abs(m.dual_widths.sum() - width) <= 1e-12 * max(1.0, width)
    assert np.all(m.cell_areas > 0)
    assert np.all(m.edge_lengths > 0)


def test_backend_points(unit_interval_4):
    m = unit_interval_4
    assert solution_points(m, "fv").shape == (4, 1)
    assert solution_points(m, "fve").shape == (5, 1)
    assert np.array_equal(point_weights(m, "fv"), m.cell_areas)
    assert np.array_equal(point_weights(m, "fve"), m.dual_widths)
    # dual midpoints: interior nodes themselves, quarter-cells at the ends
    qp = quadrature_points(m, "fve")[:, 0]
    assert np.allclose(qp, [0.0625, 0.25, 0.5, 0.75, 0.9375])


def test_dual_p1_integrals(unit_interval_4):
    m = unit_interval_4
    # hat of height 1 at interior node: mass equals the dual width
    u = np.zeros(5)
    u[2] = 1.0
    integ = dual_p1_integrals(m, u)
    assert abs(integ.sum() - m.dual_widths[2]) <= 1e-15
    # boundary ramp: dry end node next to height-1 node holds h/8
    ramp = np.zeros(5)
    ramp[1] = 1.0
    assert abs(dual_p1_integrals(m, ramp)[0] - 0.25 / 8.0) <= 1e-15
    # total equals the trapezoid integral for any nodal data
    rng = np.random.default_rng(5)
    v = rng.random(5)
    assert abs(dual_p1_integrals(m, v).sum()
               - np.trapezoid(v, m.node_x)) <= 1e-14


def test_cell_gradients_linear_exact():
    m = build_interval_mesh(0, 1, 16)
    vals = 3.0 * m.cell_centroids[:, 0] + 1.0
    g = cell_gradients(m, vals)
    assert np.allclose(g[:, 0], 3.0)
    m2 = build_rect_mesh((0, 1), (0, 2), 8, 6)
    vals2 = 2.0 * m2.cell_centroids[:, 0] - 0.5 * m2.cell_centroids[:, 1]
    g2 = cell_gradients(m2, vals2)
    assert np.allclose(g2[:, 0], 2.0)
    assert np.allclose(g2[:, 1], -0.5)


def test_mesh_dump(tmp_path, unit_interval_4):
    path = tmp_path / "mesh.txt"
    unit_interval_4.dump(path)
    lines = path.read_text().strip().splitlines()
    cells = [ln for ln in lines if ln.startswith("cell ")]
    edges = [ln for ln in lines if ln.startswith("edge ")]
    assert len(cells) == 4 and len(edges) == 3
    j, k, ell, nx = edges[0].split()[1:]
    assert (int(j), int(k)) == (0, 1)
    assert float(ell) == 1.0 and float(nx) == 1.0


def test_mesh_arrays_readonly(unit_interval_4):
    with pytest.raises(ValueError):
        unit_interval_4.cell_areas[0] = 99.0
