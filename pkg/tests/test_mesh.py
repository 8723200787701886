import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlmaxwell.mesh import (
    TET_EDGES,
    audit,
    build_cube_mesh,
    build_cylinder_mesh,
    from_tets,
    mesh_quality,
    rotation_vertex_map,
    write_vtk,
)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cube_counts_match_oracle(oracles, n):
    m = build_cube_mesh(n)
    ref = oracles["cube_counts"][str(n)]
    assert m.n_vertices == ref["vertices"]
    assert m.n_edges == ref["edges"]
    assert m.n_faces == ref["faces"]
    assert m.n_tets == ref["tets"]
    assert len(m.interior_edges) == ref["interior_edges"]
    assert len(m.interior_vertices) == ref["interior_vertices"]


@given(st.integers(1, 4))
@settings(max_examples=4, deadline=None)
def test_cube_invariants(n):
    m = build_cube_mesh(n)
    audit(m)
    assert m.euler_characteristic() == 1
    assert m.volumes().sum() == pytest.approx(1.0, rel=1e-12)
    assert len(m.boundary_faces) == 12 * n * n
    h, angle = mesh_quality(m)
    assert h == pytest.approx(np.sqrt(3) / n)  # body diagonal
    assert angle > 0


@pytest.mark.parametrize("shape", [(1, 1, 8), (2, 2, 12), (3, 2, 16)])
def test_cylinder_invariants(shape):
    nr, nz, na = shape
    m = build_cylinder_mesh(nr, nz, na, radius=1.0, height=2.0)
    audit(m)
    assert m.euler_characteristic() == 1
    # polygonal cross-section with na sides inscribed in the unit circle
    area = 0.5 * na * np.sin(2 * np.pi / na)
    assert m.volumes().sum() == pytest.approx(2.0 * area, rel=1e-12)
    assert m.meta["kind"] == "cylinder"


def test_cylinder_rotation_symmetry():
    m = build_cylinder_mesh(2, 2, 12)
    perm = rotation_vertex_map(m, 2 * np.pi / 12)
    assert sorted(perm) == list(range(m.n_vertices))
    with pytest.raises(ValueError):
        rotation_vertex_map(m, 0.1)


def test_edge_orientation_and_signs():
    m = build_cube_mesh(2)
    assert np.all(m.edges[:, 0] < m.edges[:, 1])
    local = m.tets[:, TET_EDGES]
    glob = m.edges[m.tet_edges]
    assert np.array_equal(np.sort(local, axis=-1), glob)
    expected = np.where(local[..., 0] < local[..., 1], 1, -1)
    assert np.array_equal(expected, m.tet_edge_signs)


def test_from_tets_reorients_and_rejects_degenerate():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    m = from_tets(v, [[0, 2, 1, 3]])
    assert m.volumes()[0] == pytest.approx(1 / 6)
    assert m.boundary_edge_flags.all()
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    with pytest.raises(ValueError, match="degenerate"):
        from_tets(flat, [[0, 1, 2, 3]])


def test_mesh_is_immutable():
    m = build_cube_mesh(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_vtk_writer(tmp_path):
    m = build_cube_mesh(1)
    p = tmp_path / "m.vtk"
    write_vtk(p, m, point_vectors={"E": np.zeros((8, 3))}, point_scalars={"s": np.arange(8.0)})
    text = p.read_text()
    assert "CELLS 6 30" in text and "VECTORS E double" in text


def test_generators_reject_bad_counts():
    with pytest.raises(ValueError):
        build_cube_mesh(0)
    with pytest.raises(ValueError):
        build_cylinder_mesh(1, 1, 2)
    with pytest.raises(ValueError):
        build_cylinder_mesh(0, 1, 4)


def test_refinement_halves_h_and_is_deterministic():
    for n in (1, 2, 3):
        assert mesh_quality(build_cube_mesh(2 * n))[0] == pytest.approx(mesh_quality(build_cube_mesh(n))[0] / 2, rel=1e-15)
    a, b = build_cylinder_mesh(2, 2, 6), build_cylinder_mesh(2, 2, 6)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.tets, b.tets)
    assert a.euler_characteristic() == 1


def test_lateral_vertices_on_polygon():
    m = build_cylinder_mesh(1, 1, 4, radius=1.0)
    r = np.hypot(m.vertices[:, 0], m.vertices[:, 1])
    assert np.allclose(r[r > 1e-12], 1.0)
    perm = rotation_vertex_map(m, np.pi / 2, tol=1e-12)
    assert len(set(perm)) == m.n_vertices
