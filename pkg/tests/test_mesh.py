import numpy as np
import pytest

from ns2d.mesh import (Mesh, FaceTopology, build_rect_mesh, write_mesh,
                       mesh_from_file, extract_faces)


def test_rect_mesh_counts_and_h():
    mesh = build_rect_mesh(0, 2 * np.pi, 0, 2 * np.pi, 10, 10)
    assert mesh.n_vertices == 121
    assert mesh.n_triangles == 200
    # diagonal of a square cell of side 2*pi/10
    assert mesh.h_max == pytest.approx(0.8886, abs=5e-5)


def test_rect_mesh_h_unit_square():
    mesh = build_rect_mesh(0, 1, 0, 1, 4, 4)
    assert mesh.h_max == pytest.approx(0.35355, abs=5e-6)


def test_triangles_are_ccw():
    mesh = build_rect_mesh(0, 1, 0, 1, 3, 3)
    assert np.all(mesh.signed_areas() > 0)


def test_cw_triangle_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="triangle 0"):
        Mesh(verts, np.array([[0, 2, 1]]))


def test_face_counts():
    mesh = build_rect_mesh(0, 1, 0, 1, 3, 3)
    topo = FaceTopology(mesh)
    # every triangle contributes 3 faces, interior ones shared by 2
    assert 2 * topo.n_interior + topo.n_boundary == 3 * mesh.n_triangles
    assert topo.n_boundary == 12


def test_boundary_tags_cover_all_sides():
    mesh = build_rect_mesh(-1, 1, 0, 2, 4, 4)
    topo = FaceTopology(mesh)
    tags = [topo.tags[f] for f in topo.boundary]
    for side in ('left', 'right', 'bottom', 'top'):
        assert tags.count(side) == 4
    mid = 0.5 * (mesh.vertices[topo.va] + mesh.vertices[topo.vb])
    sides = {'left': (0, -1.0), 'right': (0, 1.0), 'bottom': (1, 0.0),
             'top': (1, 2.0)}
    for f in topo.boundary:
        axis, value = sides[topo.tags[f]]
        assert mid[f, axis] == pytest.approx(value)


def test_face_normals_unit_and_outward_from_plus():
    mesh = build_rect_mesh(0, 1, 0, 1, 3, 3)
    topo = FaceTopology(mesh)
    assert np.abs(np.linalg.norm(topo.normal, axis=1) - 1).max() < 1e-13
    centers = mesh.vertices[mesh.triangles].mean(axis=1)
    mid = 0.5 * (mesh.vertices[topo.va] + mesh.vertices[topo.vb])
    for f in topo.interior:
        d = centers[topo.elem_minus[f]] - centers[topo.elem_plus[f]]
        assert topo.normal[f] @ d > 0
    for f in topo.boundary:
        d = mid[f] - centers[topo.elem_plus[f]]
        assert topo.normal[f] @ d > 0


def test_cell_faces_close_up():
    # signed face normals of each element integrate to zero over its
    # closed boundary, tying cell_face_sign to the face geometry
    mesh = build_rect_mesh(0, 1, 0, 1, 2, 3)
    topo = FaceTopology(mesh)
    for e in range(mesh.n_triangles):
        f = topo.cell_faces[e]
        s = topo.cell_face_sign[e]
        total = (s[:, None] * topo.h_f[f, None] * topo.normal[f]).sum(0)
        assert np.abs(total).max() < 1e-13


def test_nonmanifold_rejected():
    verts = np.array([[0.0, 0], [1, 0], [0, 1], [0.5, -1], [0.5, -2]])
    tris = np.array([[0, 1, 2], [1, 0, 3], [1, 0, 4]])
    with pytest.raises(ValueError, match="not manifold"):
        FaceTopology(Mesh(verts, tris))


def test_inconsistent_orientation_rejected():
    # both triangles are CCW but traverse the shared edge (1,2) in the
    # same direction (they overlap geometrically, which area checks
    # cannot see)
    verts = np.array([[0.0, 0], [1, 0], [0, 1], [-1, -1]])
    tris = np.array([[0, 1, 2], [1, 2, 3]])
    with pytest.raises(ValueError, match="same direction"):
        FaceTopology(Mesh(verts, tris))


def test_mesh_file_round_trip(tmp_path):
    mesh = build_rect_mesh(0, 2, 0, 1, 3, 2)
    topo = FaceTopology(mesh)
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    back = mesh_from_file(path)
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert back.boundary_tags == mesh.boundary_tags
    assert FaceTopology(back).n_boundary == topo.n_boundary


def test_mesh_file_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("ns-mesh 1\n3\n0.0 0.0\n1.0 0.0\nnot-a-number\n"
                    "1\n0 1 2\n")
    with pytest.raises(ValueError, match=":5:"):
        mesh_from_file(path)
    path.write_text("wrong-header\n")
    with pytest.raises(ValueError, match=":1:"):
        mesh_from_file(path)


def test_mesh_file_index_range_checked(tmp_path):
    path = tmp_path / "bad2.txt"
    path.write_text("ns-mesh 1\n3\n0 0\n1 0\n0 1\n1\n0 1 9\n")
    with pytest.raises(ValueError, match=":7:"):
        mesh_from_file(path)


def test_extract_faces_matches_topology():
    mesh = build_rect_mesh(0, 1, 0, 1, 2, 2)
    assert extract_faces(mesh).n_faces == FaceTopology(mesh).n_faces
