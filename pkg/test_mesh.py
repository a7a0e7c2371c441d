import numpy as np
import pytest

from errors import MeshError
from mesh import BoundaryTag, Mesh, build_unit_square, classify_boundary


@pytest.mark.parametrize("level, n_vertices, n_triangles, n_gamma0", [
    (1, 9, 8, 4),
    (3, 81, 128, 16),
    (5, 1089, 2048, 64),
])
def test_structured_counts(level, n_vertices, n_triangles, n_gamma0):
    mesh = build_unit_square(level)
    assert mesh.n_vertices == n_vertices
    assert mesh.n_triangles == n_triangles
    assert mesh.n_edges == n_vertices + n_triangles - 1
    stats = classify_boundary(mesh)
    assert stats["gamma0"] == n_gamma0
    assert stats["gammap"] == n_gamma0
    assert stats["boundary"] == 2 * n_gamma0


def test_areas_are_positive_and_cover_the_square(mesh3):
    assert np.all(mesh3.signed_areas > 0.0)
    assert mesh3.signed_areas.sum() == pytest.approx(1.0)


def test_triangle_numbering_follows_cells():
    mesh = build_unit_square(1)
    np.testing.assert_array_equal(mesh.triangles[0], [0, 1, 4])
    np.testing.assert_array_equal(mesh.triangles[1], [0, 4, 3])


def test_corners_belong_to_gamma0(mesh2):
    corners = [0, 4, 20, 24]
    assert np.all(mesh2.vertex_tags[corners] == BoundaryTag.GAMMA0)
    gammap = mesh2.boundary_vertices(BoundaryTag.GAMMAP)
    assert np.all(mesh2.vertices[gammap, 0] > 0.0)
    assert np.all(mesh2.vertices[gammap, 0] < 1.0)


def test_outward_normals(mesh2):
    for tag in (BoundaryTag.GAMMA0, BoundaryTag.GAMMAP):
        edges = mesh2.boundary_edges(tag)
        mid = mesh2.vertices[mesh2.edges[edges]].mean(axis=1)
        normals = mesh2.edge_normals[edges]
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)
        # outward: stepping along the normal leaves the square
        outside = mid + 0.1 * normals
        assert np.all(np.any((outside < 0.0) | (outside > 1.0), axis=1))
    interior = mesh2.boundary_edges(BoundaryTag.INTERIOR)
    np.testing.assert_array_equal(mesh2.edge_normals[interior], 0.0)


def test_mirrored_mesh_keeps_numbering(mesh2):
    image = mesh2.mirrored()
    np.testing.assert_allclose(image.vertices[:, 0], 1.0 - mesh2.vertices[:, 0])
    np.testing.assert_array_equal(image.edges, mesh2.edges)
    np.testing.assert_array_equal(image.vertex_tags, mesh2.vertex_tags)
    assert np.all(image.signed_areas > 0.0)
    assert image.mirror


def test_locate_returns_containing_triangle(mesh3):
    rng = np.random.default_rng(1)
    points = rng.uniform(size=(50, 2))
    tri, bary = mesh3.locate(points[:, 0], points[:, 1])
    assert np.all(bary >= -1e-12)
    np.testing.assert_allclose(bary.sum(axis=1), 1.0)
    rebuilt = np.einsum("ni,nid->nd", bary, mesh3.vertices[mesh3.triangles[tri]])
    np.testing.assert_allclose(rebuilt, points, atol=1e-12)


def test_locate_on_mirrored_mesh(mesh3):
    image = mesh3.mirrored()
    tri, bary = image.locate([0.1, 0.95], [0.3, 0.05])
    rebuilt = np.einsum("ni,nid->nd", bary, image.vertices[image.triangles[tri]])
    np.testing.assert_allclose(rebuilt, [[0.1, 0.3], [0.95, 0.05]], atol=1e-12)


def test_locate_rejects_outside_points(mesh2):
    with pytest.raises(MeshError):
        mesh2.locate([1.5], [0.5])


@pytest.mark.parametrize("level", [0, 11, 2.5])
def test_invalid_levels(level):
    with pytest.raises(MeshError):
        build_unit_square(level)


def test_clockwise_triangles_are_rejected():
    with pytest.raises(MeshError):
        Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 2, 1]])


def test_untagged_boundary_is_reported():
    mesh = Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        classify_boundary(mesh)


def test_export_vtk(tmp_path, mesh2):
    path = mesh2.export_vtk(str(tmp_path / "mesh.vtk"))
    text = open(path, encoding="ascii").read()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert f"POINTS {mesh2.n_vertices} double" in text
    assert f"CELLS {mesh2.n_triangles} {4 * mesh2.n_triangles}" in text
    assert "SCALARS vertex_tag double 1" in text
