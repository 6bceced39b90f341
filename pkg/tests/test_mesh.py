"""Mesh generation, topology and the text file format."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesmesh.mesh import (DomainSpec, MeshError, MeshFormatError,
                            euler_characteristic_check, generate_initial_mesh,
                            read_mesh, unit_disc_mesh, unit_square_mesh,
                            write_mesh)


def test_domain_spec_validation():
    with pytest.raises(ValueError):
        DomainSpec("triangle", 0.1)
    with pytest.raises(ValueError):
        DomainSpec("unit-square", 0.0)
    with pytest.raises(ValueError):
        DomainSpec("unit-square", 2.0)     # exceeds the diameter sqrt(2)
    DomainSpec("unit-disc", 1.9)           # disc diameter is 2


def test_unit_square_coarse_counts():
    mesh = unit_square_mesh(0.5)
    assert mesh.num_vertices == 9
    assert mesh.num_triangles == 8
    assert mesh.num_edges == 16
    mesh.validate()


def test_unit_square_fine_counts_and_edge_lengths():
    mesh = unit_square_mesh(0.05)
    assert mesh.num_triangles == 800
    lengths = mesh.edge_lengths()
    assert lengths.min() >= 0.05 - 1e-12
    assert lengths.max() <= 0.05 * np.sqrt(2.0) + 1e-12


def test_unit_disc_boundary_and_quality():
    mesh = unit_disc_mesh(0.05)
    mesh.validate()
    r = np.linalg.norm(mesh.vertices[mesh.vertex_boundary], axis=1)
    assert np.max(np.abs(r - 1.0)) < 1e-12
    assert mesh.triangle_quality().min() > 0.3


def test_unit_disc_element_count_scale():
    # paper-scale reference count is ~2774 at h = 0.05; generator dependent
    mesh = unit_disc_mesh(0.05)
    assert 0.7 * 2774 <= mesh.num_triangles <= 1.3 * 2774


def test_euler_characteristic_identity():
    for mesh in (unit_square_mesh(0.25), unit_disc_mesh(0.2)):
        rep = euler_characteristic_check(mesh)
        assert rep["identity_holds"]
        assert rep["chi"] == 1
        assert mesh.num_edges == mesh.num_vertices + mesh.num_triangles - 1


def test_orientation_positive_areas():
    for mesh in (unit_square_mesh(0.2), unit_disc_mesh(0.3)):
        assert np.all(mesh.signed_areas() > 0.0)


def test_generate_initial_mesh_dispatch():
    sq = generate_initial_mesh(DomainSpec("unit-square", 0.5))
    assert sq.num_triangles == 8
    disc = generate_initial_mesh(DomainSpec("unit-disc", 0.5))
    r = np.linalg.norm(disc.vertices[disc.vertex_boundary], axis=1)
    assert np.allclose(r, 1.0)


def test_mesh_roundtrip(tmp_path):
    mesh = unit_disc_mesh(0.3)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(mesh.triangles, back.triangles)
    assert np.array_equal(mesh.vertices, back.vertices)
    assert np.array_equal(mesh.vertex_boundary, back.vertex_boundary)
    with open(path) as f:
        assert f.readline().strip() == "trimesh 2d v1"


def test_mesh_format_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a mesh\n")
    with pytest.raises(MeshFormatError):
        read_mesh(path)
    path.write_text("trimesh 2d v1\n3 1\n0 0 1\n1 0 1\n")  # truncated
    with pytest.raises(MeshFormatError):
        read_mesh(path)


def test_nonmanifold_edge_rejected():
    from bayesmesh.mesh import TriMesh
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
                      [0.5, -1.0]])
    tris = np.array([[0, 1, 2], [1, 3, 2], [0, 1, 4], [1, 0, 3]])
    with pytest.raises(MeshError):
        TriMesh(vertices=verts, triangles=tris)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=2, max_value=12))
def test_square_mesh_structure(n):
    mesh = unit_square_mesh(1.0 / n)
    assert mesh.num_vertices == (n + 1) ** 2
    assert mesh.num_triangles == 2 * n * n
    assert mesh.num_edges == mesh.num_vertices + mesh.num_triangles - 1
    assert np.all(mesh.signed_areas() > 0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=1, max_value=8))
def test_disc_mesh_structure(m):
    mesh = unit_disc_mesh(1.0 / m)
    assert mesh.num_vertices == 1 + 3 * m * (m + 1)
    assert np.all(mesh.signed_areas() > 0.0)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert r.max() <= 1.0 + 1e-12
