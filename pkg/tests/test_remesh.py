"""Metric-conforming remeshing: edge band, sizing, validity, conformity."""
import numpy as np
import pytest

from bayesmesh.mesh import DomainSpec, TriMesh, unit_disc_mesh, unit_square_mesh
from bayesmesh.metric import MetricField, metric_conformity
from bayesmesh.remesh import COLLAPSE_THRESHOLD, SPLIT_THRESHOLD, adapt_mesh


def _uniform_metric(mesh, G, h_min=0.005, h_max=0.5):
    n = mesh.num_vertices
    return MetricField(mesh=mesh,
                       tensors=np.broadcast_to(G, (n, 2, 2)).copy(),
                       C=1.0, delta=1.0, alpha=1.0, h_min=h_min, h_max=h_max,
                       M=1.0)


def _edge_metric_lengths(mesh, G):
    d = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    return np.sqrt(np.einsum("ei,ij,ej->e", d, G, d))


def test_uniform_refinement_hits_target_size():
    """Isotropic metric 1/h^2 I: median edge within 25% of h."""
    h = 0.07
    mesh = unit_square_mesh(0.25)            # too coarse for the target
    G = (1.0 / h ** 2) * np.eye(2)
    met = _uniform_metric(mesh, G)
    new_mesh, info = adapt_mesh(mesh, met, 0.005, 0.5,
                                domain=DomainSpec("unit-square", 0.25))
    new_mesh.validate()
    med = np.median(new_mesh.edge_lengths())
    assert abs(med - h) < 0.25 * h
    lens = _edge_metric_lengths(new_mesh, G)
    in_band = np.mean((lens >= COLLAPSE_THRESHOLD) & (lens <= SPLIT_THRESHOLD))
    assert in_band >= 0.85
    assert info["out_of_band_fraction"] <= 0.15


def test_uniform_coarsening_hits_target_size():
    """Isotropic metric coarser than the input mesh: collapses dominate."""
    h = 0.2
    mesh = unit_square_mesh(0.07)
    G = (1.0 / h ** 2) * np.eye(2)
    met = _uniform_metric(mesh, G)
    new_mesh, _ = adapt_mesh(mesh, met, 0.005, 0.5,
                             domain=DomainSpec("unit-square", 0.07))
    new_mesh.validate()
    assert new_mesh.num_triangles < mesh.num_triangles
    med = np.median(new_mesh.edge_lengths())
    assert abs(med - h) < 0.25 * h


def test_anisotropic_uniform_metric_band_and_count():
    """Stretched uniform metric: in-band edges, element count near optimal."""
    hx, hy = 0.3, 0.1
    mesh = unit_square_mesh(0.15)
    G = np.diag([1.0 / hx ** 2, 1.0 / hy ** 2])
    met = _uniform_metric(mesh, G)
    new_mesh, _ = adapt_mesh(mesh, met, 0.005, 0.5,
                             domain=DomainSpec("unit-square", 0.15))
    new_mesh.validate()
    lens = _edge_metric_lengths(new_mesh, G)
    in_band = np.mean((lens >= COLLAPSE_THRESHOLD) & (lens <= SPLIT_THRESHOLD))
    assert in_band >= 0.85
    # unit-edge equilateral tiling count: metric area / (sqrt(3)/4)
    expected = 4.0 / (np.sqrt(3.0) * hx * hy)
    assert 0.5 * expected < new_mesh.num_triangles < 2.0 * expected
    # elements stretched along x: the x-extent of edges dominates
    d = np.abs(new_mesh.vertices[new_mesh.edges[:, 1]]
               - new_mesh.vertices[new_mesh.edges[:, 0]])
    assert np.median(d[:, 0]) > 1.5 * np.median(d[:, 1])


def test_disc_boundary_preserved():
    """Boundary vertices of the adapted disc mesh stay on the unit circle."""
    mesh = unit_disc_mesh(0.3)
    G = (1.0 / 0.12 ** 2) * np.eye(2)
    met = _uniform_metric(mesh, G)
    new_mesh, _ = adapt_mesh(mesh, met, 0.005, 0.5,
                             domain=DomainSpec("unit-disc", 0.3))
    new_mesh.validate()
    r = np.hypot(new_mesh.vertices[:, 0], new_mesh.vertices[:, 1])
    assert np.all(r <= 1.0 + 1e-9)
    assert np.allclose(r[new_mesh.vertex_boundary], 1.0, atol=1e-9)
    # interior stays strictly inside
    assert np.all(r[~new_mesh.vertex_boundary] < 1.0 - 1e-9)


def test_varying_metric_band_and_mismatch_bound():
    """Smooth graded metric: adaptation reaches the band and the worst
    per-element metric mismatch stays near the unit-band level ~2g."""
    mesh = unit_square_mesh(0.1)

    def tensors_at(verts):
        # size h(x) from 0.05 (left) to 0.2 (right)
        h = 0.05 + 0.15 * verts[:, 0]
        t = np.zeros((len(verts), 2, 2))
        t[:, 0, 0] = 1.0 / h ** 2
        t[:, 1, 1] = 1.0 / h ** 2
        return t

    met = MetricField(mesh=mesh, tensors=tensors_at(mesh.vertices),
                      C=1.0, delta=1.0, alpha=1.0, h_min=0.005, h_max=0.5,
                      M=1.0)
    new_mesh, info = adapt_mesh(mesh, met, 0.005, 0.5,
                                domain=DomainSpec("unit-square", 0.1))
    new_mesh.validate()
    assert info["out_of_band_fraction"] <= 0.15
    # an equilateral triangle with metric edge tau satisfies P^-2 = 3G/tau^2,
    # so mismatch <= (3 tau^-2 - 1) g; at the short band edge tau = 1/sqrt(2)
    # that is 5g with g the largest metric eigenvalue
    g_max = 1.0 / 0.05 ** 2
    assert metric_conformity(new_mesh, met) <= 5.0 * g_max


def test_adapt_is_deterministic():
    mesh = unit_square_mesh(0.2)
    G = (1.0 / 0.09 ** 2) * np.eye(2)
    met = _uniform_metric(mesh, G)
    m1, _ = adapt_mesh(mesh, met, 0.005, 0.5,
                       domain=DomainSpec("unit-square", 0.2))
    m2, _ = adapt_mesh(mesh, met, 0.005, 0.5,
                       domain=DomainSpec("unit-square", 0.2))
    assert np.array_equal(m1.triangles, m2.triangles)
    assert np.allclose(m1.vertices, m2.vertices)


def test_h_min_floor_respected():
    """No split creates an edge shorter than h_min/2 in Euclidean length."""
    mesh = unit_square_mesh(0.2)
    h_min = 0.05
    G = (1.0 / 0.01 ** 2) * np.eye(2)       # asks for far finer than h_min
    met = _uniform_metric(mesh, G, h_min=h_min)
    new_mesh, _ = adapt_mesh(mesh, met, h_min, 0.5,
                             domain=DomainSpec("unit-square", 0.2))
    new_mesh.validate()
    assert new_mesh.edge_lengths().min() >= 0.5 * h_min - 1e-12
