"""Steiner-ellipse element metrics and the anisotropic metric field."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesmesh.mesh import unit_square_mesh
from bayesmesh.metric import (REFERENCE_TRIANGLE, MetricField, build_metric,
                              element_metric, grade_metric, metric_conformity,
                              metric_segment_length, steiner_polar, sym_exp,
                              sym_log, write_metric_csv)


def test_reference_triangle_is_identity():
    data = steiner_polar(REFERENCE_TRIANGLE)
    assert np.allclose(data.P, np.eye(2), atol=1e-12)
    assert np.allclose(data.W, np.eye(2), atol=1e-12)


def test_rotated_reference_rotation_goes_to_w():
    ang = np.pi / 2
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    data = steiner_polar(REFERENCE_TRIANGLE @ R.T)
    assert np.allclose(data.P, np.eye(2), atol=1e-12)
    assert np.allclose(data.W, R, atol=1e-12)


def test_right_triangle_polar_and_ellipse_membership():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    data = steiner_polar(tri)
    # P SPD
    eig = np.linalg.eigvalsh(data.P)
    assert np.all(eig > 0)
    assert np.allclose(data.P, data.P.T)
    # P W maps the reference vertices onto the element (relative to centroid)
    mapped = (data.P @ data.W @ REFERENCE_TRIANGLE.T).T + data.centroid
    assert np.linalg.norm(mapped - tri) < 1e-12
    # vertices on the Steiner ellipse x^T P^-2 x = 1 centered at the centroid
    Pinv2 = element_metric(data)
    for v in tri:
        x = v - data.centroid
        assert np.isclose(x @ Pinv2 @ x, 1.0, atol=1e-10)


def test_element_metric_eigenvalues():
    tri = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.5]])
    data = steiner_polar(tri)
    G = element_metric(data)
    ev_p = np.sort(np.linalg.eigvalsh(data.P))
    ev_g = np.sort(np.linalg.eigvalsh(G))
    assert np.allclose(np.sort(1.0 / ev_p ** 2), ev_g, rtol=1e-10)


def test_degenerate_triangle_rejected():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        steiner_polar(tri)


def test_sym_log_exp_roundtrip():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 2, 2))
    T = np.einsum("nij,nkj->nik", X, X) + 0.1 * np.eye(2)
    back = sym_exp(sym_log(T))
    assert np.allclose(back, T, atol=1e-10)


def _metric_on_square(alpha=12.0, h_min=0.01, h_max=0.1):
    mesh = unit_square_mesh(0.25)
    rng = np.random.default_rng(1)
    grad = rng.standard_normal((mesh.num_vertices, 2))
    return mesh, grad, build_metric(mesh, grad, h_min, h_max, alpha)


def test_build_metric_calibration_identities():
    """Unit metric length of h_min parallel / h_max perpendicular segments."""
    mesh, grad, met = _metric_on_square()
    mags = np.hypot(grad[:, 0], grad[:, 1])
    j = int(np.argmax(mags))
    e_par = grad[j] / mags[j]
    G = met.tensors[j]
    # parallel segment of length h_min at the max-gradient vertex
    assert np.isclose(np.sqrt(met.h_min ** 2 * e_par @ G @ e_par), 1.0,
                      atol=1e-10)
    # perpendicular segment of length h_max at |grad| = delta
    e_perp = np.array([-e_par[1], e_par[0]])
    G_delta = met.C * met.delta ** 2 * (np.outer(e_par, e_par)
                                        + np.outer(e_perp, e_perp) / met.alpha)
    assert np.isclose(np.sqrt(met.h_max ** 2 * e_perp @ G_delta @ e_perp),
                      1.0, atol=1e-10)


def test_metric_invariants():
    mesh, grad, met = _metric_on_square()
    evs = np.linalg.eigvalsh(met.tensors)
    delta_floor = min(met.delta, 1.0 / met.h_max ** 2) / met.alpha
    assert np.all(evs[:, 0] >= delta_floor - 1e-12)
    ratio = evs[:, 1] / evs[:, 0]
    assert np.all(ratio <= met.alpha * (1 + 1e-10))
    # anisotropic branch: larger eigenvector parallel to the gradient
    mags = np.hypot(grad[:, 0], grad[:, 1])
    for j in np.flatnonzero(mags > met.delta):
        w, V = np.linalg.eigh(met.tensors[j])
        e_par = grad[j] / mags[j]
        assert abs(abs(V[:, 1] @ e_par) - 1.0) < 1e-10
        assert np.isclose(ratio[j], met.alpha, rtol=1e-10)


def test_zero_gradient_fallback():
    mesh = unit_square_mesh(0.25)
    met = build_metric(mesh, np.zeros((mesh.num_vertices, 2)), 0.01, 0.1,
                       12.0)
    assert met.fallback
    assert np.allclose(met.tensors, (1.0 / 0.1 ** 2) * np.eye(2))
    # every edge of Euclidean length h_max has unit metric length
    L = metric_segment_length(met, np.array([0.3, 0.3]),
                              np.array([0.3 + 0.1, 0.3]))
    assert np.isclose(L, 1.0, atol=1e-10)


def test_alpha_one_is_isotropic():
    mesh = unit_square_mesh(0.25)
    rng = np.random.default_rng(2)
    grad = rng.standard_normal((mesh.num_vertices, 2))
    met = build_metric(mesh, grad, 0.01, 0.1, 1.0)
    evs = np.linalg.eigvalsh(met.tensors)
    assert np.allclose(evs[:, 0], evs[:, 1], rtol=1e-10)


def test_segment_length_uniform_metrics():
    mesh = unit_square_mesh(0.5)
    n = mesh.num_vertices
    met = MetricField(mesh=mesh,
                      tensors=np.broadcast_to(np.eye(2), (n, 2, 2)).copy(),
                      C=1.0, delta=1.0, alpha=1.0, h_min=0.1, h_max=1.0,
                      M=1.0)
    assert np.isclose(metric_segment_length(met, [0.0, 0.0], [0.3, 0.4]),
                      0.5, atol=1e-12)
    met2 = MetricField(mesh=mesh,
                       tensors=np.broadcast_to(np.diag([4.0, 1.0]),
                                               (n, 2, 2)).copy(),
                       C=1.0, delta=1.0, alpha=4.0, h_min=0.1, h_max=1.0,
                       M=1.0)
    assert np.isclose(metric_segment_length(met2, [0.0, 0.5], [1.0, 0.5]),
                      2.0, atol=1e-12)


def test_segment_length_varying_metric():
    """Scalar metric g(x) = x1^2: length from (1,.) to (2,.) is 3/2.

    Uses a stretched mesh covering [1,2] so the per-vertex tensors x1^2 I
    interpolate exactly (log-interpolation of x^2 is not linear, so compare
    against the quadrature of the interpolated field, and separately check
    the analytic value within the interpolation error).
    """
    base = unit_square_mesh(0.05)
    verts = base.vertices.copy()
    verts[:, 0] += 1.0
    from bayesmesh.mesh import TriMesh
    mesh = TriMesh(verts, base.triangles.copy())
    tensors = np.array([x[0] ** 2 * np.eye(2) for x in mesh.vertices])
    met = MetricField(mesh=mesh, tensors=tensors, C=1.0, delta=1.0,
                      alpha=1.0, h_min=0.1, h_max=1.0, M=1.0)
    L = metric_segment_length(met, [1.0, 0.5], [2.0, 0.5])
    assert np.isclose(L, 1.5, atol=2e-4)


def test_metric_conformity_reference_cases():
    # a mesh consisting of the reference equilateral triangle under G = I
    from bayesmesh.mesh import TriMesh
    from bayesmesh.metric import REFERENCE_TRIANGLE
    mesh = TriMesh(REFERENCE_TRIANGLE.copy(), np.array([[0, 1, 2]]))
    n = mesh.num_vertices
    met = MetricField(mesh=mesh,
                      tensors=np.broadcast_to(np.eye(2), (n, 2, 2)).copy(),
                      C=1.0, delta=1.0, alpha=1.0, h_min=0.1, h_max=1.0,
                      M=1.0)
    assert metric_conformity(mesh, met) < 1e-12
    met2 = MetricField(mesh=mesh,
                       tensors=np.broadcast_to(2.0 * np.eye(2),
                                               (n, 2, 2)).copy(),
                       C=1.0, delta=1.0, alpha=1.0, h_min=0.1, h_max=1.0,
                       M=1.0)
    assert np.isclose(metric_conformity(mesh, met2), 1.0, atol=1e-12)


def test_grade_uniform_metric_is_identity():
    mesh = unit_square_mesh(0.1)
    n = mesh.num_vertices
    met = MetricField(mesh=mesh,
                      tensors=np.broadcast_to((1.0 / 0.1 ** 2) * np.eye(2),
                                              (n, 2, 2)).copy(),
                      C=1.0, delta=1.0, alpha=1.0, h_min=0.01, h_max=0.1,
                      M=1.0)
    g = grade_metric(met, 1.8)
    assert np.allclose(g.tensors, met.tensors, atol=1e-12)


def test_grade_bounds_size_growth():
    """A single fine spot spreads with h <= h_spot + dist * ln(ratio), and
    tensors are only ever tightened."""
    mesh = unit_square_mesh(0.1)
    n = mesh.num_vertices
    tensors = np.broadcast_to((1.0 / 0.1 ** 2) * np.eye(2), (n, 2, 2)).copy()
    j = int(np.argmin(np.linalg.norm(mesh.vertices - [0.5, 0.5], axis=1)))
    tensors[j] = (1.0 / 0.01 ** 2) * np.eye(2)
    met = MetricField(mesh=mesh, tensors=tensors, C=1.0, delta=1.0,
                      alpha=1.0, h_min=0.01, h_max=0.1, M=1.0)
    ratio = 1.8
    g = grade_metric(met, ratio)
    h = 1.0 / np.sqrt(np.linalg.eigvalsh(g.tensors)[:, 1])
    dist = np.linalg.norm(mesh.vertices - mesh.vertices[j], axis=1)
    bound = np.minimum(0.01 + dist * np.log(ratio), 0.1)
    assert np.all(h <= bound * (1.0 + 1e-6))
    # the fine spot itself is untouched and its ring is tightened
    assert np.isclose(h[j], 0.01)
    ring = (dist > 0.0) & (dist < 0.1)
    assert np.all(h[ring] < 0.1 - 1e-9)
    # gradation never loosens: graded h <= original h everywhere
    h0 = 1.0 / np.sqrt(np.linalg.eigvalsh(met.tensors)[:, 1])
    assert np.all(h <= h0 + 1e-12)


def test_grade_preserves_calibration_constants():
    mesh, grad, met = _metric_on_square()
    g = grade_metric(met)
    assert (g.C, g.delta, g.alpha, g.h_min, g.h_max, g.M) == \
        (met.C, met.delta, met.alpha, met.h_min, met.h_max, met.M)
    with pytest.raises(ValueError):
        grade_metric(met, ratio=1.0)


def test_metric_csv_export(tmp_path):
    mesh, grad, met = _metric_on_square()
    path = tmp_path / "metric.csv"
    write_metric_csv(met, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (mesh.num_vertices, 5)
    assert np.allclose(data[:, 2], met.tensors[:, 0, 0])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_steiner_polar_reconstruction_property(seed):
    rng = np.random.default_rng(seed)
    tri = rng.standard_normal((3, 2))

    def area2(t):
        u, v = t[1] - t[0], t[2] - t[0]
        return u[0] * v[1] - u[1] * v[0]

    if area2(tri) < 1e-3:
        tri = tri[[0, 2, 1]]
    if area2(tri) < 1e-3:
        return
    data = steiner_polar(tri)
    mapped = (data.P @ data.W @ REFERENCE_TRIANGLE.T).T + data.centroid
    assert np.linalg.norm(mapped - tri) < 1e-9
    assert np.isclose(abs(np.linalg.det(data.W)), 1.0, atol=1e-9)
