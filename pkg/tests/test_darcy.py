"""Darcy forward operator: P2 assembly, mixed boundary conditions, grid data."""
import numpy as np
import pytest
import scipy.sparse.linalg as spla

from bayesmesh.darcy import assemble_darcy_operators, darcy_forward_matrix
from bayesmesh.mesh import unit_disc_mesh, unit_square_mesh


def test_requires_unit_square():
    with pytest.raises(ValueError):
        assemble_darcy_operators(unit_disc_mesh(0.4))


def test_stiffness_spd():
    op = assemble_darcy_operators(unit_square_mesh(0.25))
    K = op.G_h.toarray()
    assert np.allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K)[0] > 0.0


def test_mass_row_sums_match_basis_integrals():
    """Row sums of M_h are the integrals of the P2 basis functions:
    0 for vertex functions, area/3 summed over adjacent elements for
    midpoint functions."""
    mesh = unit_square_mesh(0.25)
    op = assemble_darcy_operators(mesh)
    areas = mesh.signed_areas()
    n_v = mesh.num_vertices
    expected = np.zeros(n_v + mesh.num_edges)
    for t in range(mesh.num_triangles):
        for e in mesh.tri_edges[t]:
            expected[n_v + e] += areas[t] / 3.0
    row_sums = np.asarray(op.M_h.sum(axis=1)).ravel()
    assert np.allclose(row_sums, expected[op.free_nodes], atol=1e-12)


def test_manufactured_solution_quadratic():
    """u = 1 gives f = x1(1-x1)/2 exactly (P2 reproduces quadratics)."""
    mesh = unit_square_mesh(0.2)
    op = assemble_darcy_operators(mesh)
    A_h = darcy_forward_matrix(op, grid_n=20, interior_only=False)
    pts = op.grid_points(20)
    f_exact = 0.5 * pts[:, 0] * (1.0 - pts[:, 0])
    pred = A_h @ np.ones(mesh.num_vertices)
    assert np.max(np.abs(pred - f_exact)) < 1e-10
    # value at the center line x1 = 0.5
    center = np.isclose(pts[:, 0], 0.475)
    assert np.allclose(pred[center], 0.5 * 0.475 * 0.525, atol=1e-10)
    # and the analytic maximum 0.125 at x1 = 0.5
    assert abs(0.5 * 0.5 * 0.5 - 0.125) < 1e-15


def test_nodal_solution_quadratic_exact():
    mesh = unit_square_mesh(0.25)
    op = assemble_darcy_operators(mesh)
    lu = spla.splu(op.G_h.tocsc())
    f = lu.solve(op.M_h @ np.ones(mesh.num_vertices))
    x1 = op.p2_coords[op.free_nodes, 0]
    assert np.max(np.abs(f - 0.5 * x1 * (1.0 - x1))) < 1e-10


def test_linear_source_cubic_convergence():
    """u = x1 (exactly representable in P1, so the source interpolation is
    error-free): the P2 solution of -f'' = x1 is the cubic (x1 - x1^3)/6 and
    the observation error drops by >= 6 per mesh halving (O(h^3))."""

    def run(h):
        mesh = unit_square_mesh(h)
        op = assemble_darcy_operators(mesh)
        A_h = darcy_forward_matrix(op, grid_n=20, interior_only=False)
        u = mesh.vertices[:, 0]
        x = op.grid_points(20)[:, 0]
        f_exact = (x - x ** 3) / 6.0
        return np.max(np.abs(A_h @ u - f_exact))

    e1, e2 = run(0.2), run(0.1)
    assert e2 <= e1 / 6.0


def test_zero_source_zero_data():
    mesh = unit_square_mesh(0.25)
    op = assemble_darcy_operators(mesh)
    A_h = darcy_forward_matrix(op, grid_n=20)
    assert np.allclose(A_h @ np.zeros(mesh.num_interior_vertices), 0.0)


def test_adjoint_consistency():
    mesh = unit_square_mesh(0.25)
    op = assemble_darcy_operators(mesh)
    A_h = darcy_forward_matrix(op, grid_n=20)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(A_h.shape[1])
    w = rng.standard_normal(A_h.shape[0])
    assert abs((A_h @ u) @ w - u @ (A_h.T @ w)) < 1e-10
