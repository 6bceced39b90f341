"""Whitney edge-element algebra: incidence matrices and gradient coefficients.

Nodal values u live on interior vertices (boundary values are fixed to zero).
Gradient degrees of freedom z live on interior-touching edges; the two are
linked by the purely topological finite-difference relation z = L u.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, cross2


@dataclass
class IncidenceMatrix:
    """Edge-vertex incidence of a mesh, full and reduced variants.

    L_full is N_e x N_v with a +1 on the tail (low index) and -1 on the head
    of every edge.  L is the n_e x n_v block over interior-touching edges and
    interior vertices; rows over boundary-boundary edges vanish identically
    after eliminating the zero boundary values.
    """

    L_full: sp.csr_matrix
    L: sp.csr_matrix
    interior_vertices: np.ndarray   # column map: L column j -> global vertex
    interior_edges: np.ndarray      # row map: L row i -> global edge

    @property
    def n_e(self):
        return self.L.shape[0]

    @property
    def n_v(self):
        return self.L.shape[1]


def assemble_incidence(mesh: TriMesh) -> IncidenceMatrix:
    edges = mesh.edges
    n_edges = mesh.num_edges
    n_verts = mesh.num_vertices
    rows = np.repeat(np.arange(n_edges), 2)
    cols = edges.ravel()
    vals = np.tile([1.0, -1.0], n_edges)
    L_full = sp.csr_matrix((vals, (rows, cols)), shape=(n_edges, n_verts))

    int_v = mesh.interior_vertex_indices
    int_e = mesh.interior_edge_indices
    L = L_full[int_e][:, int_v].tocsr()
    return IncidenceMatrix(L_full=L_full, L=L, interior_vertices=int_v,
                           interior_edges=int_e)


def gradient_coefficients(inc: IncidenceMatrix, u: np.ndarray) -> np.ndarray:
    """z = L u: per-edge increments u_tail - u_head over interior-touching edges."""
    u = np.asarray(u, dtype=float)
    if u.shape != (inc.n_v,):
        raise ValueError(f"expected u of shape ({inc.n_v},), got {u.shape}")
    return inc.L @ u


def expand_to_full_edges(mesh: TriMesh, z: np.ndarray) -> np.ndarray:
    """Scatter interior-touching coefficients into a length-N_e vector.

    Boundary-boundary edges carry identically zero coefficients.
    """
    z_full = np.zeros(mesh.num_edges)
    z_full[mesh.interior_edge_indices] = z
    return z_full


def _triangle_gradients(mesh: TriMesh, t: int):
    """Constant gradients of the 3 nodal hats on triangle t, plus its area."""
    tri = mesh.triangles[t]
    p = mesh.vertices[tri]
    area2 = cross2(p[1] - p[0], p[2] - p[0])
    grads = np.empty((3, 2))
    for loc in range(3):
        a, b = p[(loc + 1) % 3], p[(loc + 2) % 3]
        # rotate opposite edge by 90 degrees
        grads[loc] = np.array([a[1] - b[1], b[0] - a[0]]) / area2
    return grads, 0.5 * area2


def whitney_evaluate(mesh: TriMesh, z_full: np.ndarray, t: int,
                     point: np.ndarray) -> np.ndarray:
    """Evaluate sum_l z_l w_l at a point of triangle t (z indexed over all edges).

    Only the triangle's own three edges have support inside it.
    """
    tri = mesh.triangles[t]
    p = mesh.vertices[tri]
    grads, area = _triangle_gradients(mesh, t)
    # barycentric coordinates of the point
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    lam12 = np.linalg.solve(T, np.asarray(point, dtype=float) - p[0])
    lam = np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])
    if np.any(lam < -1e-12) or np.any(lam > 1.0 + 1e-12):
        raise ValueError("point lies outside the given triangle")

    out = np.zeros(2)
    for loc in range(3):
        a_loc, b_loc = loc, (loc + 1) % 3
        va, vb = tri[a_loc], tri[b_loc]
        e = mesh.tri_edges[t, loc]
        # stored orientation is low -> high; with z = u_tail - u_head the
        # matching basis is w = psi_head grad(psi_tail) - psi_tail grad(psi_head)
        if va < vb:
            tail, head = a_loc, b_loc
        else:
            tail, head = b_loc, a_loc
        w = lam[head] * grads[tail] - lam[tail] * grads[head]
        out += z_full[e] * w
    return out


def nodal_from_coefficients(inc: IncidenceMatrix, z: np.ndarray):
    """Least-squares nodal recovery u = R1^-1 Q1^T z with compatibility residual.

    Returns (u, residual) with residual = ||z - Q1 Q1^T z||; for compatible z
    (z in range(L)) the residual vanishes and L u = z.
    """
    from .linalg import sparse_qr_thin

    z = np.asarray(z, dtype=float)
    if z.shape != (inc.n_e,):
        raise ValueError(f"expected z of shape ({inc.n_e},), got {z.shape}")
    qr = sparse_qr_thin(inc.L)
    qtz = qr.qt(z)
    u = qr.r_solve(qtz)
    residual = float(np.linalg.norm(z - qr.q(qtz)))
    return u, residual
