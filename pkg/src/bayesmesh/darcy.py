"""Inverse source problem for Darcy flow on the unit square.

The potential is discretized with P2 Lagrange elements under mixed boundary
conditions (Dirichlet on the vertical sides, natural Neumann on the
horizontal ones); the source lives in the P1 space.  The observation operator
is the dense composition A_h = P_h G_h^-1 M_h evaluated on a regular grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from matplotlib.tri import Triangulation

from .mesh import TriMesh, cross2

# 6-point symmetric triangle quadrature, exact for degree 4
_QW = np.array([0.109951743655322] * 3 + [0.223381589678011] * 3)
_A1, _A2 = 0.816847572980459, 0.091576213509771
_B1, _B2 = 0.108103018168070, 0.445948490915965
_QP = np.array([
    [_A1, _A2, _A2], [_A2, _A1, _A2], [_A2, _A2, _A1],
    [_B1, _B2, _B2], [_B2, _B1, _B2], [_B2, _B2, _B1],
])


def _p2_basis(lam):
    """P2 basis values at barycentric points lam (..., 3) -> (..., 6).

    Local node order: 3 vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def _p2_grads(lam, grad_lam):
    """P2 basis gradients; grad_lam is the (3, 2) array of hat gradients."""
    l = lam
    g = grad_lam
    out = np.empty(lam.shape[:-1] + (6, 2))
    for i in range(3):
        out[..., i, :] = (4 * l[..., i, None] - 1) * g[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        out[..., 3 + k, :] = 4 * (l[..., j, None] * g[i] + l[..., i, None] * g[j])
    return out


@dataclass
class DarcyOperator:
    mesh: TriMesh
    G_h: sp.csr_matrix        # P2 stiffness on free nodes
    M_h: sp.csr_matrix        # free P2 nodes x all P1 vertices
    free_nodes: np.ndarray    # P2 node ids with 0 < x1 < 1
    p2_coords: np.ndarray     # (N_v + N_e, 2) node coordinates

    def grid_points(self, n: int = 20):
        i, k = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1),
                           indexing="ij")
        pts = np.stack([(i.ravel() - 0.5) / n, (k.ravel() - 0.5) / n], axis=1)
        return pts


def assemble_darcy_operators(mesh: TriMesh) -> DarcyOperator:
    span = np.ptp(mesh.vertices, axis=0)
    if not (abs(span[0] - 1.0) < 1e-9 and abs(span[1] - 1.0) < 1e-9):
        raise ValueError("Darcy operators require a unit-square mesh")
    n_v = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                  + mesh.vertices[mesh.edges[:, 1]])
    p2_coords = np.vstack([mesh.vertices, mids])
    n_p2 = len(p2_coords)

    # element -> P2 node map: vertices then the 3 edge midpoints
    elem_nodes = np.concatenate(
        [mesh.triangles, n_v + mesh.tri_edges], axis=1)   # (N_t, 6)

    rows_g, cols_g, vals_g = [], [], []
    rows_m, cols_m, vals_m = [], [], []
    for t in range(mesh.num_triangles):
        tri = mesh.triangles[t]
        p = mesh.vertices[tri]
        area2 = cross2(p[1] - p[0], p[2] - p[0])
        area = 0.5 * area2
        grad_lam = np.empty((3, 2))
        for loc in range(3):
            a, b = p[(loc + 1) % 3], p[(loc + 2) % 3]
            grad_lam[loc] = np.array([a[1] - b[1], b[0] - a[0]]) / area2
        gp2 = _p2_grads(_QP, grad_lam)            # (6 qp, 6 basis, 2)
        vp2 = _p2_basis(_QP)                      # (6 qp, 6 basis)
        ke = area * np.einsum("q,qid,qjd->ij", _QW, gp2, gp2)
        me = area * np.einsum("q,qi,qj->ij", _QW, vp2, _QP)   # P2 x P1
        nodes = elem_nodes[t]
        rows_g.append(np.repeat(nodes, 6))
        cols_g.append(np.tile(nodes, 6))
        vals_g.append(ke.ravel())
        rows_m.append(np.repeat(nodes, 3))
        cols_m.append(np.tile(tri, 6))
        vals_m.append(me.ravel())

    G_full = sp.csr_matrix(
        (np.concatenate(vals_g),
         (np.concatenate(rows_g), np.concatenate(cols_g))),
        shape=(n_p2, n_p2))
    M_full = sp.csr_matrix(
        (np.concatenate(vals_m),
         (np.concatenate(rows_m), np.concatenate(cols_m))),
        shape=(n_p2, n_v))

    x1 = p2_coords[:, 0]
    free = np.flatnonzero((x1 > 1e-12) & (x1 < 1.0 - 1e-12))
    G_h = G_full[free][:, free].tocsr()
    M_h = M_full[free].tocsr()
    return DarcyOperator(mesh=mesh, G_h=G_h, M_h=M_h, free_nodes=free,
                         p2_coords=p2_coords)


def _point_evaluation_matrix(op: DarcyOperator, points):
    """Rows evaluating the free P2 basis at the observation points."""
    mesh = op.mesh
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1],
                        mesh.triangles)
    finder = tri.get_trifinder()
    t = finder(points[:, 0], points[:, 1])
    if np.any(t < 0):
        raise ValueError("observation point outside the mesh")
    n_v = mesh.num_vertices
    elem_nodes = np.concatenate(
        [mesh.triangles, n_v + mesh.tri_edges], axis=1)
    a = mesh.vertices[mesh.triangles[t, 0]]
    b = mesh.vertices[mesh.triangles[t, 1]]
    c = mesh.vertices[mesh.triangles[t, 2]]
    den = cross2(b - a, c - a)
    l1 = cross2(points - a, c - a) / den
    l2 = cross2(b - a, points - a) / den
    lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    vals = _p2_basis(lam)                                 # (m, 6)
    m = len(points)
    P_full = sp.csr_matrix(
        (vals.ravel(),
         (np.repeat(np.arange(m), 6), elem_nodes[t].ravel())),
        shape=(m, len(op.p2_coords)))
    return P_full[:, op.free_nodes].tocsr()


def darcy_forward_matrix(op: DarcyOperator, grid_n: int = 20,
                         interior_only: bool = True) -> np.ndarray:
    """Dense observation matrix A_h = P_h G_h^-1 M_h.

    One sparse factorization of G_h, then one solve per source column.
    With interior_only the columns are restricted to interior P1 vertices.
    """
    pts = op.grid_points(grid_n)
    P_h = _point_evaluation_matrix(op, pts)
    lu = spla.splu(op.G_h.tocsc())
    M = op.M_h.toarray()
    X = lu.solve(M)                       # free x n_v
    A_h = np.asarray(P_h @ X)
    if interior_only:
        A_h = A_h[:, op.mesh.interior_vertex_indices]
    return A_h
