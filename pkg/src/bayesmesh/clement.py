"""First-order Clement interpolation of the piecewise Whitney gradient field.

Per vertex, the discontinuous field is L2-projected onto continuous piecewise
linears over the patch of surrounding triangles; the recovered gradient at the
vertex is the projected polynomial evaluated there.  Restricted to a triangle
the Whitney field is affine, so all integrals reduce to exact P1 mass-matrix
algebra.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh, cross2
from .whitney import expand_to_full_edges


class PatchError(Exception):
    """Raised when a vertex patch yields a singular projection system."""


def _triangle_data(mesh: TriMesh):
    """Per-triangle hat gradients (N_t,3,2), areas, and 3x3 mass matrices."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    area2 = cross2(p1 - p0, p2 - p0)
    grads = np.empty((mesh.num_triangles, 3, 2))
    pts = (p0, p1, p2)
    for loc in range(3):
        a = pts[(loc + 1) % 3]
        b = pts[(loc + 2) % 3]
        grads[:, loc, 0] = (a[:, 1] - b[:, 1]) / area2
        grads[:, loc, 1] = (b[:, 0] - a[:, 0]) / area2
    areas = 0.5 * area2
    mass_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return grads, areas, mass_ref


def triangle_whitney_values(mesh: TriMesh, z_full: np.ndarray) -> np.ndarray:
    """Vertex values (N_t, 3, 2) of the affine Whitney field on each triangle."""
    grads, _, _ = _triangle_data(mesh)
    vals = np.zeros((mesh.num_triangles, 3, 2))
    tris = mesh.triangles
    for loc in range(3):
        a_loc, b_loc = loc, (loc + 1) % 3
        va, vb = tris[:, a_loc], tris[:, b_loc]
        e = mesh.tri_edges[:, loc]
        swap = va > vb                      # stored orientation is low -> high
        tail = np.where(swap, b_loc, a_loc)
        head = np.where(swap, a_loc, b_loc)
        ze = z_full[e]
        rows = np.arange(mesh.num_triangles)
        # with z = u_tail - u_head: w_e = psi_head grad(psi_tail)
        #                                 - psi_tail grad(psi_head)
        np.add.at(vals, (rows, tail), -ze[:, None] * grads[rows, head])
        np.add.at(vals, (rows, head), ze[:, None] * grads[rows, tail])
    return vals


def _vertex_patches(mesh: TriMesh):
    patches = [[] for _ in range(mesh.num_vertices)]
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            patches[v].append(t)
    return patches


def patch_project(mesh: TriMesh, z, vertex_i: int, component: int,
                  z_is_full: bool = False):
    """Coefficients of the L2(patch) projection onto patch hats for one vertex.

    Returns (patch_vertex_indices, alpha) with alpha ordered like the index
    set; the recovered value at the vertex is the coefficient at vertex_i.
    """
    z_full = np.asarray(z, dtype=float) if z_is_full else \
        expand_to_full_edges(mesh, np.asarray(z, dtype=float))
    patches = _vertex_patches(mesh)
    grads, areas, mass_ref = _triangle_data(mesh)
    field_vals = triangle_whitney_values(mesh, z_full)
    idx, alpha = _solve_patch(mesh, patches[vertex_i], areas, mass_ref,
                              field_vals[:, :, component])
    return idx, alpha


def _solve_patch(mesh, patch_tris, areas, mass_ref, comp_vals):
    if not patch_tris:
        raise PatchError("vertex has no adjacent triangles")
    verts = sorted({int(v) for t in patch_tris for v in mesh.triangles[t]})
    pos = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    G = np.zeros((n, n))
    rhs = np.zeros(n)
    for t in patch_tris:
        tri = mesh.triangles[t]
        loc = [pos[int(v)] for v in tri]
        M = areas[t] * mass_ref
        for a in range(3):
            rhs[loc] += M[a] * comp_vals[t, a]
            for bcol in range(3):
                G[loc[a], loc[bcol]] += M[a, bcol]
    try:
        alpha = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError as exc:
        raise PatchError("singular patch mass matrix") from exc
    return np.array(verts), alpha


def clement_gradient(mesh: TriMesh, z, z_is_full: bool = False) -> np.ndarray:
    """Recovered gradient (N_v, 2): Clement interpolant of the Whitney field."""
    z = np.asarray(z, dtype=float)
    z_full = z if z_is_full else expand_to_full_edges(mesh, z)
    patches = _vertex_patches(mesh)
    _, areas, mass_ref = _triangle_data(mesh)
    field_vals = triangle_whitney_values(mesh, z_full)
    out = np.empty((mesh.num_vertices, 2))
    for i in range(mesh.num_vertices):
        for c in range(2):
            idx, alpha = _solve_patch(mesh, patches[i], areas, mass_ref,
                                      field_vals[:, :, c])
            out[i, c] = alpha[np.searchsorted(idx, i)]
    return out
