"""Fan-beam tomography: ray tracing through P1 meshes and the system matrix.

Ray integrals of the piecewise linear basis functions are exact: along a
segment inside one triangle each hat function is linear, so its line integral
is the segment length times the mean of its endpoint values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, cross2


@dataclass
class FanBeamGeometry:
    """Equally spaced fan-beam sources around the unit disc."""

    num_views: int = 15
    rays_per_view: int = 300
    source_radius: float = 3.0

    def __post_init__(self):
        if self.num_views < 1 or self.rays_per_view < 1:
            raise ValueError("need at least one view and one ray")
        if self.source_radius <= 1.0:
            raise ValueError("sources must lie outside the unit disc")

    @property
    def num_rays(self):
        return self.num_views * self.rays_per_view

    def rays(self):
        """All rays as (origins, unit directions), each of shape (m, 2).

        Each fan covers the disc exactly: ray offsets are uniform in the
        open tangent cone (half-angle arcsin(1/R_src)).
        """
        gamma = np.arcsin(1.0 / self.source_radius)
        offsets = -gamma + (np.arange(self.rays_per_view) + 0.5) \
            * 2.0 * gamma / self.rays_per_view
        origins = []
        dirs = []
        for v in range(self.num_views):
            phi = 2.0 * np.pi * v / self.num_views
            src = self.source_radius * np.array([np.cos(phi), np.sin(phi)])
            toward = np.arctan2(-src[1], -src[0])
            ang = toward + offsets
            origins.append(np.repeat(src[None, :], self.rays_per_view, axis=0))
            dirs.append(np.stack([np.cos(ang), np.sin(ang)], axis=1))
        return np.concatenate(origins), np.concatenate(dirs)


def trace_ray(mesh: TriMesh, origin, direction):
    """Intersect one ray with every triangle by half-plane clipping.

    Returns (triangle_indices, t_entry, t_exit) sorted by entry parameter;
    degenerate grazing intersections are dropped.  The segments partition the
    chord ray-intersect-domain.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    tris = mesh.triangles
    p = mesh.vertices
    t_lo = np.full(mesh.num_triangles, -np.inf)
    t_hi = np.full(mesh.num_triangles, np.inf)
    empty = np.zeros(mesh.num_triangles, dtype=bool)
    for loc in range(3):
        a = p[tris[:, loc]]
        b = p[tris[:, (loc + 1) % 3]]
        e = b - a
        s = e[:, 0] * d[1] - e[:, 1] * d[0]            # cross(e, d)
        rel = origin - a
        c = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]  # cross(e, rel)
        elen = np.linalg.norm(e, axis=1)
        # tolerance-based parallel test: exact sign tests on s and c are
        # unstable when the ray runs along a mesh edge
        par = np.abs(s) <= 1e-12 * elen
        ctol = 1e-12 * elen * (np.linalg.norm(rel, axis=1) + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            tcrit = -c / s
        pos = ~par & (s > 0)
        neg = ~par & (s < 0)
        t_lo = np.where(pos, np.maximum(t_lo, tcrit), t_lo)
        t_hi = np.where(neg, np.minimum(t_hi, tcrit), t_hi)
        empty |= par & (c < -ctol)
    valid = ~empty & (t_hi - t_lo > 1e-12)
    idx = np.flatnonzero(valid)
    order = np.argsort(t_lo[idx], kind="stable")
    idx = idx[order]
    t0 = t_lo[idx]
    t1 = t_hi[idx]
    # both triangles adjacent to a ray-collinear edge report the same
    # interval; clip each segment to start after the previous one ends so
    # the segments partition the chord (P1 fields agree along shared edges,
    # so either attribution integrates identically)
    if len(idx) > 1:
        run = np.concatenate(([-np.inf], np.maximum.accumulate(t1)[:-1]))
        t0 = np.maximum(t0, run)
    keep = t1 - t0 > 1e-12
    return idx[keep], t0[keep], t1[keep]


def tomo_system_matrix(mesh: TriMesh, geometry: FanBeamGeometry):
    """Sparse ray-integral matrices (A_all over all vertices, A interior only)."""
    origins, dirs = geometry.rays()
    tris = mesh.triangles
    verts = mesh.vertices
    rows, cols, vals = [], [], []
    for k in range(geometry.num_rays):
        idx, t0, t1 = trace_ray(mesh, origins[k], dirs[k])
        if len(idx) == 0:
            continue
        o, d = origins[k], dirs[k]
        x0 = o + t0[:, None] * d
        x1 = o + t1[:, None] * d
        length = t1 - t0
        tri = tris[idx]
        a, b, c = verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]]
        den = cross2(b - a, c - a)
        for x in (x0, x1):
            l1 = cross2(x - a, c - a) / den
            l2 = cross2(b - a, x - a) / den
            lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
            rows.append(np.full(3 * len(idx), k))
            cols.append(tri.ravel())
            vals.append(0.5 * (length[:, None] * lam).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    A_all = sp.csr_matrix((vals, (rows, cols)),
                          shape=(geometry.num_rays, mesh.num_vertices))
    A = A_all[:, mesh.interior_vertex_indices].tocsr()
    return A_all, A
