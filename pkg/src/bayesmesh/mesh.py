"""Conforming 2D triangular meshes: construction, edge topology, file I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def cross2(u, v):
    """z-component of the cross product of stacked 2-vectors."""
    u = np.asarray(u)
    v = np.asarray(v)
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


class MeshError(Exception):
    """Raised for invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed; carries the offending line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class DomainSpec:
    """Computational domain: 'unit-square' ([0,1]^2) or 'unit-disc' (|x| <= 1)."""

    shape: str
    h: float

    def __post_init__(self):
        if self.shape not in ("unit-square", "unit-disc"):
            raise ValueError(f"unknown domain shape {self.shape!r}")
        diam = np.sqrt(2.0) if self.shape == "unit-square" else 2.0
        if not (0.0 < self.h < diam):
            raise ValueError(f"mesh size h={self.h} must lie in (0, {diam})")


@dataclass
class TriMesh:
    """Conforming triangulation with undirected edge topology.

    Edges are stored once, oriented low vertex index -> high vertex index.
    An edge is 'interior-touching' when at least one endpoint is an interior
    vertex; only those edges carry gradient degrees of freedom.
    """

    vertices: np.ndarray          # (N_v, 2) float
    triangles: np.ndarray         # (N_t, 3) int, counterclockwise
    edges: np.ndarray = field(default=None)          # (N_e, 2) int, low < high
    edge_interior: np.ndarray = field(default=None)  # (N_e,) bool, interior-touching
    vertex_boundary: np.ndarray = field(default=None)  # (N_v,) bool
    tri_edges: np.ndarray = field(default=None)      # (N_t, 3) edge index of (i, i+1)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (N_v, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (N_t, 3) array")
        if self.edges is None:
            build_edge_topology(self)

    # counts
    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def num_interior_vertices(self):
        return int(np.count_nonzero(~self.vertex_boundary))

    @property
    def num_boundary_vertices(self):
        return int(np.count_nonzero(self.vertex_boundary))

    @property
    def num_interior_edges(self):
        """Number of interior-touching edges (gradient degrees of freedom)."""
        return int(np.count_nonzero(self.edge_interior))

    @property
    def interior_vertex_indices(self):
        return np.flatnonzero(~self.vertex_boundary)

    @property
    def interior_edge_indices(self):
        return np.flatnonzero(self.edge_interior)

    def signed_areas(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * cross2(b - a, c - a)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def triangle_quality(self):
        """2 * inradius / circumradius per triangle (1 for equilateral)."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        la = np.linalg.norm(b - c, axis=1)
        lb = np.linalg.norm(c - a, axis=1)
        lc = np.linalg.norm(a - b, axis=1)
        area = np.abs(0.5 * cross2(b - a, c - a))
        s = 0.5 * (la + lb + lc)
        r_in = area / s
        r_circ = la * lb * lc / (4.0 * area)
        return 2.0 * r_in / r_circ

    def validate(self):
        """Check conformity, orientation and the Euler characteristic."""
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("mesh contains a degenerate or clockwise triangle")
        chi = self.num_vertices - self.num_edges + self.num_triangles
        if chi != 1:
            raise MeshError(f"Euler characteristic {chi} != 1")


def _edge_key_array(triangles):
    """All (low, high) vertex pairs of the 3 edges of every triangle."""
    i, j, k = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    pairs = np.stack(
        [np.stack([i, j], axis=1), np.stack([j, k], axis=1), np.stack([k, i], axis=1)],
        axis=1,
    )  # (N_t, 3, 2)
    return np.sort(pairs, axis=2)


def build_edge_topology(mesh: TriMesh) -> TriMesh:
    """Populate edges, interior-touching flags and boundary vertex flags.

    The edge list is deterministic: lexicographically sorted (low, high)
    vertex pairs, each undirected edge appearing exactly once.
    """
    tris = mesh.triangles
    n_v = mesh.num_vertices
    if tris.size and (tris.min() < 0 or tris.max() >= n_v):
        raise MeshError("triangle references a vertex outside the mesh")
    pairs = _edge_key_array(tris).reshape(-1, 2)  # (3*N_t, 2)
    keys = pairs[:, 0] * np.int64(n_v) + pairs[:, 1]
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: edge shared by more than 2 triangles")
    edges = np.stack([uniq // n_v, uniq % n_v], axis=1)
    mesh.edges = edges
    mesh.tri_edges = inverse.reshape(-1, 3)
    boundary_edge = counts == 1
    vb = np.zeros(n_v, dtype=bool)
    vb[edges[boundary_edge].ravel()] = True
    mesh.vertex_boundary = vb
    # interior-touching: at least one endpoint interior
    mesh.edge_interior = ~(vb[edges[:, 0]] & vb[edges[:, 1]])
    return mesh


def euler_characteristic_check(mesh: TriMesh) -> dict:
    """Report mesh counts and whether n_e = n_v + N_t - 1 holds.

    The identity fails when some interior edge joins two boundary vertices;
    this is reported, not treated as an error.
    """
    n_v = mesh.num_interior_vertices
    n_e = mesh.num_interior_edges
    expected = n_v + mesh.num_triangles - 1
    return {
        "N_v": mesh.num_vertices,
        "N_e": mesh.num_edges,
        "N_t": mesh.num_triangles,
        "chi": mesh.num_vertices - mesh.num_edges + mesh.num_triangles,
        "n_v": n_v,
        "n_e": n_e,
        "n_v_b": mesh.num_boundary_vertices,
        "n_e_expected": expected,
        "identity_holds": n_e == expected,
    }


def unit_square_mesh(h: float) -> TriMesh:
    """Structured triangulation of [0,1]^2 with alternating crossed diagonals."""
    n = max(1, int(round(1.0 / h)))
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
    return TriMesh(vertices, np.array(tris, dtype=np.int64))


def unit_disc_mesh(h: float) -> TriMesh:
    """Radial-ring triangulation of the unit disc; ring k carries 6k vertices.

    Boundary vertices lie exactly on the unit circle.
    """
    m = max(1, int(round(1.0 / h)))
    verts = [(0.0, 0.0)]
    ring_start = [0]
    for k in range(1, m + 1):
        r = k / m
        ring_start.append(len(verts))
        cnt = 6 * k
        ang = 2.0 * np.pi * np.arange(cnt) / cnt
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    vertices = np.array(verts)

    tris = []
    # center fan
    for j in range(6):
        tris.append((0, 1 + j, 1 + (j + 1) % 6))
    # annuli: merge the two rings by advancing whichever angle is smaller
    for k in range(1, m):
        ni, no = 6 * k, 6 * (k + 1)
        si, so = ring_start[k], ring_start[k + 1]
        ai = 2.0 * np.pi * np.arange(ni + 1) / ni
        ao = 2.0 * np.pi * np.arange(no + 1) / no
        i = o = 0
        while i < ni or o < no:
            inner = si + i % ni
            outer = so + o % no
            if o < no and (i == ni or ao[o + 1] <= ai[i + 1]):
                tris.append((inner, outer, so + (o + 1) % no))
                o += 1
            else:
                tris.append((inner, so + o % no, si + (i + 1) % ni))
                i += 1
    return TriMesh(vertices, np.array(tris, dtype=np.int64))


def generate_initial_mesh(spec: DomainSpec) -> TriMesh:
    """Uniform isotropic starting mesh for the given domain."""
    if spec.shape == "unit-square":
        return unit_square_mesh(spec.h)
    return unit_disc_mesh(spec.h)


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the plain-text mesh format (header `trimesh 2d v1`)."""
    with open(path, "w") as f:
        f.write("trimesh 2d v1\n")
        f.write(f"vertices {mesh.num_vertices}\n")
        vb = mesh.vertex_boundary
        for (x, y), b in zip(mesh.vertices, vb):
            f.write(f"{x:.17g} {y:.17g} {int(b)}\n")
        f.write(f"triangles {mesh.num_triangles}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def read_mesh(path) -> TriMesh:
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    with open(path) as f:
        lines = f.readlines()

    def fail(msg, ln):
        raise MeshFormatError(msg, line=ln + 1)

    if not lines or lines[0].strip() != "trimesh 2d v1":
        fail("expected header 'trimesh 2d v1'", 0)
    ln = 1
    parts = lines[ln].split()
    if len(parts) != 2 or parts[0] != "vertices":
        fail("expected 'vertices <count>'", ln)
    n_v = int(parts[1])
    verts = np.empty((n_v, 2))
    flags = np.empty(n_v, dtype=bool)
    for i in range(n_v):
        ln += 1
        try:
            x, y, b = lines[ln].split()
            verts[i] = float(x), float(y)
            flags[i] = bool(int(b))
        except (ValueError, IndexError):
            fail(f"bad vertex record {i}", min(ln, len(lines) - 1))
    ln += 1
    parts = lines[ln].split()
    if len(parts) != 2 or parts[0] != "triangles":
        fail("expected 'triangles <count>'", ln)
    n_t = int(parts[1])
    tris = np.empty((n_t, 3), dtype=np.int64)
    for i in range(n_t):
        ln += 1
        try:
            tris[i] = [int(v) for v in lines[ln].split()]
        except (ValueError, IndexError):
            fail(f"bad triangle record {i}", min(ln, len(lines) - 1))
        if np.any(tris[i] < 0) or np.any(tris[i] >= n_v):
            fail(f"triangle record {i} references a missing vertex", ln)
    mesh = TriMesh(verts, tris)
    if not np.array_equal(mesh.vertex_boundary, flags):
        raise MeshFormatError("stored boundary flags disagree with topology")
    return mesh


def write_vtk(mesh: TriMesh, path, point_data: dict | None = None) -> None:
    """Export to VTK legacy ASCII (UNSTRUCTURED_GRID) for visualization."""
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\ntrimesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g} 0\n")
        nt = mesh.num_triangles
        f.write(f"CELLS {nt} {4 * nt}\n")
        for i, j, k in mesh.triangles:
            f.write(f"3 {i} {j} {k}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("5\n" * nt)
        if point_data:
            f.write(f"POINT_DATA {mesh.num_vertices}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in values:
                        f.write(f"{v:.17g}\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for gx, gy in values:
                        f.write(f"{gx:.17g} {gy:.17g} 0\n")
