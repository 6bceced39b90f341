"""Anisotropic mesh-generating metrics: Steiner ellipses, metric fields,
metric lengths and conformity scoring.

A metric field assigns an SPD 2x2 tensor to every mesh vertex; between
vertices the tensors are interpolated log-Euclidean (linear interpolation of
matrix logarithms over triangles), which keeps interpolants SPD.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.tri import Triangulation
from scipy.spatial import cKDTree

from .mesh import TriMesh, cross2

# reference equilateral triangle: centroid at the origin, circumradius 1,
# vertices at 90, 210 and 330 degrees (counterclockwise)
_REF_ANGLES = np.deg2rad([90.0, 210.0, 330.0])
REFERENCE_TRIANGLE = np.stack([np.cos(_REF_ANGLES), np.sin(_REF_ANGLES)], axis=1)


@dataclass
class SteinerData:
    """Polar factorization F = P W of the reference-to-element affine map."""

    P: np.ndarray         # SPD 2x2
    W: np.ndarray         # rotation, det +1
    centroid: np.ndarray


def steiner_polar(triangle: np.ndarray) -> SteinerData:
    """Polar decomposition of the map taking the reference triangle to K.

    The element's Steiner circumellipse is {x : x^T P^-2 x = 1} centered at
    the centroid.
    """
    triangle = np.asarray(triangle, dtype=float)
    v0 = triangle.mean(axis=0)
    rel = triangle - v0
    # F maps reference vertices to rel; two vertices determine the linear map
    Xi = REFERENCE_TRIANGLE[:2].T       # 2x2
    F = np.column_stack([rel[0], rel[1]]) @ np.linalg.inv(Xi)
    if np.linalg.det(F) <= 0.0:
        raise ValueError("degenerate or clockwise triangle")
    U, D, Vt = np.linalg.svd(F)
    P = U @ np.diag(D) @ U.T
    W = U @ Vt
    return SteinerData(P=P, W=W, centroid=v0)


def element_metric(data: SteinerData) -> np.ndarray:
    """Constant metric G|_K = P^-2 under which K has unit Steiner circle."""
    Pinv = np.linalg.inv(data.P)
    return Pinv @ Pinv


def _sym_eig_2x2(T):
    """Eigen-decomposition of batched symmetric 2x2 tensors (..., 2, 2)."""
    a, b, c = T[..., 0, 0], T[..., 0, 1], T[..., 1, 1]
    tr = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    lam1, lam2 = tr + disc, tr - disc
    # eigenvector for lam1
    vx = np.where(np.abs(b) > 1e-300, b, lam1 - c)
    vy = np.where(np.abs(b) > 1e-300, lam1 - a, b * 0.0)
    # handle nearly diagonal tensors
    diag = np.abs(b) <= 1e-14 * np.maximum(np.abs(a), np.abs(c))
    vx = np.where(diag, 1.0, vx)
    vy = np.where(diag, 0.0, vy)
    swap = diag & (c > a)
    vx, vy = np.where(swap, 0.0, vx), np.where(swap, 1.0, vy)
    nrm = np.hypot(vx, vy)
    return lam1, lam2, vx / nrm, vy / nrm


def _sym_func_2x2(T, fn):
    lam1, lam2, vx, vy = _sym_eig_2x2(T)
    f1, f2 = fn(lam1), fn(lam2)
    out = np.empty_like(T)
    out[..., 0, 0] = f1 * vx * vx + f2 * vy * vy
    out[..., 0, 1] = out[..., 1, 0] = (f1 - f2) * vx * vy
    out[..., 1, 1] = f1 * vy * vy + f2 * vx * vx
    return out


def sym_log(T):
    return _sym_func_2x2(T, np.log)


def sym_exp(T):
    return _sym_func_2x2(T, np.exp)


@dataclass
class MetricField:
    """Per-vertex SPD tensors on a mesh, with the calibration that made them."""

    mesh: TriMesh
    tensors: np.ndarray            # (N_v, 2, 2)
    C: float
    delta: float
    alpha: float
    h_min: float
    h_max: float
    M: float
    fallback: bool = False         # True when built from a zero gradient field

    def __post_init__(self):
        self._log_tensors = sym_log(self.tensors)
        verts = self.mesh.vertices
        self._trifinder = Triangulation(
            verts[:, 0], verts[:, 1], self.mesh.triangles).get_trifinder()
        self._tree = cKDTree(verts)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Log-Euclidean interpolated tensors at an (n, 2) array of points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        t = self._trifinder(points[:, 0], points[:, 1])
        logs = np.empty((len(points), 2, 2))
        inside = t >= 0
        if np.any(inside):
            tri = self.mesh.triangles[t[inside]]
            p = self.mesh.vertices
            a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
            d = points[inside]
            den = cross2(b - a, c - a)
            l1 = cross2(d - a, c - a) / den
            l2 = cross2(b - a, d - a) / den
            l0 = 1.0 - l1 - l2
            lt = self._log_tensors
            logs[inside] = (l0[:, None, None] * lt[tri[:, 0]]
                            + l1[:, None, None] * lt[tri[:, 1]]
                            + l2[:, None, None] * lt[tri[:, 2]])
        if np.any(~inside):
            # points marginally outside the polygonal domain: nearest vertex
            _, nearest = self._tree.query(points[~inside])
            logs[~inside] = self._log_tensors[nearest]
        return sym_exp(logs)

    def segment_lengths(self, p, q, order: int = 5) -> np.ndarray:
        """Metric lengths of segments p->q ((n, 2) arrays) by Gauss quadrature."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        nodes, weights = np.polynomial.legendre.leggauss(order)
        ts = 0.5 * (nodes + 1.0)
        d = q - p
        total = np.zeros(len(p))
        for t, w in zip(ts, weights):
            G = self.evaluate(p + t * d)
            quad = np.einsum("ni,nij,nj->n", d, G, d)
            total += 0.5 * w * np.sqrt(np.maximum(quad, 0.0))
        return total


def metric_segment_length(metric: MetricField, p, q, order: int = 5) -> float:
    return float(metric.segment_lengths(np.asarray(p)[None, :],
                                        np.asarray(q)[None, :], order=order)[0])


def build_metric(mesh: TriMesh, gradient: np.ndarray, h_min: float,
                 h_max: float, alpha: float) -> MetricField:
    """Metric field from a recovered per-vertex gradient.

    Calibration: the largest gradient M sets C = 1/(h_min^2 M^2) so that a
    segment of length h_min parallel to the strongest gradient has unit metric
    length; delta = sqrt(alpha/C)/h_max so that at |grad| = delta a
    perpendicular segment of length h_max has unit metric length.  Vertices
    with |grad| <= delta get the isotropic tensor (C delta^2/alpha) I =
    (1/h_max^2) I, continuing the perpendicular eigenvalue at the threshold so
    that weak-gradient regions target edges of Euclidean length h_max.
    """
    if not (0.0 < h_min < h_max):
        raise ValueError("need 0 < h_min < h_max")
    if alpha < 1.0:
        raise ValueError("anisotropy ratio must be >= 1")
    gradient = np.asarray(gradient, dtype=float)
    mags = np.hypot(gradient[:, 0], gradient[:, 1])
    M = float(mags.max())
    n = mesh.num_vertices
    if M == 0.0:
        delta_fb = 1.0 / h_max ** 2
        tensors = np.broadcast_to(delta_fb * np.eye(2), (n, 2, 2)).copy()
        return MetricField(mesh=mesh, tensors=tensors, C=delta_fb, delta=delta_fb,
                           alpha=alpha, h_min=h_min, h_max=h_max, M=0.0,
                           fallback=True)
    C = 1.0 / (h_min ** 2 * M ** 2)
    delta = np.sqrt(alpha / C) / h_max
    tensors = np.empty((n, 2, 2))
    aniso = mags > delta
    # isotropic branch: h_max sizing (= C delta^2 / alpha by calibration)
    tensors[~aniso] = (1.0 / h_max ** 2) * np.eye(2)
    if np.any(aniso):
        g = gradient[aniso]
        mag = mags[aniso]
        e_par = g / mag[:, None]
        e_perp = np.stack([-e_par[:, 1], e_par[:, 0]], axis=1)
        s = C * mag ** 2
        outer_par = np.einsum("ni,nj->nij", e_par, e_par)
        outer_perp = np.einsum("ni,nj->nij", e_perp, e_perp)
        tensors[aniso] = s[:, None, None] * (outer_par + outer_perp / alpha)
    return MetricField(mesh=mesh, tensors=tensors, C=C, delta=float(delta),
                       alpha=alpha, h_min=h_min, h_max=h_max, M=M)


def _grow_tensor(T: np.ndarray, dist: float, ln_ratio: float) -> np.ndarray:
    """Weakest tensor at distance `dist` compatible with T under gradation.

    Sizes may grow linearly with distance at rate ln_ratio:
    h' = h + dist * ln_ratio, i.e. lambda' = lambda / (1 + sqrt(lambda) *
    dist * ln_ratio)^2, applied per eigenvalue.
    """
    lam1, lam2, vx, vy = _sym_eig_2x2(T)
    g1 = lam1 / (1.0 + np.sqrt(lam1) * dist * ln_ratio) ** 2
    g2 = lam2 / (1.0 + np.sqrt(lam2) * dist * ln_ratio) ** 2
    out = np.empty_like(T)
    out[..., 0, 0] = g1 * vx * vx + g2 * vy * vy
    out[..., 0, 1] = out[..., 1, 0] = (g1 - g2) * vx * vy
    out[..., 1, 1] = g1 * vy * vy + g2 * vx * vx
    return out


def _intersect_tensors(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Most permissive SPD tensor whose unit ball lies in both unit balls.

    Computed by simultaneous reduction: in the basis diagonalizing the pencil
    (A, B), take the larger of the two diagonal entries.
    """
    D = B - A
    det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
    tr = D[0, 0] + D[1, 1]
    scale = max(abs(A).max(), abs(B).max())
    if det >= -1e-14 * scale ** 2:
        # one tensor dominates the other
        return B if tr >= 0.0 else A
    w, P = np.linalg.eig(np.linalg.solve(A, B))
    P = np.real(P)
    a = np.einsum("ij,ik,kj->j", P, A, P)
    b = np.einsum("ij,ik,kj->j", P, B, P)
    Pinv = np.linalg.inv(P)
    M = Pinv.T @ np.diag(np.maximum(a, b)) @ Pinv
    return 0.5 * (M + M.T)


def grade_metric(metric: MetricField, ratio: float = 1.8,
                 max_sweeps: int = 30) -> MetricField:
    """Bound the spatial growth of the metric's target sizes.

    Along any mesh edge, target edge lengths may grow by at most a factor
    derived from `ratio` (growth rate ln(ratio) per unit distance), mirroring
    the gradation control of metric-based mesh generators.  Without it, a
    refined band bordered directly by coarse tensors produces abrupt size
    jumps and the refined zone erodes across adaptation cycles.

    Returns a new MetricField with the same calibration constants; tensors
    are only ever tightened (intersection with grown neighbor tensors).
    """
    if ratio <= 1.0:
        raise ValueError("gradation ratio must exceed 1")
    ln_ratio = float(np.log(ratio))
    mesh = metric.mesh
    tensors = metric.tensors.copy()
    edges = mesh.edges
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    for _ in range(max_sweeps):
        changed = False
        grown_a = _grow_tensor(tensors[edges[:, 0]], lengths, ln_ratio)
        grown_b = _grow_tensor(tensors[edges[:, 1]], lengths, ln_ratio)
        for e in range(len(edges)):
            a, b = edges[e]
            for v, grown in ((b, grown_a[e]), (a, grown_b[e])):
                cur = tensors[v]
                new = _intersect_tensors(cur, grown)
                if np.abs(new - cur).max() > 1e-10 * np.abs(cur).max():
                    tensors[v] = new
                    changed = True
        if not changed:
            break
    return MetricField(mesh=mesh, tensors=tensors, C=metric.C,
                       delta=metric.delta, alpha=metric.alpha,
                       h_min=metric.h_min, h_max=metric.h_max, M=metric.M,
                       fallback=metric.fallback)


def metric_conformity(mesh: TriMesh, metric: MetricField) -> float:
    """max over triangles of ||G(centroid) - P_K^-2||_max (Problem-1 score)."""
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    G = metric.evaluate(centroids)
    worst = 0.0
    for t in range(mesh.num_triangles):
        data = steiner_polar(mesh.vertices[mesh.triangles[t]])
        diff = np.abs(G[t] - element_metric(data)).max()
        worst = max(worst, float(diff))
    return worst


def write_metric_csv(metric: MetricField, path) -> None:
    """Per-vertex CSV export: x, y, g11, g12, g22."""
    verts = metric.mesh.vertices
    T = metric.tensors
    with open(path, "w") as f:
        f.write("x,y,g11,g12,g22\n")
        for i in range(len(verts)):
            f.write(f"{verts[i, 0]:.17g},{verts[i, 1]:.17g},"
                    f"{T[i, 0, 0]:.17g},{T[i, 0, 1]:.17g},{T[i, 1, 1]:.17g}\n")
