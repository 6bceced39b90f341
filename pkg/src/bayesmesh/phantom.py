"""Piecewise constant phantoms and synthetic data generation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

from .mesh import TriMesh


@dataclass
class DiscInclusion:
    center: tuple
    radius: float
    value: float

    def contains(self, pts):
        d = pts - np.asarray(self.center)
        return np.hypot(d[:, 0], d[:, 1]) <= self.radius


@dataclass
class KiteInclusion:
    """Kite-shaped curve c + s*(cos t + 0.65 cos 2t - 0.65, 1.5 sin t)."""

    center: tuple
    scale: float
    value: float
    rotation: float = 0.0

    def boundary(self, n=256):
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        x = np.cos(t) + 0.65 * np.cos(2 * t) - 0.65
        y = 1.5 * np.sin(t)
        pts = self.scale * np.stack([x, y], axis=1)
        if self.rotation:
            c, s = np.cos(self.rotation), np.sin(self.rotation)
            pts = pts @ np.array([[c, s], [-s, c]])
        return pts + np.asarray(self.center)

    def contains(self, pts):
        return Path(self.boundary()).contains_points(pts)


@dataclass
class RectInclusion:
    lower: tuple
    upper: tuple
    value: float

    def contains(self, pts):
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass
class Phantom:
    inclusions: list = field(default_factory=list)
    background: float = 0.0


def tomography_phantom() -> Phantom:
    """Default two-inclusion absorption phantom on the unit disc."""
    return Phantom(inclusions=[
        DiscInclusion(center=(-0.35, 0.30), radius=0.28, value=1.2),
        KiteInclusion(center=(0.35, -0.25), scale=0.22, value=1.0),
    ])


def darcy_phantom() -> Phantom:
    """Default two-rectangle source phantom on the unit square."""
    return Phantom(inclusions=[
        RectInclusion(lower=(0.20, 0.55), upper=(0.45, 0.80), value=1.0),
        RectInclusion(lower=(0.55, 0.20), upper=(0.80, 0.45), value=-1.0),
    ])


def make_phantom(phantom: Phantom, mesh: TriMesh) -> np.ndarray:
    """Nodal values of the phantom at all mesh vertices (first inclusion wins)."""
    values = np.full(mesh.num_vertices, float(phantom.background))
    assigned = np.zeros(mesh.num_vertices, dtype=bool)
    for inc in phantom.inclusions:
        inside = inc.contains(mesh.vertices) & ~assigned
        values[inside] = inc.value
        assigned |= inside
    return values


def synthesize_data(forward_matrix, u_truth, sigma: float, seed: int,
                    truth_mesh: TriMesh | None = None,
                    inversion_mesh: TriMesh | None = None):
    """Noisy data b = A_fine u_truth + sigma * N(0, I), seeded.

    Returns (b, inverse_crime_flag); the flag warns when the truth mesh is
    the same discretization as the inversion mesh.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    b_star = forward_matrix @ np.asarray(u_truth, dtype=float)
    b_star = np.asarray(b_star).ravel()
    rng = np.random.default_rng(seed)
    b = b_star + sigma * rng.standard_normal(b_star.shape)
    crime = False
    if truth_mesh is not None and inversion_mesh is not None:
        crime = (truth_mesh.num_vertices == inversion_mesh.num_vertices
                 and truth_mesh.num_triangles == inversion_mesh.num_triangles
                 and np.array_equal(truth_mesh.triangles,
                                    inversion_mesh.triangles)
                 and np.allclose(truth_mesh.vertices,
                                 inversion_mesh.vertices))
    return b, crime
