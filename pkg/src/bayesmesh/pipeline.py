"""Outer adaptive loop: discretize, invert, recover gradient, adapt, repeat.

Each outer iteration rebuilds the forward operator on the current mesh,
whitens the data (with a variance inflation floor on the first iteration
only), runs the hybrid IAS solver, recovers the gradient by Clement
interpolation, builds the anisotropic metric and adapts the mesh.  Reports
and all artifacts are written as plain CSV / text files.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from matplotlib.tri import Triangulation

from .clement import clement_gradient
from .config import ConfigError, ExperimentConfig
from .darcy import assemble_darcy_operators, darcy_forward_matrix
from .ias import PhaseSchedule, ias_solve, reduced_forward, sensitivity_scaling
from .mesh import DomainSpec, TriMesh, cross2, generate_initial_mesh, read_mesh, write_mesh
from .metric import build_metric, grade_metric, metric_conformity
from .phantom import make_phantom, synthesize_data
from .remesh import adapt_mesh
from .tomography import FanBeamGeometry, tomo_system_matrix
from .whitney import assemble_incidence


@dataclass
class IterationReport:
    """Per-outer-iteration record of sizes, counts, timings and errors."""

    outer: int
    n_t: int
    n_v: int
    n_e: int
    sigma_eff: float
    cgls_counts: list = field(default_factory=list)    # (phase, inner, count)
    gibbs_history: list = field(default_factory=list)  # (phase, inner, energy)
    stage_seconds: dict = field(default_factory=dict)
    conformity_before: float = 0.0
    conformity_after: float = 0.0
    remesh_info: dict = field(default_factory=dict)
    l2_error: float = 0.0
    files: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "outer": self.outer, "n_t": self.n_t, "n_v": self.n_v,
            "n_e": self.n_e, "sigma_eff": self.sigma_eff,
            "cgls_counts": [list(c) for c in self.cgls_counts],
            "gibbs_history": [list(g) for g in self.gibbs_history],
            "stage_seconds": self.stage_seconds,
            "conformity_before": self.conformity_before,
            "conformity_after": self.conformity_after,
            "remesh_info": {k: (bool(v) if isinstance(v, (bool, np.bool_))
                                else float(v) if isinstance(v, float)
                                else int(v))
                            for k, v in self.remesh_info.items()},
            "l2_error": self.l2_error, "files": self.files,
        }

    @classmethod
    def from_json(cls, d: dict) -> "IterationReport":
        return cls(outer=d["outer"], n_t=d["n_t"], n_v=d["n_v"], n_e=d["n_e"],
                   sigma_eff=d["sigma_eff"],
                   cgls_counts=[tuple(c) for c in d["cgls_counts"]],
                   gibbs_history=[tuple(g) for g in d["gibbs_history"]],
                   stage_seconds=d["stage_seconds"],
                   conformity_before=d["conformity_before"],
                   conformity_after=d["conformity_after"],
                   remesh_info=d["remesh_info"], l2_error=d["l2_error"],
                   files=d.get("files", {}))


class StageError(Exception):
    """A pipeline stage failed; carries the stage name and partial reports."""

    def __init__(self, stage, cause, reports):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.reports = reports


def evaluate_p1(mesh: TriMesh, values, points) -> np.ndarray:
    """Evaluate a P1 nodal field at arbitrary points.

    Points outside the triangulation (e.g. between a polygonal boundary and
    the true curved boundary) fall back to the nearest-vertex value.
    """
    values = np.asarray(values, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1],
                        mesh.triangles)
    t = tri.get_trifinder()(points[:, 0], points[:, 1])
    out = np.empty(len(points))
    inside = t >= 0
    if np.any(inside):
        ti = t[inside]
        a = mesh.vertices[mesh.triangles[ti, 0]]
        b = mesh.vertices[mesh.triangles[ti, 1]]
        c = mesh.vertices[mesh.triangles[ti, 2]]
        p = points[inside]
        den = cross2(b - a, c - a)
        l1 = cross2(p - a, c - a) / den
        l2 = cross2(b - a, p - a) / den
        lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
        out[inside] = np.einsum("ij,ij->i", lam,
                                values[mesh.triangles[ti]])
    if np.any(~inside):
        from scipy.spatial import cKDTree
        nearest = cKDTree(mesh.vertices).query(points[~inside])[1]
        out[~inside] = values[nearest]
    return out


def extract_profile(mesh: TriMesh, values, p0, p1, n: int = 200):
    """Sample a P1 field at n points along the segment p0 -> p1.

    Returns (arclength, samples)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    s = np.linspace(0.0, 1.0, n)
    pts = p0 + s[:, None] * (p1 - p0)
    return s * float(np.linalg.norm(p1 - p0)), evaluate_p1(mesh, values, pts)


def _profile_endpoints(config: ExperimentConfig):
    if config.problem == "tomography":
        return (0.0, -1.0), (0.0, 1.0)
    return (0.5, 0.0), (0.5, 1.0)


def _vertex_lumped_mass(mesh: TriMesh) -> np.ndarray:
    areas = mesh.signed_areas()
    w = np.zeros(mesh.num_vertices)
    np.add.at(w, mesh.triangles.ravel(),
              np.repeat(areas / 3.0, 3))
    return w


def _forward_operators(config: ExperimentConfig, mesh: TriMesh):
    """Forward matrices on a mesh: (A_all over all vertices, A interior only)."""
    if config.problem == "tomography":
        geom = FanBeamGeometry(num_views=config.num_views,
                               rays_per_view=config.rays_per_view,
                               source_radius=config.source_radius)
        return tomo_system_matrix(mesh, geom)
    op = assemble_darcy_operators(mesh)
    A_all = darcy_forward_matrix(op, grid_n=config.grid_n,
                                 interior_only=False)
    return A_all, A_all[:, mesh.interior_vertex_indices]


def make_truth(config: ExperimentConfig):
    """Fine truth mesh and nodal phantom field on it."""
    fine = generate_initial_mesh(DomainSpec(config.domain_shape,
                                            config.h_fine))
    u_truth = make_phantom(config.resolved_phantom(), fine)
    return fine, u_truth


def make_data(config: ExperimentConfig, fine_mesh=None, u_truth=None):
    """Synthesize noisy data on the fine mesh.

    Returns (b, sigma, b_star) with sigma resolved from sigma_percent when
    given as a percentage of the maximum noiseless datum.
    """
    if fine_mesh is None or u_truth is None:
        fine_mesh, u_truth = make_truth(config)
    A_fine, _ = _forward_operators(config, fine_mesh)
    b_star = np.asarray(A_fine @ u_truth).ravel()
    if config.sigma is not None:
        sigma = float(config.sigma)
    else:
        sigma = float(config.sigma_percent) / 100.0 * float(
            np.max(np.abs(b_star)))
    b, _ = synthesize_data(A_fine, u_truth, sigma, config.seed)
    return b, sigma, b_star


def _l2_error(fine_mesh, u_truth, mesh, u_full) -> float:
    """Relative L2 distance between the reconstruction and the fine truth."""
    u_interp = evaluate_p1(mesh, u_full, fine_mesh.vertices)
    w = _vertex_lumped_mass(fine_mesh)
    num = float(np.sqrt(w @ (u_interp - u_truth) ** 2))
    den = float(np.sqrt(w @ u_truth ** 2))
    return num / den if den > 0 else num


def run_outer_loop(config: ExperimentConfig, collect_artifacts: bool = True):
    """Run the full adaptive loop.

    Returns (reports, artifacts): one IterationReport per outer iteration and,
    when collect_artifacts, one dict per iteration with the mesh, nodal
    reconstruction, edge coefficients, hypervariances and metric.
    """
    reports: list[IterationReport] = []
    artifacts: list[dict] = []
    stage = "setup"
    try:
        fine_mesh, u_truth = make_truth(config)
        b, sigma, _ = make_data(config, fine_mesh, u_truth)
        domain = DomainSpec(config.domain_shape, config.h_init)
        mesh = generate_initial_mesh(domain)

        for outer in range(1, config.outer_iterations + 1):
            report = IterationReport(outer=outer, n_t=mesh.num_triangles,
                                     n_v=mesh.num_vertices,
                                     n_e=mesh.num_edges, sigma_eff=0.0)
            stage = "forward"
            t0 = time.perf_counter()
            _, A = _forward_operators(config, mesh)
            report.stage_seconds["forward"] = time.perf_counter() - t0

            stage = "ias"
            t0 = time.perf_counter()
            sigma_eff = sigma
            if outer == 1:
                sigma_eff = max(sigma, config.inflation * config.h_init)
            report.sigma_eff = sigma_eff
            A_w = A / sigma_eff
            b_w = b / sigma_eff
            inc = assemble_incidence(mesh)
            scales = None
            if config.sensitivity_scaling:
                A1 = reduced_forward(A_w, inc.L)
                scales = sensitivity_scaling(A1, config.theta_star1)
            schedule = PhaseSchedule(eta=config.eta,
                                     theta_star1=config.theta_star1,
                                     r2=config.r2,
                                     theta_change_tol=config.theta_change_tol,
                                     max_outer=config.ias_max_outer,
                                     run_phase_two=config.run_phase_two)
            state = ias_solve(A_w, inc.L, b_w, schedule, scales=scales,
                              morozov_target=len(b),
                              cgls_max_iter=config.cgls_max_iter)
            report.stage_seconds["ias"] = time.perf_counter() - t0
            report.cgls_counts = list(state.cgls_counts)
            report.gibbs_history = list(state.gibbs_history)

            u_full = np.zeros(mesh.num_vertices)
            u_full[inc.interior_vertices] = state.u

            stage = "clement"
            t0 = time.perf_counter()
            grad = clement_gradient(mesh, state.z)
            report.stage_seconds["clement"] = time.perf_counter() - t0

            stage = "metric"
            t0 = time.perf_counter()
            metric = grade_metric(build_metric(mesh, grad, config.h_min,
                                               config.h_max, config.alpha))
            report.conformity_before = metric_conformity(mesh, metric)
            report.stage_seconds["metric"] = time.perf_counter() - t0

            stage = "remesh"
            t0 = time.perf_counter()
            new_mesh, info = adapt_mesh(mesh, metric, config.h_min,
                                        config.h_max, domain=domain)
            report.conformity_after = metric_conformity(new_mesh, metric)
            report.remesh_info = info
            report.stage_seconds["remesh"] = time.perf_counter() - t0

            stage = "report"
            report.l2_error = _l2_error(fine_mesh, u_truth, mesh, u_full)
            reports.append(report)
            if collect_artifacts:
                artifacts.append({"mesh": mesh, "u": u_full, "z": state.z,
                                  "theta": state.theta, "metric": metric})

            if abs(new_mesh.num_triangles - mesh.num_triangles) \
                    < 0.02 * mesh.num_triangles:
                break
            mesh = new_mesh
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(stage, exc, reports) from exc
    return reports, artifacts


def compare_anisotropy(config: ExperimentConfig):
    """Run the configured anisotropic variant against the alpha = 1 baseline.

    Both runs use identical seeds and data; returns
    ((reports_aniso, artifacts_aniso), (reports_iso, artifacts_iso)).
    """
    aniso = run_outer_loop(config)
    iso = run_outer_loop(replace(config, alpha=1.0))
    return aniso, iso


def write_comparison_csv(reports_a, reports_b, path) -> None:
    """Side-by-side element counts and solver times per iteration."""
    with open(path, "w") as f:
        f.write("iteration,n_t_aniso,n_t_iso,ias_seconds_aniso,"
                "ias_seconds_iso\n")
        for i in range(max(len(reports_a), len(reports_b))):
            ra = reports_a[i] if i < len(reports_a) else None
            rb = reports_b[i] if i < len(reports_b) else None
            f.write(f"{i + 1},"
                    f"{ra.n_t if ra else ''},{rb.n_t if rb else ''},"
                    f"{ra.stage_seconds.get('ias', 0.0) if ra else ''},"
                    f"{rb.stage_seconds.get('ias', 0.0) if rb else ''}\n")


def write_reports(reports, out_dir, artifacts=None,
                  config: ExperimentConfig | None = None) -> dict:
    """Write all per-iteration CSVs, meshes and fields under out_dir.

    Returns a dict of written file paths.  With artifacts, per-iteration
    meshes, reconstructions, solver state and reconstruction profiles are
    written too.
    """
    if not reports:
        raise ValueError("no iteration reports to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    path = out / "cgls_counts.csv"
    with open(path, "w") as f:
        f.write("iteration,phase,inner,count\n")
        for r in reports:
            for phase, inner, count in r.cgls_counts:
                f.write(f"{r.outer},{phase},{inner},{count}\n")
    files["cgls_counts"] = str(path)

    path = out / "mesh_stats.csv"
    with open(path, "w") as f:
        f.write("iteration,n_t,n_v,n_e,sigma_eff,conformity_before,"
                "conformity_after,l2_error\n")
        for r in reports:
            f.write(f"{r.outer},{r.n_t},{r.n_v},{r.n_e},{r.sigma_eff:.17g},"
                    f"{r.conformity_before:.17g},{r.conformity_after:.17g},"
                    f"{r.l2_error:.17g}\n")
    files["mesh_stats"] = str(path)

    path = out / "energy.csv"
    with open(path, "w") as f:
        f.write("iteration,phase,inner,gibbs_energy\n")
        for r in reports:
            for phase, inner, energy in r.gibbs_history:
                f.write(f"{r.outer},{phase},{inner},{energy:.17g}\n")
    files["energy"] = str(path)

    path = out / "timings.csv"
    with open(path, "w") as f:
        f.write("iteration,stage,seconds\n")
        for r in reports:
            for name, sec in r.stage_seconds.items():
                f.write(f"{r.outer},{name},{sec:.6f}\n")
    files["timings"] = str(path)

    if artifacts:
        p0, p1 = _profile_endpoints(config) if config is not None \
            else ((0.0, -1.0), (0.0, 1.0))
        for r, art in zip(reports, artifacts):
            i = r.outer
            mesh, u = art["mesh"], art["u"]
            mesh_path = out / f"mesh_iter{i}.txt"
            write_mesh(mesh, mesh_path)
            field_path = out / f"field_iter{i}.csv"
            with open(field_path, "w") as f:
                f.write("x,y,u\n")
                for v in range(mesh.num_vertices):
                    f.write(f"{mesh.vertices[v, 0]:.17g},"
                            f"{mesh.vertices[v, 1]:.17g},{u[v]:.17g}\n")
            prof_path = out / f"profile_iter{i}.csv"
            s, vals = extract_profile(mesh, u, p0, p1)
            with open(prof_path, "w") as f:
                f.write("arclength,u\n")
                for sv, uv in zip(s, vals):
                    f.write(f"{sv:.17g},{uv:.17g}\n")
            state_path = out / f"state_iter{i}.npz"
            np.savez(state_path, u=u, z=art["z"], theta=art["theta"])
            r.files.update({"mesh": str(mesh_path), "field": str(field_path),
                            "profile": str(prof_path),
                            "state": str(state_path)})

    path = out / "reports.json"
    with open(path, "w") as f:
        json.dump([r.to_json() for r in reports], f, indent=1)
    files["reports"] = str(path)
    return files


def load_reports(out_dir):
    """Reload reports and whatever artifacts were written by write_reports."""
    out = Path(out_dir)
    path = out / "reports.json"
    if not path.exists():
        raise FileNotFoundError(f"no reports.json under {out_dir}")
    with open(path) as f:
        reports = [IterationReport.from_json(d) for d in json.load(f)]
    artifacts = []
    for r in reports:
        mesh_path = out / f"mesh_iter{r.outer}.txt"
        state_path = out / f"state_iter{r.outer}.npz"
        if not (mesh_path.exists() and state_path.exists()):
            artifacts = []
            break
        state = np.load(state_path)
        artifacts.append({"mesh": read_mesh(mesh_path), "u": state["u"],
                          "z": state["z"], "theta": state["theta"],
                          "metric": None})
    return reports, artifacts
