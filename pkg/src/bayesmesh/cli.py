"""Command-line entry point for the adaptive inversion experiments.

Subcommands:
  phantom   write the truth field on the fine mesh
  forward   synthesize the noisy data vector
  run       execute the full outer adaptive loop
  compare   run the configured anisotropy against the isotropic baseline
  report    re-emit tables from a stored run directory

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .linalg import FactorizationError, NumericalError
from .mesh import MeshError, write_mesh
from . import pipeline
from .pipeline import StageError


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesmesh",
        description="Adaptive anisotropic Bayesian meshing for linear "
                    "inverse problems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("phantom", "write the truth field on the fine mesh"),
            ("forward", "synthesize the noisy data vector"),
            ("run", "execute the outer adaptive loop"),
            ("compare", "anisotropic vs isotropic baseline"),
            ("report", "re-emit tables from a stored run")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path,
                       help="experiment config file (INI-style sections)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the noise seed")
        p.add_argument("--alpha", type=float, default=None,
                       help="override the anisotropy ratio")
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = ExperimentConfig(sigma_percent=4.0)
    return config.with_overrides(seed=args.seed, alpha=args.alpha)


def _write_vector_csv(path, header, values):
    with open(path, "w") as f:
        f.write(f"index,{header}\n")
        for i, v in enumerate(np.asarray(values).ravel()):
            f.write(f"{i},{v:.17g}\n")


def cmd_phantom(config: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    fine_mesh, u_truth = pipeline.make_truth(config)
    write_mesh(fine_mesh, out / "truth_mesh.txt")
    with open(out / "truth_field.csv", "w") as f:
        f.write("x,y,u\n")
        for v in range(fine_mesh.num_vertices):
            f.write(f"{fine_mesh.vertices[v, 0]:.17g},"
                    f"{fine_mesh.vertices[v, 1]:.17g},{u_truth[v]:.17g}\n")
    print(f"wrote truth mesh ({fine_mesh.num_triangles} triangles) and "
          f"field to {out}")
    return EXIT_OK


def cmd_forward(config: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    b, sigma, b_star = pipeline.make_data(config)
    _write_vector_csv(out / "data.csv", "b", b)
    _write_vector_csv(out / "data_noiseless.csv", "b_star", b_star)
    with open(out / "noise.txt", "w") as f:
        f.write(f"sigma = {sigma:.17g}\nseed = {config.seed}\n"
                f"m = {len(b)}\n")
    print(f"wrote {len(b)} data values to {out} (sigma = {sigma:.6g})")
    return EXIT_OK


def cmd_run(config: ExperimentConfig, out: Path) -> int:
    reports, artifacts = pipeline.run_outer_loop(config)
    pipeline.write_reports(reports, out, artifacts=artifacts, config=config)
    for r in reports:
        total = sum(r.stage_seconds.values())
        print(f"iteration {r.outer}: {r.n_t} triangles, "
              f"l2 error {r.l2_error:.4f}, {total:.2f} s")
    print(f"wrote reports to {out}")
    return EXIT_OK


def cmd_compare(config: ExperimentConfig, out: Path) -> int:
    (rep_a, art_a), (rep_b, art_b) = pipeline.compare_anisotropy(config)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_reports(rep_a, out / "anisotropic", artifacts=art_a,
                           config=config)
    pipeline.write_reports(rep_b, out / "isotropic", artifacts=art_b,
                           config=config)
    pipeline.write_comparison_csv(rep_a, rep_b, out / "compare.csv")
    for i in range(max(len(rep_a), len(rep_b))):
        na = rep_a[i].n_t if i < len(rep_a) else "-"
        nb = rep_b[i].n_t if i < len(rep_b) else "-"
        print(f"iteration {i + 1}: anisotropic {na} vs isotropic {nb} "
              f"triangles")
    print(f"wrote comparison to {out}")
    return EXIT_OK


def cmd_report(config: ExperimentConfig, out: Path) -> int:
    reports, artifacts = pipeline.load_reports(out)
    pipeline.write_reports(reports, out, artifacts=artifacts or None,
                           config=config)
    print(f"re-emitted tables for {len(reports)} iterations under {out}")
    return EXIT_OK


_COMMANDS = {"phantom": cmd_phantom, "forward": cmd_forward, "run": cmd_run,
             "compare": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](config, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FactorizationError, NumericalError, MeshError,
            FileNotFoundError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
