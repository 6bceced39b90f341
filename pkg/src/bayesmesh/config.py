"""Experiment configuration: dataclass plus a plain-text file format.

The config file uses ``key = value`` lines grouped in named sections
(INI style, parsed with configparser).  Recognized sections: ``problem``,
``geometry``, ``phantom``, ``noise``, ``mesh``, ``ias``, ``pipeline``.
Unknown keys are rejected so typos fail loudly instead of silently using
defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .phantom import (DiscInclusion, KiteInclusion, Phantom, RectInclusion,
                      darcy_phantom, tomography_phantom)


class ConfigError(Exception):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """All parameters of one adaptive inversion experiment."""

    problem: str = "tomography"          # tomography | darcy
    # tomography geometry
    num_views: int = 15
    rays_per_view: int = 300
    source_radius: float = 3.0
    # darcy geometry
    grid_n: int = 20
    # truth / data
    phantom: Phantom | None = None       # None -> problem default
    h_fine: float = 0.02
    sigma: float | None = None           # absolute noise std
    sigma_percent: float | None = None   # alternative: % of max noiseless datum
    seed: int = 0
    # meshing
    h_init: float = 0.05
    h_min: float = 0.01
    h_max: float = 0.1
    alpha: float = 12.0
    # IAS
    eta: float = 1e-3
    theta_star1: float = 0.05
    r2: float = 0.5
    theta_change_tol: float = 0.05
    ias_max_outer: int = 15
    cgls_max_iter: int = 200
    sensitivity_scaling: bool = False
    run_phase_two: bool = True
    # outer loop
    inflation: float = 0.3
    outer_iterations: int = 4

    def __post_init__(self):
        if self.problem not in ("tomography", "darcy"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if (self.sigma is None) == (self.sigma_percent is None):
            raise ConfigError("exactly one of sigma / sigma_percent is required")
        for name in ("h_fine", "h_init", "h_min", "h_max", "eta",
                     "theta_star1", "theta_change_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.inflation < 0.0:
            # 0 disables the first-iteration noise inflation
            raise ConfigError("inflation must be nonnegative")
        if self.sigma is not None and self.sigma < 0.0:
            raise ConfigError("sigma must be nonnegative")
        if self.sigma_percent is not None and self.sigma_percent < 0.0:
            raise ConfigError("sigma_percent must be nonnegative")
        if not (self.h_min < self.h_max):
            raise ConfigError("need h_min < h_max")
        if self.alpha < 1.0:
            raise ConfigError("anisotropy ratio alpha must be >= 1")
        if self.outer_iterations < 1:
            raise ConfigError("outer_iterations must be >= 1")
        if self.ias_max_outer < 1 or self.cgls_max_iter < 1:
            raise ConfigError("iteration limits must be >= 1")
        if self.num_views < 1 or self.rays_per_view < 1 or self.grid_n < 1:
            raise ConfigError("geometry counts must be >= 1")
        if self.source_radius <= 1.0:
            raise ConfigError("source radius must exceed the unit disc")

    @property
    def domain_shape(self) -> str:
        return "unit-disc" if self.problem == "tomography" else "unit-square"

    def resolved_phantom(self) -> Phantom:
        if self.phantom is not None:
            return self.phantom
        return (tomography_phantom() if self.problem == "tomography"
                else darcy_phantom())

    def with_overrides(self, seed=None, alpha=None) -> "ExperimentConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if alpha is not None:
            out = replace(out, alpha=float(alpha))
        return out


_SECTION_KEYS = {
    "problem": {"kind"},
    "geometry": {"num_views", "rays_per_view", "source_radius", "grid_n"},
    "phantom": {"background", "disc", "kite", "rect"},
    "noise": {"sigma", "sigma_percent", "seed"},
    "mesh": {"h_fine", "h_init", "h_min", "h_max", "alpha"},
    "ias": {"eta", "theta_star1", "r2", "theta_change_tol", "max_outer",
            "cgls_max_iter", "sensitivity_scaling", "run_phase_two"},
    "pipeline": {"inflation", "outer_iterations"},
}

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _floats(text, n, what):
    parts = text.split()
    if len(parts) != n:
        raise ConfigError(f"{what} expects {n} numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"invalid number in {what}: {text!r}") from exc


def _parse_phantom(section) -> Phantom:
    background = 0.0
    inclusions = []
    for key, value in section.items():
        if key == "background":
            background = float(value)
        elif key == "disc":
            cx, cy, r, val = _floats(value, 4, "disc inclusion")
            inclusions.append(DiscInclusion(center=(cx, cy), radius=r,
                                            value=val))
        elif key == "kite":
            cx, cy, s, val = _floats(value, 4, "kite inclusion")
            inclusions.append(KiteInclusion(center=(cx, cy), scale=s,
                                            value=val))
        elif key == "rect":
            x0, y0, x1, y1, val = _floats(value, 5, "rect inclusion")
            inclusions.append(RectInclusion(lower=(x0, y0), upper=(x1, y1),
                                            value=val))
    return Phantom(inclusions=inclusions, background=background)


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config file into an ExperimentConfig."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    kwargs = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTION_KEYS[section]
        for key in parser[section]:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
        sec = parser[section]
        try:
            if section == "problem":
                if "kind" in sec:
                    kwargs["problem"] = sec["kind"].strip()
            elif section == "geometry":
                for key, attr in (("num_views", "num_views"),
                                  ("rays_per_view", "rays_per_view"),
                                  ("grid_n", "grid_n")):
                    if key in sec:
                        kwargs[attr] = int(sec[key])
                if "source_radius" in sec:
                    kwargs["source_radius"] = float(sec["source_radius"])
            elif section == "phantom":
                kwargs["phantom"] = _parse_phantom(sec)
            elif section == "noise":
                if "sigma" in sec:
                    kwargs["sigma"] = float(sec["sigma"])
                if "sigma_percent" in sec:
                    kwargs["sigma_percent"] = float(sec["sigma_percent"])
                if "seed" in sec:
                    kwargs["seed"] = int(sec["seed"])
            elif section == "mesh":
                for key in ("h_fine", "h_init", "h_min", "h_max", "alpha"):
                    if key in sec:
                        kwargs[key] = float(sec[key])
            elif section == "ias":
                for key, attr in (("eta", "eta"),
                                  ("theta_star1", "theta_star1"),
                                  ("r2", "r2"),
                                  ("theta_change_tol", "theta_change_tol")):
                    if key in sec:
                        kwargs[attr] = float(sec[key])
                if "max_outer" in sec:
                    kwargs["ias_max_outer"] = int(sec["max_outer"])
                if "cgls_max_iter" in sec:
                    kwargs["cgls_max_iter"] = int(sec["cgls_max_iter"])
                for key in ("sensitivity_scaling", "run_phase_two"):
                    if key in sec:
                        flag = _BOOL.get(sec[key].strip().lower())
                        if flag is None:
                            raise ConfigError(
                                f"invalid boolean for {key}: {sec[key]!r}")
                        kwargs[key] = flag
            elif section == "pipeline":
                if "inflation" in sec:
                    kwargs["inflation"] = float(sec["inflation"])
                if "outer_iterations" in sec:
                    kwargs["outer_iterations"] = int(sec["outer_iterations"])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(
                f"invalid value in section [{section}]: {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_config(config: ExperimentConfig, path) -> None:
    """Write a config file that load_config parses back to the same values."""
    parser = configparser.ConfigParser()
    parser["problem"] = {"kind": config.problem}
    if config.problem == "tomography":
        parser["geometry"] = {"num_views": str(config.num_views),
                              "rays_per_view": str(config.rays_per_view),
                              "source_radius": repr(config.source_radius)}
    else:
        parser["geometry"] = {"grid_n": str(config.grid_n)}
    noise = {"seed": str(config.seed)}
    if config.sigma is not None:
        noise["sigma"] = repr(config.sigma)
    else:
        noise["sigma_percent"] = repr(config.sigma_percent)
    parser["noise"] = noise
    parser["mesh"] = {k: repr(getattr(config, k))
                      for k in ("h_fine", "h_init", "h_min", "h_max", "alpha")}
    parser["ias"] = {"eta": repr(config.eta),
                     "theta_star1": repr(config.theta_star1),
                     "r2": repr(config.r2),
                     "theta_change_tol": repr(config.theta_change_tol),
                     "max_outer": str(config.ias_max_outer),
                     "cgls_max_iter": str(config.cgls_max_iter),
                     "sensitivity_scaling": str(config.sensitivity_scaling),
                     "run_phase_two": str(config.run_phase_two)}
    parser["pipeline"] = {"inflation": repr(config.inflation),
                          "outer_iterations": str(config.outer_iterations)}
    if config.phantom is not None:
        raise ConfigError("custom phantom serialization is not supported; "
                          "write the [phantom] section by hand")
    with open(path, "w") as f:
        parser.write(f)
