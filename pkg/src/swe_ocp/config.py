"""Sectioned plain-text configuration.

Format: INI-style `key = value` under [mesh], [time], [physics], [pod],
[solver], [paths].  Every key has a default; unknown sections or keys are
rejected so typos fail loudly.  An empty (or absent [section]) file yields
the reference setup: parameter box (1e-5,1)x(0.01,0.5)x(0.1,1), T = 0.8,
nt = 8, alpha = 0.1, N_max = 100, N = 30, on the 15x15 default mesh.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .geometry import ConfigurationError, MeshConfig

ENV_WORKDIR = "SWE_OCP_WORKDIR"

_SCHEMA = {
    "mesh": {"x_min": float, "x_max": float, "y_min": float, "y_max": float,
             "nx": int, "ny": int},
    "time": {"t_final": float, "nt": int},
    "physics": {"g": float, "alpha": float,
                "mu1_min": float, "mu1_max": float,
                "mu2_min": float, "mu2_max": float,
                "mu3_min": float, "mu3_max": float},
    "pod": {"n_max": int, "n": int, "seed": int, "cutoff": float},
    "solver": {"tol_abs": float, "tol_rel": float, "max_iter": int},
    "paths": {"workdir": str},
}


@dataclass
class Config:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    t_final: float = 0.8
    nt: int = 8
    g: float = 9.81
    alpha: float = 0.1
    box: tuple = ((1e-5, 1.0), (0.01, 0.5), (0.1, 1.0))
    n_max: int = 100
    n: int = 30
    seed: int = 0
    cutoff: float = 1e-12
    tol_abs: float = 1e-10
    tol_rel: float = 1e-8
    max_iter: int = 20
    workdir: str | None = None

    def validate(self) -> None:
        self.mesh.validate()
        if self.t_final <= 0 or self.nt < 1:
            raise ConfigurationError("time block requires t_final > 0 and nt >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha = {self.alpha} outside (0, 1]")
        if self.g <= 0:
            raise ConfigurationError("g must be positive")
        for i, (lo, hi) in enumerate(self.box, start=1):
            if not (lo < hi):
                raise ConfigurationError(f"mu{i} range ({lo}, {hi}) is empty")
        if self.n_max < 1 or self.n < 1:
            raise ConfigurationError("pod block requires n_max >= 1 and n >= 1")
        if self.n > self.n_max:
            raise ConfigurationError(f"n = {self.n} exceeds n_max = {self.n_max}")
        if self.cutoff <= 0 or self.cutoff >= 1:
            raise ConfigurationError("cutoff must lie in (0, 1)")
        if self.tol_abs < 0 or self.tol_rel < 0 or self.max_iter < 1:
            raise ConfigurationError("solver tolerances must be >= 0, max_iter >= 1")

    def resolve_workdir(self) -> str:
        if self.workdir:
            return self.workdir
        return os.environ.get(ENV_WORKDIR, ".")


def parse_config(path: str | None) -> Config:
    """Read a config file (None means all defaults) into a validated Config."""
    cfg = Config()
    if path is None:
        cfg.validate()
        return cfg
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigurationError(f"config parse error: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            conv = _SCHEMA[section][key]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigurationError(
                    f"bad value for {section}.{key}: {raw!r}") from exc

    mesh_kwargs = {f.name: values.get("mesh", {}).get(f.name, getattr(cfg.mesh, f.name))
                   for f in fields(MeshConfig)}
    cfg.mesh = MeshConfig(**mesh_kwargs)
    t = values.get("time", {})
    cfg.t_final = t.get("t_final", cfg.t_final)
    cfg.nt = t.get("nt", cfg.nt)
    ph = values.get("physics", {})
    cfg.g = ph.get("g", cfg.g)
    cfg.alpha = ph.get("alpha", cfg.alpha)
    box = list(list(b) for b in cfg.box)
    for i in range(3):
        box[i][0] = ph.get(f"mu{i + 1}_min", box[i][0])
        box[i][1] = ph.get(f"mu{i + 1}_max", box[i][1])
    cfg.box = tuple(tuple(b) for b in box)
    pd = values.get("pod", {})
    cfg.n_max = pd.get("n_max", cfg.n_max)
    cfg.n = pd.get("n", cfg.n)
    cfg.seed = pd.get("seed", cfg.seed)
    cfg.cutoff = pd.get("cutoff", cfg.cutoff)
    sv = values.get("solver", {})
    cfg.tol_abs = sv.get("tol_abs", cfg.tol_abs)
    cfg.tol_rel = sv.get("tol_rel", cfg.tol_rel)
    cfg.max_iter = sv.get("max_iter", cfg.max_iter)
    cfg.workdir = values.get("paths", {}).get("workdir", cfg.workdir)
    cfg.validate()
    return cfg


def config_text(cfg: Config) -> str:
    """Canonical text rendering, used for provenance hashing."""
    lines = []
    m = cfg.mesh
    lines.append(f"mesh {m.x_min} {m.x_max} {m.y_min} {m.y_max} {m.nx} {m.ny}")
    lines.append(f"time {cfg.t_final} {cfg.nt}")
    lines.append(f"physics {cfg.g} {cfg.alpha} {cfg.box}")
    lines.append(f"pod {cfg.n_max} {cfg.n} {cfg.seed} {cfg.cutoff}")
    lines.append(f"solver {cfg.tol_abs} {cfg.tol_rel} {cfg.max_iter}")
    return "\n".join(lines)
