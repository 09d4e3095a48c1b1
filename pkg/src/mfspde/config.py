"""Run configuration: a TOML file with sections grid, time, noise, model,
control, solver, backward and output.  Every field has a default so an
empty file is a valid desk configuration."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from .adjoint import BackwardGenerator
from .coefficients import heat_coefficients, linear_test_coefficients
from .discretization import assemble_operator_L, build_spatial_grid
from .forward import ControlField, ForwardProblem
from .harvesting import HarvestingProblem
from .meanfield import operator_from_config
from .noise import LevyMeasure, TimeGrid, sample_noise
from .regression import RegressionSpec

PRESETS = ("harvesting", "linear_test", "heat")

DEFAULTS: dict = {
    "grid": {"x_min": 0.0, "x_max": 1.0, "n_interior": 19},
    "time": {"T": 1.0, "n_steps": 100},
    "noise": {"marks": [-0.3, 0.5], "intensities": [1.0, 1.0], "master_seed": 2024, "n_scenarios": 2000},
    "model": {
        "preset": "harvesting",
        "kappa": 0.5,
        "y0": 1.0,  # number or "sine"
        "params": {},
        "F": {"type": "expectation"},
        "G": {"type": "expectation"},
    },
    "control": {"mode": "constant", "value": 1.0, "u_min": 1e-3, "u_max": 50.0, "delay": 0.0},
    "solver": {
        "degree": 3,
        "ridge": 1e-8,
        "neighbors": False,
        "transform": "auto",  # log-state features for harvesting, identity otherwise
        "omega": 0.5,
        "tol_fp": 1e-3,
        "max_outer": 30,
        "picard_iters": 6,
        "n_challengers": 20,
        "ascent_steps": 5,
        "ascent_eta": 0.002,
    },
    "backward": {
        "f0": 0.0, "c_y": 0.5, "c_h": 1.0, "c_z": 0.1, "c_j": 0.5, "c_u": 0.1, "c_k": 0.5,
        "H": {"type": "expectation"}, "J": {"type": "scaled", "c": 1.0}, "K": {"type": "expectation"},
        "weight": 1.0,
    },
    "output": {"dir": "results", "formats": ["csv", "json"]},
}

HARVEST_PARAMS = {"b": 0.5, "sigma": 0.2, "theta": 1.0, "alpha": 1.0}
LINEAR_PARAMS = (
    "a_y", "a_ybar", "a_u", "b_0", "s_y", "s_ybar", "s_u", "j_y", "j_u", "f_u", "f_yy", "f_y", "g_y", "g_ybar",
)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict) and k not in ("params", "F", "G", "H", "J", "K"):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(d: dict, section: str, key: str, kind=float):
    try:
        v = d[section][key]
        if isinstance(v, bool):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", f"expected {kind.__name__}, got {d[section][key]!r}") from None


def _backward_op(spec):
    """``{type = "none"}`` (or None) switches a backward mean-field term off."""
    if spec is None or (isinstance(spec, dict) and spec.get("type") == "none"):
        return None
    return operator_from_config(spec)


@dataclass
class RunConfig:
    data: dict
    source: str = "<defaults>"

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ loading
    @classmethod
    def from_dict(cls, raw: dict, source: str = "<dict>") -> RunConfig:
        return cls(_merge(DEFAULTS, raw or {}), source)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"cannot read config file {str(p)!r}")
        try:
            raw = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError("config", f"{p}: {exc}") from None
        return cls.from_dict(raw, str(p))

    def echo(self) -> dict:
        return copy.deepcopy(self.data)

    def with_seed(self, seed: int) -> RunConfig:
        d = self.echo()
        d["noise"]["master_seed"] = int(seed)
        return RunConfig(d, self.source)

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.data == other.data

    # ------------------------------------------------------------ validation
    def validate(self) -> None:
        d = self.data
        x0, x1 = _num(d, "grid", "x_min"), _num(d, "grid", "x_max")
        if not x0 < x1:
            raise ConfigError("grid.x_max", "must exceed grid.x_min")
        if _num(d, "grid", "n_interior", int) < 1:
            raise ConfigError("grid.n_interior", "must be >= 1")
        if not _num(d, "time", "T") > 0:
            raise ConfigError("time.T", "must be > 0")
        if _num(d, "time", "n_steps", int) < 1:
            raise ConfigError("time.n_steps", "must be >= 1")
        if _num(d, "noise", "n_scenarios", int) < 1:
            raise ConfigError("noise.n_scenarios", "must be >= 1")
        _num(d, "noise", "master_seed", int)
        marks, nus = d["noise"]["marks"], d["noise"]["intensities"]
        if not isinstance(marks, list) or not isinstance(nus, list) or len(marks) != len(nus):
            raise ConfigError("noise.marks", "marks and intensities must be lists of equal length")
        try:
            LevyMeasure(tuple(float(m) for m in marks), tuple(float(v) for v in nus))
        except (TypeError, ValueError) as exc:
            raise ConfigError("noise.marks", str(exc)) from None
        preset = d["model"]["preset"]
        if preset not in PRESETS:
            raise ConfigError("model.preset", f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        allowed = HARVEST_PARAMS if preset == "harvesting" else (LINEAR_PARAMS if preset == "linear_test" else ())
        for k in d["model"]["params"]:
            if k not in allowed:
                raise ConfigError(f"model.params.{k}", f"not a parameter of preset {preset!r}")
        if _num(d, "model", "kappa") < 0:
            raise ConfigError("model.kappa", "must be >= 0")
        y0 = d["model"]["y0"]
        if not (y0 == "sine" or isinstance(y0, (int, float)) and not isinstance(y0, bool)):
            raise ConfigError("model.y0", "expected a number or 'sine'")
        for op in ("F", "G"):
            try:
                operator_from_config(d["model"][op])
            except (ValueError, AttributeError) as exc:
                raise ConfigError(f"model.{op}", str(exc)) from None
        for op in ("H", "J", "K"):
            try:
                _backward_op(d["backward"][op])
            except (ValueError, AttributeError) as exc:
                raise ConfigError(f"backward.{op}", str(exc)) from None
        if d["control"]["mode"] != "constant":
            raise ConfigError("control.mode", "only 'constant' start controls are supported")
        lo, hi = _num(d, "control", "u_min"), _num(d, "control", "u_max")
        if not lo < hi:
            raise ConfigError("control.u_max", "must exceed control.u_min")
        if not lo <= _num(d, "control", "value") <= hi:
            raise ConfigError("control.value", "outside [u_min, u_max]")
        if _num(d, "control", "delay") < 0:
            raise ConfigError("control.delay", "must be >= 0")
        if _num(d, "solver", "degree", int) < 0:
            raise ConfigError("solver.degree", "must be >= 0")
        if d["solver"]["transform"] not in ("auto", "identity", "log"):
            raise ConfigError("solver.transform", "expected 'auto', 'identity' or 'log'")
        if _num(d, "solver", "ridge") < 0:
            raise ConfigError("solver.ridge", "must be >= 0")
        if not 0 < _num(d, "solver", "omega") <= 1:
            raise ConfigError("solver.omega", "must lie in (0, 1]")
        if _num(d, "solver", "tol_fp") < 0:
            raise ConfigError("solver.tol_fp", "must be >= 0")
        if _num(d, "solver", "max_outer", int) < 1:
            raise ConfigError("solver.max_outer", "must be >= 1")
        if _num(d, "solver", "picard_iters", int) < 2:
            raise ConfigError("solver.picard_iters", "must be >= 2")
        if _num(d, "solver", "ascent_eta") < 0:
            raise ConfigError("solver.ascent_eta", "must be >= 0")
        if preset == "harvesting":
            try:
                self.harvesting_problem()
            except ValueError as exc:
                raise ConfigError("model.params", str(exc)) from None

    # ------------------------------------------------------------ builders
    @property
    def levy(self) -> LevyMeasure:
        n = self.data["noise"]
        return LevyMeasure(tuple(float(m) for m in n["marks"]), tuple(float(v) for v in n["intensities"]))

    @property
    def grid(self):
        g = self.data["grid"]
        return build_spatial_grid(float(g["x_min"]), float(g["x_max"]), int(g["n_interior"]))

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(float(self.data["time"]["T"]), int(self.data["time"]["n_steps"]))

    @property
    def seed(self) -> int:
        return int(self.data["noise"]["master_seed"])

    @property
    def regression(self) -> RegressionSpec:
        s = self.data["solver"]
        tr = s["transform"]
        if tr == "auto":
            tr = "log" if self.data["model"]["preset"] == "harvesting" else "identity"
        return RegressionSpec(int(s["degree"]), float(s["ridge"]), bool(s["neighbors"]), transform=tr)

    def y0(self, x: np.ndarray) -> np.ndarray:
        v = self.data["model"]["y0"]
        if v == "sine":
            g = self.data["grid"]
            return np.sin(np.pi * (x - g["x_min"]) / (g["x_max"] - g["x_min"]))
        return np.full(x.shape, float(v))

    def harvesting_problem(self) -> HarvestingProblem:
        g, t, n, m, c = (self.data[k] for k in ("grid", "time", "noise", "model", "control"))
        p = dict(HARVEST_PARAMS, **m["params"])
        y0 = m["y0"]
        if y0 == "sine":
            y0 = self.y0
        return HarvestingProblem(
            b=float(p["b"]), sigma=float(p["sigma"]), theta=float(p["theta"]), alpha=float(p["alpha"]),
            y0=y0, x_min=float(g["x_min"]), x_max=float(g["x_max"]), n_interior=int(g["n_interior"]),
            T=float(t["T"]), n_steps=int(t["n_steps"]), levy=self.levy, n_scenarios=int(n["n_scenarios"]),
            seed=self.seed, u_min=float(c["u_min"]), u_max=float(c["u_max"]), kappa=float(m["kappa"]),
        )

    def forward_problem(self, workers: int = 1) -> ForwardProblem:
        m = self.data["model"]
        if m["preset"] == "harvesting":
            hp = self.harvesting_problem()
            coeffs = hp.coefficients()
        elif m["preset"] == "linear_test":
            coeffs = linear_test_coefficients(**{k: float(v) for k, v in m["params"].items()})
        else:
            coeffs = heat_coefficients()
        grid = self.grid
        noise = sample_noise(self.time_grid, self.levy, int(self.data["noise"]["n_scenarios"]), self.seed,
                             workers=workers)
        return ForwardProblem(
            grid, assemble_operator_L(grid, float(m["kappa"])), self.time_grid, coeffs, noise,
            self.y0(grid.nodes), F=operator_from_config(m["F"]), G=operator_from_config(m["G"]),
        )

    def control(self) -> ControlField:
        c = self.data["control"]
        return ControlField.constant(float(c["value"]), self.time_grid.n_steps, self.grid.n_interior,
                                     float(c["u_min"]), float(c["u_max"]))

    def backward_generator(self) -> BackwardGenerator:
        b = self.data["backward"]
        ops = {k: _backward_op(b[k]) for k in ("H", "J", "K")}
        return BackwardGenerator(**{k: float(b[k]) for k in ("f0", "c_y", "c_h", "c_z", "c_j", "c_u", "c_k")}, **ops)
