"""Experiment configuration files (TOML).

A configuration names one experiment ``kind`` and carries the blocks that
kind needs::

    kind = "ode-sweep"
    output = "runs/fig4b"

    [reduced]
    p11 = 1.0
    ...

    [experiment]
    layout = "square"
    n = 32

For ODE kinds the structural conditions on the reduced coefficients are
checked; ``require_s6 = false`` downgrades the strong-forcing condition S6 to
a warning (the shipped unit coefficient set does not satisfy it).

Every block is validated against a fixed schema: unknown keys are rejected,
missing keys get the defaults listed in ``SCHEMA`` and the filled-in config is
what gets echoed into run manifests.  Serialising a parsed config and parsing
it again gives an identical object.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .models import Fhn3Params, Gs3Params
from .reduced import ReducedParams

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "load_config", "KINDS", "SCHEMA"]

KINDS = (
    "pde-run", "pde-collide", "pde-sweep", "branch", "spectrum", "dh-locate",
    "ode-run", "ode-sweep", "ode-critical",
)
PDE_KINDS = KINDS[:6]
ODE_KINDS = KINDS[6:]

_FHN = {k: float(v) for k, v in Fhn3Params().__dict__.items()}
_GS = {k: float(v) for k, v in Gs3Params().__dict__.items()}
_RED = {k: float(v) for k, v in ReducedParams().__dict__.items()}

_GRID = {"length": 0.25, "width": 0.0, "dx": 5e-4, "bc": "periodic"}
_TIME = {"dt": 0.05, "horizon": 0.0, "sample_dt": 0.0}

# experiment blocks per kind; a value of None means "required"
_EXPERIMENT: dict[str, dict[str, Any]] = {
    "pde-run": {"initial": "pulse", "amplitude": 0.0, "frame_every": 0.0, "settle": 0.0, "kick_cells": 0},
    "pde-collide": {"h0": 2.0, "length": 4.0, "frame_every": 0.0},
    "pde-sweep": {
        "x_name": "k4", "x_values": None, "y_name": "tau", "y_values": None,
        "h0": 2.0, "length": 4.0, "workers": 1,
    },
    "branch": {
        "kind": "standing", "param": "k4", "stop": None, "ds": 1e-3, "max_steps": 400,
        "c_guess": 0.0, "spectra": True,
    },
    "spectrum": {"kind": "standing", "c_guess": 0.0, "n": 8, "omega_guess": 0.19, "constants": False},
    "dh-locate": {"k4_range": [2.93, 3.0], "tau_range": [1150.0, 1300.0], "guess": []},
    "ode-run": {"initial": [], "horizon": 0.0},
    "ode-sweep": {
        "layout": "square", "n": 32, "radius": 0.001, "mu1_range": [-0.01, 0.01],
        "mu2_range": [-0.01, 0.01],
    },
    "ode-critical": {"mu1_values": [-1e-3, -1e-4, -1e-5], "tol": 1e-10},
}

SCHEMA = {
    "top": {"kind": None, "output": "", "model": "fhn3"},
    "fhn3": _FHN,
    "gs3": _GS,
    "reduced": _RED,
    "grid": _GRID,
    "time": _TIME,
    "experiment": _EXPERIMENT,
}


class ConfigError(ValueError):
    """Parse or validation failure; ``line``/``column`` are set for syntax errors."""

    def __init__(self, msg: str, key: str | None = None, line: int | None = None,
                 column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{msg}{where}")
        self.key = key
        self.line = line
        self.column = column


@dataclass
class ExperimentConfig:
    """Validated experiment configuration with all defaults filled in.

    ``params`` holds the model parameter block (``fhn3``/``gs3``) for PDE
    kinds and the reduced-system block for ODE kinds.
    """

    kind: str
    output: str = ""
    model: str = "fhn3"
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    require_s6: bool = True

    @property
    def is_ode(self) -> bool:
        return self.kind in ODE_KINDS

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "output": self.output}
        if self.is_ode:
            d["require_s6"] = self.require_s6
            d["reduced"] = dict(self.params)
        else:
            d["model"] = self.model
            d[self.model] = dict(self.params)
            d["grid"] = dict(self.grid)
            d["time"] = dict(self.time)
        d["experiment"] = dict(self.experiment)
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def model_spec(self):
        cls = Fhn3Params if self.model == "fhn3" else Gs3Params
        return cls(**self.params).model()

    def reduced_params(self) -> ReducedParams:
        return ReducedParams(**self.params)


def _coerce(section: str, key: str, default, value):
    """Match the type of ``value`` to the schema default (ints promote to float)."""
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean", key=f"{section}.{key}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number", key=f"{section}.{key}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{section}.{key} must be finite", key=f"{section}.{key}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer", key=f"{section}.{key}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string", key=f"{section}.{key}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key} must be a list", key=f"{section}.{key}")
        return [float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value]
    return value


def _fill(section: str, schema: dict, given: Any) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"[{section}] must be a table", key=section)
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]}", key=f"{section}.{unknown[0]}")
    out = {}
    for k, default in schema.items():
        if k in given:
            out[k] = _coerce(section, k, default, given[k])
        elif default is None:
            raise ConfigError(f"missing required key {section}.{k}", key=f"{section}.{k}")
        else:
            out[k] = list(default) if isinstance(default, list) else default
    return out


def _check(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key}: {msg}", key=key)


def _validate(cfg: ExperimentConfig) -> None:
    e = cfg.experiment
    if cfg.is_ode:
        bad = ReducedParams(**cfg.params).violations()
        if not cfg.require_s6:
            bad = [b for b in bad if not b.startswith("S6")]
        if bad:
            raise ConfigError(f"reduced: {bad[0]}", key="reduced")
        if cfg.kind == "ode-sweep":
            _check(e["layout"] in ("square", "ring"), "experiment.layout", "must be 'square' or 'ring'")
            _check(e["n"] >= 1, "experiment.n", "must be positive")
            _check(e["radius"] > 0, "experiment.radius", "must be positive")
            for k in ("mu1_range", "mu2_range"):
                _check(len(e[k]) == 2 and e[k][0] < e[k][1], f"experiment.{k}", "must be [lo, hi] with lo < hi")
        if cfg.kind == "ode-critical":
            _check(len(e["mu1_values"]) > 0 and all(v < 0 for v in e["mu1_values"]),
                   "experiment.mu1_values", "must be a non-empty list of negative numbers")
            _check(e["tol"] > 0, "experiment.tol", "must be positive")
        if cfg.kind == "ode-run":
            _check(len(e["initial"]) in (0, 3), "experiment.initial", "must be empty or [v, A, s]")
        return
    g, t = cfg.grid, cfg.time
    _check(g["bc"] in ("neumann", "periodic"), "grid.bc", "must be 'neumann' or 'periodic'")
    _check(g["length"] > 0 and g["dx"] > 0, "grid", "length and dx must be positive")
    _check(g["width"] >= 0, "grid.width", "must be >= 0 (0 means one dimension)")
    _check(t["dt"] > 0, "time.dt", "must be positive")
    _check(t["horizon"] >= 0 and t["sample_dt"] >= 0, "time", "horizon and sample_dt must be >= 0")
    try:
        cfg.model_spec()
    except ValueError as exc:
        raise ConfigError(f"{cfg.model}: {exc}", key=cfg.model) from exc
    if cfg.kind == "pde-run":
        _check(e["initial"] in ("pulse", "uniform", "gaussian", "spot"), "experiment.initial",
               "must be one of pulse, uniform, gaussian, spot")
        _check(t["horizon"] > 0, "time.horizon", "must be positive for pde-run")
        _check(e["settle"] >= 0, "experiment.settle", "must be >= 0")
    if cfg.kind in ("pde-collide", "pde-sweep"):
        _check(e["h0"] > 0 and e["length"] > e["h0"], "experiment", "need 0 < h0 < length")
    if cfg.kind == "pde-sweep":
        for k in ("x_values", "y_values"):
            _check(len(e[k]) > 0, f"experiment.{k}", "must be non-empty")
        _check(e["workers"] >= 1, "experiment.workers", "must be >= 1")
    if cfg.kind in ("branch", "spectrum"):
        _check(e["kind"] in ("standing", "traveling"), "experiment.kind", "must be standing or traveling")
    if cfg.kind == "dh-locate":
        _check(len(e["k4_range"]) == 2 and len(e["tau_range"]) == 2, "experiment", "ranges need two values")
        _check(len(e["guess"]) in (0, 2), "experiment.guess", "must be empty or [k4, tau]")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate TOML text.

    Raises :class:`ConfigError` with line and column for syntax errors and
    with the offending key for validation errors.
    """
    if not text.strip():
        raise ConfigError("empty configuration", line=1, column=1)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            mm = re.search(r"line (\d+), column (\d+)", str(exc))
            line, col = (int(mm.group(1)), int(mm.group(2))) if mm else (None, None)
        raise ConfigError(f"parse error: {exc}", line=line, column=col) from exc
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}; got {kind!r}", key="kind")
    is_ode = kind in ODE_KINDS
    model = raw.get("model", "fhn3")
    if not is_ode and model not in ("fhn3", "gs3"):
        raise ConfigError(f"model must be 'fhn3' or 'gs3'; got {model!r}", key="model")
    allowed = {"kind", "output", "experiment"} | ({"reduced", "require_s6"} if is_ode else {"model", model, "grid", "time"})
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} for kind {kind}", key=unknown[0])
    output = raw.get("output", "")
    if not isinstance(output, str):
        raise ConfigError("output must be a string", key="output")
    exp = _fill("experiment", _EXPERIMENT[kind], raw.get("experiment"))
    if is_ode:
        s6 = raw.get("require_s6", True)
        if not isinstance(s6, bool):
            raise ConfigError("require_s6 must be a boolean", key="require_s6")
        cfg = ExperimentConfig(kind, output, "reduced", _fill("reduced", _RED, raw.get("reduced")),
                               {}, {}, exp, s6)
    else:
        cfg = ExperimentConfig(
            kind, output, model, _fill(model, SCHEMA[model], raw.get(model)),
            _fill("grid", _GRID, raw.get("grid")), _fill("time", _TIME, raw.get("time")), exp,
        )
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
