"""Study configuration and its INI-style file format.

A config file holds flat ``key = value`` lines under optional ``[section]``
headers; sections only group keys, every key maps onto one
:class:`StudyConfig` field. List values are comma separated.

Example::

    [study]
    command = conv-time
    problem = radial
    schemes = BDF2, TPS

    [mesh]
    level = 2
    pattern = crisscross
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
import re
from dataclasses import dataclass, field

from .integrators import SCHEMES
from .linsolve import LinearSolveConfig, _METHODS
from .problems import PROBLEMS

__all__ = ["ConfigError", "StudyConfig", "TauRule", "load_config", "COMMANDS"]

COMMANDS = ("run", "conv-time", "conv-space", "constraint", "cfl")


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class TauRule:
    """``tau = c * h**a``."""

    c: float
    a: float = 1.0

    _PATTERN = re.compile(
        r"^\s*(?P<c>[-+0-9.eE]+)?\s*\*?\s*h\s*(?:(?:\^|\*\*)\s*(?P<a>[-+0-9.eE]+))?\s*(?:/\s*(?P<d>[-+0-9.eE]+))?\s*$"
    )

    @classmethod
    def parse(cls, text: str) -> "TauRule":
        """Accepts ``h``, ``h/10``, ``0.1*h``, ``h^2/10``, ``0.5*h**1.5``."""
        match = cls._PATTERN.match(text)
        if not match:
            raise ConfigError(f"cannot parse tau rule {text!r}; expected e.g. 'h/10' or '0.1*h^2'")
        c = float(match["c"]) if match["c"] else 1.0
        a = float(match["a"]) if match["a"] else 1.0
        if match["d"]:
            c /= float(match["d"])
        if not c > 0:
            raise ConfigError("tau rule coefficient must be positive")
        return cls(c, a)

    def __call__(self, h: float) -> float:
        return self.c * h**self.a

    def __str__(self):
        return f"{self.c!r}*h^{self.a!r}"


@dataclass(frozen=True)
class StudyConfig:
    """Everything one CLI command needs.

    ``None`` entries fall back to the command's defaults (see
    :mod:`llgfem.experiments`). ``seed`` is accepted for forward
    compatibility; the solver core is deterministic.
    """

    command: str = "run"
    problem: str = "radial"
    schemes: tuple = ("BDF2",)
    level: int | None = None
    levels: tuple | None = None
    pattern: str | None = None
    taus: tuple | None = None
    tau_rules: tuple | None = None
    steps: int | None = None
    alpha: float | None = None
    lambda_sq: float | None = None
    final_time: float | None = None
    out: str = "results"
    jobs: int = 1
    full: bool = False
    seed: int = 0
    solver: str = "auto"
    solver_tol: float = 1e-10
    solver_maxit: int | None = None
    tps_field: str = "next"
    time_grid: str | None = None
    fp_tolerance: float = 1e-10
    fp_max_iterations: int = 200
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ConfigError(f"schemes must be a nonempty subset of {SCHEMES}")
        if self.level is not None and self.level < 0:
            raise ConfigError("level must be >= 0")
        if self.levels is not None and (not self.levels or min(self.levels) < 0):
            raise ConfigError("levels must be a nonempty list of integers >= 0")
        if self.pattern not in (None, "diagonal", "crisscross"):
            raise ConfigError("pattern must be 'diagonal' or 'crisscross'")
        if self.taus is not None and (not self.taus or any(not (t > 0 and math.isfinite(t)) for t in self.taus)):
            raise ConfigError("tau ladder must be nonempty with positive entries")
        if self.tau_rules is not None and not self.tau_rules:
            raise ConfigError("tau rule list must be nonempty")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be >= 1")
        for name in ("alpha", "lambda_sq", "final_time"):
            val = getattr(self, name)
            if val is not None and not (val > 0 and math.isfinite(val)):
                raise ConfigError(f"{name} must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.solver not in _METHODS:
            raise ConfigError(f"solver must be one of {_METHODS}")
        if not 0.0 < self.solver_tol < 1.0:
            raise ConfigError("solver tolerance must lie in (0, 1)")
        if self.solver_maxit is not None and self.solver_maxit < 1:
            raise ConfigError("solver max iterations must be >= 1")
        if self.tps_field not in ("next", "current"):
            raise ConfigError("tps_field must be 'next' or 'current'")
        if self.time_grid not in (None, "fit", "truncate", "nearest"):
            raise ConfigError("time_grid must be 'fit', 'truncate' or 'nearest'")
        if not 0.0 < self.fp_tolerance < 1.0 or self.fp_max_iterations < 1:
            raise ConfigError("invalid fixed-point settings")

    def linear_config(self) -> LinearSolveConfig:
        return LinearSolveConfig(
            method=self.solver, rel_tolerance=self.solver_tol, max_iterations=self.solver_maxit
        )

    def check_output_dir(self) -> str:
        """Create the output directory and make sure it is writable."""
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out!r}: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out!r} is not writable")
        return self.out

    def replace(self, **changes) -> "StudyConfig":
        return dataclasses.replace(self, **changes)


def _split(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)

    return parse


_PARSERS = {
    "command": str.strip,
    "problem": str.strip,
    "schemes": lambda s: tuple(x.upper() for x in _split(s)),
    "level": _optional(int),
    "levels": _optional(lambda s: tuple(int(x) for x in _split(s))),
    "pattern": _optional(str.strip),
    "taus": _optional(lambda s: tuple(float(x) for x in _split(s))),
    "tau_rules": _optional(lambda s: tuple(TauRule.parse(x) for x in _split(s))),
    "steps": _optional(int),
    "alpha": _optional(float),
    "lambda_sq": _optional(float),
    "final_time": _optional(float),
    "out": str.strip,
    "jobs": int,
    "full": _parse_bool,
    "seed": int,
    "solver": str.strip,
    "solver_tol": float,
    "solver_maxit": _optional(int),
    "tps_field": str.strip,
    "time_grid": _optional(str.strip),
    "fp_tolerance": float,
    "fp_max_iterations": int,
}

_ALIASES = {"scheme": "schemes", "tau": "taus", "tau_rule": "tau_rules", "lambda": "lambda_sq"}


def parse_values(raw: dict) -> dict:
    """Convert string values to :class:`StudyConfig` field values."""
    out = {}
    for key, text in raw.items():
        name = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if name not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[name] = _PARSERS[name](text)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return out


def load_config(path) -> dict:
    """Read a config file into a dict of :class:`StudyConfig` field values."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        with open(path) as fh:
            text = fh.read()
        # keys before the first header belong to an implicit section
        parser.read_string("[__top__]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in raw:
                raise ConfigError(f"key {key!r} given twice")
            raw[key] = value
    return parse_values(raw)
