"""Experiment configuration: flat ``key = value`` text with ``#`` comments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .errors import ParamError, ParseError, ValidationError
from .geometry import ScalingParams, validate_params
from .rng import parse_seed

__all__ = ["EXPERIMENTS", "PROCESSES", "PHI_KINDS", "ExperimentConfig", "parse_config", "parse_pairs",
           "build_config", "format_config"]

EXPERIMENTS = ("free-path", "marginals", "loops", "chaos", "oracle", "coupling", "simulate")
PROCESSES = ("lorentz", "markovian", "boltzmann")
PHI_KINDS = ("uniform-disk", "smooth-bump")

DEFAULTS = {
    "process": "markovian",
    "phi": "smooth-bump",
    "rate": "2",
    "t_max": "1",
    "n_paths": "1000",
    "start_window": "-0.5, -0.5, 0.5, 0.5",
    "grid": "32, 32, 32",
    "out_dir": "out",
}
REQUIRED = ("experiment", "epsilon", "nu", "seed")
KEYS = REQUIRED + tuple(DEFAULTS) + ("n_pairs",)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    process: str
    epsilon: float
    nu: float
    phi: str
    rate: float
    t_max: float
    n_paths: int
    seed: int
    start_window: tuple
    grid: tuple
    out_dir: str

    @property
    def params(self) -> ScalingParams:
        return ScalingParams(self.epsilon, self.nu)

    def resolved(self) -> dict:
        """Every setting that influences results (the output location does not)."""
        d = asdict(self)
        d.pop("out_dir")
        d["start_window"] = list(self.start_window)
        d["grid"] = list(self.grid)
        return d


def parse_pairs(text: str) -> dict:
    """Split the document into {key: (value, line, column)}; syntax errors only."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise ParseError(f"expected 'key = value', got {line.strip()!r}", lineno, col)
        key_part, value = line.split("=", 1)
        key = key_part.strip()
        col = len(key_part) - len(key_part.lstrip()) + 1
        if not key:
            raise ParseError("missing key before '='", lineno, col)
        if key not in KEYS:
            raise ParseError(f"unknown key {key!r}", lineno, col)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno, col)
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key] = (value, lineno, col)
    return out


def _floats(text, n):
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return tuple(float(p) for p in parts)


def build_config(values: dict) -> ExperimentConfig:
    """Validate raw string values, collecting every problem before raising."""
    raw = dict(DEFAULTS)
    raw.update({k: str(v) for k, v in values.items() if v is not None})
    if "n_pairs" in raw:
        raw["n_paths"] = raw.pop("n_pairs")
    problems = []
    for key in REQUIRED:
        if key not in raw or raw[key] == "":
            problems.append(f"missing required key {key!r}")

    def num(key, conv):
        try:
            return conv(raw[key])
        except (KeyError, ValueError, TypeError):
            if key in raw:
                problems.append(f"{key}: cannot parse {raw[key]!r}")
            return None

    experiment = raw.get("experiment")
    if experiment is not None and experiment not in EXPERIMENTS:
        problems.append(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")
    process = raw["process"]
    if process not in PROCESSES:
        problems.append(f"process must be one of {', '.join(PROCESSES)}; got {process!r}")
    phi = raw["phi"]
    if phi not in PHI_KINDS:
        problems.append(f"phi must be one of {', '.join(PHI_KINDS)}; got {phi!r}")
    epsilon = num("epsilon", float)
    nu = num("nu", float)
    if epsilon is not None and nu is not None:
        try:
            validate_params(epsilon, nu)
        except ParamError as exc:
            problems.append(f"{type(exc).__name__}: {exc}")
    rate = num("rate", float)
    if rate is not None and not (math.isfinite(rate) and rate > 0):
        problems.append("rate must be positive")
    t_max = num("t_max", float)
    if t_max is not None and not (math.isfinite(t_max) and t_max > 0):
        problems.append("t_max must be positive")
    n_paths = num("n_paths", int)
    if n_paths is not None and n_paths < 1:
        problems.append("n_paths must be >= 1")
    seed = None
    if "seed" in raw:
        try:
            seed = parse_seed(raw["seed"])
        except ValueError as exc:
            problems.append(f"seed: {exc}")
    window = num("start_window", lambda s: _floats(s, 4))
    if window is not None and not (window[0] < window[2] and window[1] < window[3]):
        problems.append("start_window must be x_min, y_min, x_max, y_max with min < max")
    grid = num("grid", lambda s: tuple(int(v) for v in _floats(s, 3)))
    if grid is not None and min(grid) < 1:
        problems.append("grid counts must be >= 1")
    if experiment == "chaos" and process == "boltzmann":
        problems.append("chaos needs process lorentz or markovian")
    if experiment == "coupling" and process == "boltzmann":
        problems.append("coupling compares lorentz and markovian runs; process must not be boltzmann")
    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(experiment, process, epsilon, nu, phi, rate, t_max, n_paths, seed, window, grid,
                            raw["out_dir"])


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a configuration document; ``overrides`` win over file values."""
    pairs = {k: v[0] for k, v in parse_pairs(text).items()}
    if overrides:
        pairs.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(pairs)


def format_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (round-trips every field)."""
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
