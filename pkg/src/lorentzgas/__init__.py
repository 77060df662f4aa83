"""Lorentz gas with randomly displaced periodic scatterers in the low-density limit.

Simulators for the quenched and Markovian Lorentz processes and the
Boltzmann random flight, deterministic kinetic oracles, and the estimators
that compare them.
"""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import CellIndex, ScalingParams, cell_of, crossing_coordinates, validate_params  # noqa: F401
from .rng import ObstacleDensity, RealizationKey, derive_seed, offset_at  # noqa: F401
from .dynamics import (  # noqa: F401
    PhaseState,
    Trajectory,
    advance_boltzmann,
    advance_lorentz,
    advance_markovian,
    detect_loops,
    run_ensemble,
    run_pair,
)
