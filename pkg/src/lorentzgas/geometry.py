"""Two-scale lattice geometry.

Microscopic scale: unit lattice Z^2, obstacle radius sqrt(eps), obstacle
centres within eps**(1 - nu) of their lattice point.  Macroscopic scale is
the microscopic one shrunk by sqrt(eps), so the obstacle radius becomes eps.
Cells are unit squares centred on lattice points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoEntry, OutOfRange, RangeOverflow

__all__ = [
    "ScalingParams",
    "CellIndex",
    "CellCrossing",
    "SYMMETRIES",
    "validate_params",
    "cell_of",
    "cell_center",
    "to_macro",
    "to_micro",
    "canonical_symmetry",
    "apply_symmetry",
    "invert_symmetry",
    "crossing_coordinates",
    "restore_crossing",
    "row_crossings",
]


@dataclass(frozen=True)
class ScalingParams:
    """The pair (epsilon, nu) with every derived length.

    Use :func:`validate_params` to build one; the constructor does not check.
    """

    epsilon: float
    nu: float

    @property
    def sqrt_eps(self) -> float:
        return math.sqrt(self.epsilon)

    # microscopic lengths (lattice spacing 1)
    @property
    def obstacle_radius(self) -> float:
        return math.sqrt(self.epsilon)

    @property
    def patch_radius(self) -> float:
        return self.epsilon ** (1.0 - self.nu)

    @property
    def range_radius(self) -> float:
        return self.patch_radius + self.obstacle_radius

    # macroscopic lengths (lattice spacing sqrt(eps))
    @property
    def macro_spacing(self) -> float:
        return self.sqrt_eps

    @property
    def macro_obstacle_radius(self) -> float:
        return self.epsilon

    @property
    def macro_patch_radius(self) -> float:
        return self.epsilon ** (1.5 - self.nu)

    @property
    def macro_range_radius(self) -> float:
        return self.range_radius * self.sqrt_eps

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "nu": self.nu}


def validate_params(epsilon: float, nu: float) -> ScalingParams:
    """Check (epsilon, nu) and return the derived parameter set.

    Raises OutOfRange unless 0 < epsilon < 1 and 1/2 < nu < 1, and
    RangeOverflow when the obstacle range eps**(1-nu) + sqrt(eps) exceeds 1/2.
    """
    try:
        epsilon = float(epsilon)
        nu = float(nu)
    except (TypeError, ValueError) as exc:
        raise OutOfRange(f"epsilon and nu must be real numbers ({exc})") from None
    if not (math.isfinite(epsilon) and 0.0 < epsilon < 1.0):
        raise OutOfRange(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not (math.isfinite(nu) and 0.5 < nu < 1.0):
        raise OutOfRange(f"nu must lie in (1/2, 1), got {nu!r}")
    params = ScalingParams(epsilon, nu)
    if params.range_radius > 0.5:
        raise RangeOverflow(
            f"obstacle range radius {params.range_radius:.6g} exceeds 1/2 "
            f"for epsilon={epsilon!r}, nu={nu!r}"
        )
    return params


@dataclass(frozen=True, order=True)
class CellIndex:
    j: int
    k: int

    def center(self) -> np.ndarray:
        return np.array([float(self.j), float(self.k)])

    def __iter__(self):
        yield self.j
        yield self.k


def to_macro(value, params: ScalingParams):
    """Microscopic length/position/time -> macroscopic."""
    return np.asarray(value, dtype=float) * params.sqrt_eps


def to_micro(value, params: ScalingParams):
    """Macroscopic length/position/time -> microscopic."""
    return np.asarray(value, dtype=float) / params.sqrt_eps


def cell_of(x, scale: str = "micro", params: ScalingParams | None = None) -> CellIndex:
    """Lattice cell containing the point ``x``.

    Ties on cell boundaries go to the upper cell (round half up).
    """
    p = np.asarray(x, dtype=float)
    if scale == "macro":
        if params is None:
            raise ValueError("macro scale requires params")
        p = p / params.sqrt_eps
    elif scale != "micro":
        raise ValueError(f"unknown scale {scale!r}")
    jk = np.floor(p + 0.5)
    return CellIndex(int(jk[0]), int(jk[1]))


def cell_center(cell: CellIndex, scale: str = "micro", params: ScalingParams | None = None) -> np.ndarray:
    c = cell.center()
    if scale == "macro":
        if params is None:
            raise ValueError("macro scale requires params")
        return c * params.sqrt_eps
    return c


# The dihedral group of the square as signed permutation matrices.  Entries
# are 0/+-1 so applying them in floating point is exact.
SYMMETRIES = tuple(
    np.array(m, dtype=float)
    for m in (
        ((1, 0), (0, 1)),
        ((-1, 0), (0, 1)),
        ((1, 0), (0, -1)),
        ((-1, 0), (0, -1)),
        ((0, 1), (1, 0)),
        ((0, -1), (1, 0)),
        ((0, 1), (-1, 0)),
        ((0, -1), (-1, 0)),
    )
)


def apply_symmetry(op: int, vec) -> np.ndarray:
    return SYMMETRIES[op] @ np.asarray(vec, dtype=float)


def invert_symmetry(op: int, vec) -> np.ndarray:
    # orthogonal matrices: inverse is the transpose
    return SYMMETRIES[op].T @ np.asarray(vec, dtype=float)


def canonical_symmetry(direction) -> int:
    """Index of the symmetry taking ``direction`` to 0 <= d_x <= d_y."""
    for op, m in enumerate(SYMMETRIES):
        d = m @ np.asarray(direction, dtype=float)
        if 0.0 <= d[0] <= d[1]:
            return op
    raise ValueError(f"degenerate direction {direction!r}")


@dataclass(frozen=True)
class CellCrossing:
    """Canonical description of one straight passage through a cell.

    In the canonical frame the path moves upwards at angle ``beta`` in
    [0, pi/4] from the vertical.  ``y`` is where the path line crosses the
    line of the cell's lower edge, measured from the edge midpoint; it lies
    in [-1/2, 1/2) whenever the path enters through the lower edge.
    ``rho`` is the signed distance from the cell centre to the path.
    """

    cell: CellIndex
    y: float
    beta: float
    rho: float
    symmetry_op: int
    entry_index: int
    canonical_origin: tuple
    canonical_direction: tuple

    @property
    def y0(self) -> float:
        return -math.tan(self.beta) / 2.0


def _ray_box_interval(o, d, half=0.5):
    """Parameter interval where o + s d lies in the square [-half, half]^2."""
    lo, hi = -math.inf, math.inf
    for a in range(2):
        if d[a] == 0.0:
            if not (-half < o[a] < half):
                return None
            continue
        with np.errstate(over="ignore"):  # subnormal d[a]: +-inf is the right answer
            s1 = (-half - o[a]) / d[a]
            s2 = (half - o[a]) / d[a]
        if s1 > s2:
            s1, s2 = s2, s1
        lo = max(lo, s1)
        hi = min(hi, s2)
    if hi <= lo or hi <= 0.0:
        return None
    return lo, hi


def crossing_coordinates(segment_origin, direction, cell: CellIndex, entry_index: int = 0) -> CellCrossing:
    """Reduce a straight passage through ``cell`` to canonical coordinates.

    Raises NoEntry if the ray starting at ``segment_origin`` never meets the
    interior of the cell.
    """
    d = np.asarray(direction, dtype=float)
    d = d / math.hypot(d[0], d[1])
    rel = np.asarray(segment_origin, dtype=float) - cell.center()
    if _ray_box_interval(rel, d) is None:
        raise NoEntry(f"ray from {tuple(segment_origin)} along {tuple(d)} misses cell {cell}")
    op = canonical_symmetry(d)
    oc = apply_symmetry(op, rel)
    dc = apply_symmetry(op, d)
    beta = math.atan2(dc[0], dc[1])
    # where the path line meets y = -1/2
    y = oc[0] + (-0.5 - oc[1]) * dc[0] / dc[1]
    y0 = -math.tan(beta) / 2.0
    rho = (y - y0) * math.cos(beta)
    return CellCrossing(
        cell=cell,
        y=float(y),
        beta=float(beta),
        rho=float(rho),
        symmetry_op=op,
        entry_index=int(entry_index),
        canonical_origin=(float(oc[0]), float(oc[1])),
        canonical_direction=(float(dc[0]), float(dc[1])),
    )


def restore_crossing(crossing: CellCrossing) -> tuple[np.ndarray, np.ndarray]:
    """Undo the symmetry reduction: original (origin, direction)."""
    origin = invert_symmetry(crossing.symmetry_op, crossing.canonical_origin) + crossing.cell.center()
    direction = invert_symmetry(crossing.symmetry_op, crossing.canonical_direction)
    return origin, direction


def row_crossings(origin, direction, n: int) -> list[CellCrossing]:
    """Cells whose lower edge (canonical frame) the ray crosses, in order.

    Starts with the first lower-edge crossing at or after ``origin``.  Used
    to follow the entry coordinates y_1, y_2, ... of a straight path.
    """
    d = np.asarray(direction, dtype=float)
    d = d / math.hypot(d[0], d[1])
    op = canonical_symmetry(d)
    o = apply_symmetry(op, origin)
    dc = apply_symmetry(op, d)
    first_row = math.ceil(o[1] - 0.5)
    out = []
    for r in range(first_row, first_row + n):
        edge = r - 0.5
        x = o[0] + (edge - o[1]) * dc[0] / dc[1]
        j = math.floor(x + 0.5)
        canon_cell_center = np.array([float(j), float(r)])
        orig_center = invert_symmetry(op, canon_cell_center)
        cell = CellIndex(int(round(orig_center[0])), int(round(orig_center[1])))
        point = invert_symmetry(op, np.array([x, edge]))
        out.append(crossing_coordinates(point, d, cell))
    return out
