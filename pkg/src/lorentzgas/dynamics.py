"""Trajectories of the quenched Lorentz, Markovian Lorentz and Boltzmann processes.

The Lorentz processes are integrated exactly in the microscopic scale: the
ray is walked cell by cell (next-boundary stepping), every cell whose obstacle
range the segment enters gets its obstacle from the counter-based field, and
the first ray/disk intersection triggers a specular reflection.  Obstacle
ranges have radius <= 1/2, so each range lies inside its own cell and the
first hit met in traversal order is the nearest one.

Quenched and Markovian runs share one kernel.  The only difference is the
entry index fed to the offset generator: always 0 (quenched) or the number of
earlier entries of this path into the same range (Markovian).  The two
therefore agree exactly until the first re-entry.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .errors import Inconsistent, NotIncoming, StepLimit
from .geometry import CellIndex, ScalingParams
from .rng import (
    KEY_SALT,
    TAG_JUMP,
    TAG_START,
    ObstacleDensity,
    _derive_seed,
    _offset,
    _philox,
    _to_unit,
    _uniform_pair,
    derive_seed,
)

__all__ = [
    "TOL_HIT",
    "MAX_COLLISIONS",
    "PhaseState",
    "Trajectory",
    "LoopReport",
    "PairResult",
    "ExplicitField",
    "ray_disk_intersect",
    "specular_reflect",
    "advance_lorentz",
    "advance_markovian",
    "advance_boltzmann",
    "detect_loops",
    "run_pair",
    "start_states",
    "run_ensemble",
    "trajectories_to_csv",
]

TOL_HIT = 1e-12
MAX_COLLISIONS = 100_000_000

KIND_START = 0
KIND_COLLISION = 1
KIND_END = 2
_KIND_NAMES = {KIND_START: "start", KIND_COLLISION: "collision", KIND_END: "end"}

_NO_KEY = np.int64(-(2**63))

# event row layout
_T, _X, _Y, _VX, _VY, _KIND, _CJ, _CK, _R = range(9)


# ---------------------------------------------------------------------------
# geometric kernels


@njit(cache=True, inline="always")
def _ray_disk(ox, oy, dx, dy, cx, cy, radius, tol):
    rx = cx - ox
    ry = cy - oy
    if rx * rx + ry * ry <= radius * radius:
        return -1.0, 0.0
    b = rx * dx + ry * dy
    perp = rx * dy - ry * dx
    disc = radius * radius - perp * perp
    if disc <= 0.0:
        return -1.0, 0.0
    h = math.sqrt(disc)
    if h <= tol:
        return -1.0, 0.0
    s = b - h
    if s <= tol:
        return -1.0, 0.0
    return s, perp / radius


def ray_disk_intersect(origin, direction, center, radius: float, tol: float = TOL_HIT):
    """Distance along the ray to the point where it enters the disk.

    Returns None when the ray misses, only grazes (chord half-length below
    ``tol``), hits behind the origin, or starts inside the disk: particles
    leave obstacles they start in without interacting.
    """
    s, _ = _ray_disk(
        float(origin[0]), float(origin[1]), float(direction[0]), float(direction[1]),
        float(center[0]), float(center[1]), float(radius), float(tol),
    )
    return None if s < 0.0 else s


def specular_reflect(v, omega) -> np.ndarray:
    """v' = v - 2 (omega . v) omega for an incoming velocity (v . omega < 0)."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    dot = float(v @ omega)
    if not dot < 0.0:
        raise NotIncoming(f"velocity {tuple(v)} is not incoming for normal {tuple(omega)}")
    out = v - 2.0 * dot * omega
    return out / math.hypot(out[0], out[1])


@njit(cache=True, inline="always")
def _pack(j, k):
    return (np.int64(j) << np.int64(32)) ^ (np.int64(k) & np.int64(0xFFFFFFFF))


@njit(cache=True)
def _grow(a, n):
    if n < a.shape[0]:
        return a
    b = np.empty((a.shape[0] * 2, a.shape[1]))
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _trace(px, py, dx, dy, t_end, seed, markov, kind, table, radius, patch_r, range_r,
           explicit, fkeys, foff, max_coll):
    """Event-driven billiard in the microscopic scale.

    Returns (events, n_events, entries, n_entries, status); status 1 means the
    collision budget was exhausted.
    """
    ev = np.empty((64, 9))
    en = np.empty((64, 4))
    ne = 0
    nen = 0
    counts = Dict.empty(key_type=types.int64, value_type=types.int64)
    nrm = math.sqrt(dx * dx + dy * dy)
    dx /= nrm
    dy /= nrm
    ev[0, _T] = 0.0
    ev[0, _X] = px
    ev[0, _Y] = py
    ev[0, _VX] = dx
    ev[0, _VY] = dy
    ev[0, _KIND] = KIND_START
    ev[0, _CJ] = np.nan
    ev[0, _CK] = np.nan
    ev[0, _R] = np.nan
    ne = 1
    t = 0.0
    coll_key = _NO_KEY
    ncoll = 0
    status = 0
    rr2 = range_r * range_r
    while True:
        remaining = t_end - t
        i = math.floor(px + 0.5)
        j = math.floor(py + 0.5)
        if dx > 0.0:
            sx = 1
            tmx = (i + 0.5 - px) / dx
            tdx = 1.0 / dx
        elif dx < 0.0:
            sx = -1
            tmx = (i - 0.5 - px) / dx
            tdx = -1.0 / dx
        else:
            sx = 0
            tmx = np.inf
            tdx = np.inf
        if dy > 0.0:
            sy = 1
            tmy = (j + 0.5 - py) / dy
            tdy = 1.0 / dy
        elif dy < 0.0:
            sy = -1
            tmy = (j - 0.5 - py) / dy
            tdy = -1.0 / dy
        else:
            sy = 0
            tmy = np.inf
            tdy = np.inf
        s_hit = -1.0
        r_hit = 0.0
        hit_cx = 0.0
        hit_cy = 0.0
        hit_key = _NO_KEY
        hi = 0
        hj = 0
        while True:
            rx = i - px
            ry = j - py
            perp = rx * dy - ry * dx
            if perp * perp < rr2:
                sc = rx * dx + ry * dy
                h = math.sqrt(rr2 - perp * perp)
                s_in = sc - h
                s_out = sc + h
                key = _pack(i, j)
                if s_out > 0.0 and s_in < remaining and key != coll_key:
                    idx = np.int64(0)
                    if key in counts:
                        idx = counts[key]
                    counts[key] = idx + 1
                    en = _grow(en, nen)
                    en[nen, 0] = t + max(s_in, 0.0)
                    en[nen, 1] = i
                    en[nen, 2] = j
                    en[nen, 3] = idx
                    nen += 1
                    has_obstacle = True
                    if explicit:
                        pos = np.searchsorted(fkeys, key)
                        if pos < fkeys.shape[0] and fkeys[pos] == key:
                            ox = foff[pos, 0]
                            oy = foff[pos, 1]
                        else:
                            has_obstacle = False
                            ox = 0.0
                            oy = 0.0
                    else:
                        ox, oy = _offset(seed, i, j, idx if markov else 0, kind, table, patch_r)
                    if has_obstacle:
                        s, r = _ray_disk(px, py, dx, dy, i + ox, j + oy, radius, 1e-12)
                        if s > 0.0 and s < remaining:
                            s_hit = s
                            r_hit = r
                            hit_cx = i + ox
                            hit_cy = j + oy
                            hit_key = key
                            hi = i
                            hj = j
                            break
            if tmx < tmy:
                if tmx >= remaining:
                    break
                i += sx
                tmx += tdx
            else:
                if tmy >= remaining:
                    break
                j += sy
                tmy += tdy
        if s_hit < 0.0:
            px += remaining * dx
            py += remaining * dy
            t = t_end
            ev = _grow(ev, ne)
            ev[ne, _T] = t
            ev[ne, _X] = px
            ev[ne, _Y] = py
            ev[ne, _VX] = dx
            ev[ne, _VY] = dy
            ev[ne, _KIND] = KIND_END
            ev[ne, _CJ] = np.nan
            ev[ne, _CK] = np.nan
            ev[ne, _R] = np.nan
            ne += 1
            break
        px += s_hit * dx
        py += s_hit * dy
        t += s_hit
        wx = (px - hit_cx) / radius
        wy = (py - hit_cy) / radius
        wn = math.sqrt(wx * wx + wy * wy)
        wx /= wn
        wy /= wn
        dot = dx * wx + dy * wy
        dx -= 2.0 * dot * wx
        dy -= 2.0 * dot * wy
        nrm = math.sqrt(dx * dx + dy * dy)
        dx /= nrm
        dy /= nrm
        ev = _grow(ev, ne)
        ev[ne, _T] = t
        ev[ne, _X] = px
        ev[ne, _Y] = py
        ev[ne, _VX] = dx
        ev[ne, _VY] = dy
        ev[ne, _KIND] = KIND_COLLISION
        ev[ne, _CJ] = hi
        ev[ne, _CK] = hj
        ev[ne, _R] = r_hit
        ne += 1
        coll_key = hit_key
        ncoll += 1
        if ncoll >= max_coll:
            status = 1
            break
    return ev, ne, en, nen, status


@njit(cache=True, nogil=True)
def _boltzmann(px, py, dx, dy, t_end, seed, rate):
    """Random flight with exponential(rate) waiting times and specular jumps."""
    ev = np.empty((16, 9))
    nrm = math.sqrt(dx * dx + dy * dy)
    dx /= nrm
    dy /= nrm
    ev[0, _T] = 0.0
    ev[0, _X] = px
    ev[0, _Y] = py
    ev[0, _VX] = dx
    ev[0, _VY] = dy
    ev[0, _KIND] = KIND_START
    ev[0, _CJ] = np.nan
    ev[0, _CK] = np.nan
    ev[0, _R] = np.nan
    ne = 1
    t = 0.0
    n = 0
    done = False
    while True:
        u_time, u_imp = _uniform_pair(seed, n, 0, 0, TAG_JUMP)
        tau = -math.log(1.0 - u_time) / rate
        ev = _grow(ev, ne)
        if t + tau >= t_end:
            rem = t_end - t
            px += rem * dx
            py += rem * dy
            ev[ne, _T] = t_end
            ev[ne, _X] = px
            ev[ne, _Y] = py
            ev[ne, _VX] = dx
            ev[ne, _VY] = dy
            ev[ne, _KIND] = KIND_END
            ev[ne, _CJ] = np.nan
            ev[ne, _CK] = np.nan
            ev[ne, _R] = np.nan
            ne += 1
            done = True
        if done:
            break
        t += tau
        px += tau * dx
        py += tau * dy
        r = 2.0 * u_imp - 1.0
        c = math.sqrt(max(0.0, 1.0 - r * r))
        # outward normal at the impact point; r = d x omega
        wx = -c * dx - r * dy
        wy = -c * dy + r * dx
        dot = dx * wx + dy * wy
        dx -= 2.0 * dot * wx
        dy -= 2.0 * dot * wy
        nrm = math.sqrt(dx * dx + dy * dy)
        dx /= nrm
        dy /= nrm
        ev[ne, _T] = t
        ev[ne, _X] = px
        ev[ne, _Y] = py
        ev[ne, _VX] = dx
        ev[ne, _VY] = dy
        ev[ne, _KIND] = KIND_COLLISION
        ev[ne, _CJ] = np.nan
        ev[ne, _CK] = np.nan
        ev[ne, _R] = r
        ne += 1
        n += 1
    return ev, ne


# ---------------------------------------------------------------------------
# public types


@dataclass(frozen=True)
class PhaseState:
    """Point (x, v) of R^2 x S^1; ``scale`` says how ``x`` is measured."""

    x: np.ndarray
    v: np.ndarray
    scale: str = "macro"

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(2))
        v = np.asarray(self.v, dtype=float).reshape(2)
        object.__setattr__(self, "v", v / math.hypot(v[0], v[1]))
        if self.scale not in ("micro", "macro"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @classmethod
    def from_angle(cls, x, angle: float, scale: str = "macro") -> "PhaseState":
        return cls(x, (math.cos(angle), math.sin(angle)), scale)

    def in_micro(self, params: ScalingParams) -> np.ndarray:
        return self.x / params.sqrt_eps if self.scale == "macro" else self.x

    def in_macro(self, params: ScalingParams) -> np.ndarray:
        return self.x if self.scale == "macro" else self.x * params.sqrt_eps

    def reversed(self) -> "PhaseState":
        return PhaseState(self.x, -self.v, self.scale)


@dataclass
class Trajectory:
    """Piecewise-linear cadlag path stored as its events.

    Row ``i`` holds the time, position and post-event velocity of event i.
    ``scale`` is "micro" for Lorentz trajectories (lattice spacing 1) and
    "macro" for Boltzmann ones; ``length_unit`` is the macroscopic length of
    one stored unit.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    kind: np.ndarray
    cell: np.ndarray
    impact: np.ndarray
    t_final: float
    scale: str
    length_unit: float
    process: str
    start: PhaseState
    range_entries: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))

    @classmethod
    def _from_events(cls, ev, ne, scale, unit, process, start, entries=None):
        ev = ev[:ne]
        cells = np.full((ne, 2), np.iinfo(np.int64).min, dtype=np.int64)
        coll = ev[:, _KIND] == KIND_COLLISION
        if process != "boltzmann":
            cells[coll, 0] = ev[coll, _CJ].astype(np.int64)
            cells[coll, 1] = ev[coll, _CK].astype(np.int64)
        return cls(
            t=ev[:, _T].copy(),
            x=ev[:, _X:_Y + 1].copy(),
            v=ev[:, _VX:_VY + 1].copy(),
            kind=ev[:, _KIND].astype(np.int8),
            cell=cells,
            impact=ev[:, _R].copy(),
            t_final=float(ev[-1, _T]),
            scale=scale,
            length_unit=unit,
            process=process,
            start=start,
            range_entries=np.empty((0, 4)) if entries is None else entries.copy(),
        )

    @property
    def n_collisions(self) -> int:
        return int(np.count_nonzero(self.kind == KIND_COLLISION))

    @property
    def collision_times(self) -> np.ndarray:
        return self.t[self.kind == KIND_COLLISION]

    @property
    def t_macro(self) -> np.ndarray:
        return self.t * self.length_unit

    @property
    def x_macro(self) -> np.ndarray:
        return self.x * self.length_unit

    @property
    def t_final_macro(self) -> float:
        return self.t_final * self.length_unit

    def final_state(self) -> PhaseState:
        return PhaseState(self.x[-1] * self.length_unit, self.v[-1], "macro")

    def state_at(self, t_macro: float) -> PhaseState:
        x, v = self.evaluate(np.array([t_macro]))
        return PhaseState(x[0], v[0], "macro")

    def evaluate(self, times_macro) -> tuple[np.ndarray, np.ndarray]:
        """Macroscopic (x(t), v(t)) at the given times; right-continuous."""
        times = np.asarray(times_macro, dtype=float)
        tm = self.t_macro
        idx = np.clip(np.searchsorted(tm, times, side="right") - 1, 0, len(tm) - 1)
        x = self.x_macro[idx] + (times - tm[idx])[:, None] * self.v[idx]
        return x, self.v[idx]

    def events_bytes(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(a).tobytes() for a in (self.t, self.x, self.v, self.kind, self.cell, self.impact)
        )

    def same_events(self, other: "Trajectory") -> bool:
        return self.events_bytes() == other.events_bytes()

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class ExplicitField:
    """Hand-placed obstacles for controlled experiments.

    Maps cells to offsets (microscopic).  Cells not listed carry no obstacle,
    which lets tests build isolated geometries.
    """

    offsets: dict

    def arrays(self):
        if not self.offsets:
            return np.empty(0, dtype=np.int64), np.empty((0, 2))
        items = sorted((int(_pack(c.j, c.k)), o) for c, o in self.offsets.items())
        keys = np.array([k for k, _ in items], dtype=np.int64)
        off = np.array([np.asarray(o, dtype=float) for _, o in items]).reshape(-1, 2)
        return keys, off


_NO_FIELD = (np.empty(0, dtype=np.int64), np.empty((0, 2)))


def _run_lorentz(start, params, seed, density, t_max, markov, field, max_collisions):
    x = start.in_micro(params)
    explicit = field is not None
    fkeys, foff = field.arrays() if explicit else _NO_FIELD
    ev, ne, en, nen, status = _trace(
        float(x[0]), float(x[1]), float(start.v[0]), float(start.v[1]),
        float(t_max) / params.sqrt_eps, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), markov,
        density.code, density.table, params.obstacle_radius, params.patch_radius, params.range_radius,
        explicit, fkeys, foff, max_collisions,
    )
    if status == 1:
        raise StepLimit(f"more than {max_collisions} collisions before t={t_max}")
    return Trajectory._from_events(
        ev, ne, "micro", params.sqrt_eps, "markovian" if markov else "lorentz", start, en[:nen]
    )


def advance_lorentz(start: PhaseState, params: ScalingParams, seed: int, density: ObstacleDensity,
                    t_max: float, *, field: ExplicitField | None = None,
                    max_collisions: int = MAX_COLLISIONS) -> Trajectory:
    """Quenched Lorentz trajectory up to macroscopic time ``t_max``."""
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    return _run_lorentz(start, params, seed, density, t_max, False, field, max_collisions)


def advance_markovian(start: PhaseState, params: ScalingParams, seed: int, density: ObstacleDensity,
                      t_max: float, *, field: ExplicitField | None = None,
                      max_collisions: int = MAX_COLLISIONS) -> Trajectory:
    """Markovian Lorentz trajectory: each range entry sees a fresh obstacle.

    With an explicit field the obstacles are fixed, so this coincides with
    :func:`advance_lorentz`.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    return _run_lorentz(start, params, seed, density, t_max, True, field, max_collisions)


def advance_boltzmann(start: PhaseState, rate: float = 2.0, t_max: float = 1.0, seed: int = 0) -> Trajectory:
    """Boltzmann random flight in the macroscopic scale."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    x = start.x if start.scale == "macro" else None
    if x is None:
        raise ValueError("Boltzmann process needs a macroscopic start state")
    ev, ne = _boltzmann(float(x[0]), float(x[1]), float(start.v[0]), float(start.v[1]),
                        float(t_max), np.uint64(seed & 0xFFFFFFFFFFFFFFFF), float(rate))
    return Trajectory._from_events(ev, ne, "macro", 1.0, "boltzmann", start)


# ---------------------------------------------------------------------------
# loops


@dataclass
class LoopReport:
    """Re-entries of a path into obstacle ranges it has entered before.

    ``loop_events`` holds (t_macro, cell, entry_index) with entry_index >= 1.
    ``displacement_sequences[i]`` is the (n+1, 2) integer array of steps
    between successive collision cells that close loop i, starting and
    ending at the re-entered cell.
    """

    loop_events: list = field(default_factory=list)
    displacement_sequences: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.loop_events)

    @property
    def is_empty(self) -> bool:
        return not self.loop_events

    @property
    def first_time(self) -> float | None:
        return self.loop_events[0][0] if self.loop_events else None


def _loop_report(traj: Trajectory) -> LoopReport:
    entries = traj.range_entries
    coll = traj.kind == KIND_COLLISION
    coll_t = traj.t[coll]
    coll_cells = traj.cell[coll]
    report = LoopReport()
    last_entry = {}
    for t, j, k, idx in entries:
        cell = (int(j), int(k))
        if idx >= 1:
            t_prev = last_entry[cell]
            inside = (coll_t > t_prev) & (coll_t < t)
            path = [cell] + [
                (int(a), int(b)) for a, b in coll_cells[inside] if (int(a), int(b)) != cell
            ] + [cell]
            xi = np.diff(np.array(path, dtype=np.int64), axis=0)
            report.loop_events.append((float(t) * traj.length_unit, CellIndex(*cell), int(idx)))
            report.displacement_sequences.append(xi)
        last_entry[cell] = t
    return report


def detect_loops(trajectory: Trajectory, params: ScalingParams, seed: int, density: ObstacleDensity,
                 *, field: ExplicitField | None = None, tol: float = 1e-9) -> LoopReport:
    """Replay a Lorentz trajectory and report every range re-entry.

    Raises Inconsistent if the replay does not reproduce the stored events.
    """
    if trajectory.process not in ("lorentz", "markovian"):
        raise ValueError("loop detection needs a Lorentz or Markovian trajectory")
    replay = _run_lorentz(
        trajectory.start, params, seed, density, trajectory.t_final_macro,
        trajectory.process == "markovian", field, MAX_COLLISIONS,
    )
    if len(replay) != len(trajectory) or not (
        np.allclose(replay.t, trajectory.t, rtol=0, atol=tol)
        and np.allclose(replay.x, trajectory.x, rtol=0, atol=tol)
        and np.array_equal(replay.kind, trajectory.kind)
    ):
        raise Inconsistent("replayed trajectory diverges from the stored events")
    return _loop_report(replay)


# ---------------------------------------------------------------------------
# pairs


@dataclass
class PairResult:
    first: Trajectory
    second: Trajectory
    met_same_range: bool
    first_meet_time: float | None

    def __iter__(self):
        yield self.first
        yield self.second
        yield self.met_same_range
        yield self.first_meet_time


def _first_entries(traj: Trajectory) -> dict:
    out = {}
    for t, j, k, _ in traj.range_entries:
        out.setdefault((int(j), int(k)), float(t))
    return out


def particle_seeds(seed: int, process: str) -> tuple[int, int]:
    """Seeds of the two particles of a pair.

    Quenched pairs share the field; Markovian particles resample from
    independent streams derived from the pair seed.
    """
    if process == "lorentz":
        return seed, seed
    return derive_seed(seed, 0), derive_seed(seed, 1)


def run_pair(start1: PhaseState, start2: PhaseState, process: str, params: ScalingParams, seed: int,
             density: ObstacleDensity, t_max: float) -> PairResult:
    """Two particles in one realisation.

    Each particle keeps its own entry counter; in quenched mode both see the
    field with index 0, so they interact through common obstacles.
    """
    if process == "lorentz":
        run = advance_lorentz
    elif process == "markovian":
        run = advance_markovian
    else:
        raise ValueError(f"pairs need process lorentz or markovian, got {process!r}")
    s1, s2 = particle_seeds(seed, process)
    a = run(start1, params, s1, density, t_max)
    b = run(start2, params, s2, density, t_max)
    ea, eb = _first_entries(a), _first_entries(b)
    common = set(ea) & set(eb)
    meet = None
    if common:
        meet = min(max(ea[c], eb[c]) for c in common) * params.sqrt_eps
    return PairResult(a, b, bool(common), meet)


# ---------------------------------------------------------------------------
# ensembles


@njit(cache=True)
def _start_state(seed, index, x0, y0, x1, y1):
    ux, uy = _uniform_pair(seed, index, 0, 0, TAG_START)
    ua, _ = _uniform_pair(seed, index, 1, 0, TAG_START)
    angle = 2.0 * math.pi * ua
    return x0 + (x1 - x0) * ux, y0 + (y1 - y0) * uy, math.cos(angle), math.sin(angle)


def start_states(seed: int, n: int, window, offset: int = 0) -> np.ndarray:
    """(n, 4) array of macroscopic start states (x1, x2, v1, v2).

    Position uniform over ``window`` = (x_min, y_min, x_max, y_max), angle
    uniform on [0, 2 pi).  Path ``i`` uses counter ``offset + i``.
    """
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    x0, y0, x1, y1 = (float(w) for w in window)
    out = np.empty((n, 4))
    for i in range(n):
        out[i] = _start_state(s, np.int64(offset + i), x0, y0, x1, y1)
    return out


@njit(cache=True, nogil=True)
def _lorentz_chunk(starts, seeds, t_end, markov, kind, table, radius, patch_r, range_r, inv_unit,
                   final, ncoll, loop_t, gaps_out, censored_out, status_out):
    """Run a block of Lorentz paths and keep only summary statistics.

    gaps_out / censored_out are preallocated flat buffers; the function
    returns how many entries it wrote to each (negative if a buffer is short).
    """
    fkeys = np.empty(0, dtype=np.int64)
    foff = np.empty((0, 2))
    ng = 0
    nc = 0
    for p in range(starts.shape[0]):
        ev, ne, en, nen, status = _trace(
            starts[p, 0] * inv_unit, starts[p, 1] * inv_unit, starts[p, 2], starts[p, 3], t_end,
            seeds[p], markov, kind, table, radius, patch_r, range_r, False, fkeys, foff, 100_000_000,
        )
        status_out[p] = status
        final[p, 0] = ev[ne - 1, _X]
        final[p, 1] = ev[ne - 1, _Y]
        final[p, 2] = ev[ne - 1, _VX]
        final[p, 3] = ev[ne - 1, _VY]
        ncoll[p] = ne - 2
        loop_t[p] = np.inf
        for q in range(nen):
            if en[q, 3] >= 1.0:
                loop_t[p] = en[q, 0]
                break
        if ne == 2:
            if nc < censored_out.shape[0]:
                censored_out[nc] = t_end
            nc += 1
            continue
        if nc < censored_out.shape[0]:
            censored_out[nc] = ev[1, _T]
        nc += 1
        if nc < censored_out.shape[0]:
            censored_out[nc] = t_end - ev[ne - 2, _T]
        nc += 1
        for q in range(2, ne - 1):
            if ng < gaps_out.shape[0]:
                gaps_out[ng] = ev[q, _T] - ev[q - 1, _T]
            ng += 1
    return ng, nc


@njit(cache=True, nogil=True)
def _boltzmann_chunk(starts, seeds, t_end, rate, final, ncoll, gaps_out, censored_out):
    ng = 0
    nc = 0
    for p in range(starts.shape[0]):
        ev, ne = _boltzmann(starts[p, 0], starts[p, 1], starts[p, 2], starts[p, 3], t_end, seeds[p], rate)
        final[p, 0] = ev[ne - 1, _X]
        final[p, 1] = ev[ne - 1, _Y]
        final[p, 2] = ev[ne - 1, _VX]
        final[p, 3] = ev[ne - 1, _VY]
        ncoll[p] = ne - 2
        if ne == 2:
            if nc < censored_out.shape[0]:
                censored_out[nc] = t_end
            nc += 1
            continue
        if nc < censored_out.shape[0]:
            censored_out[nc] = ev[1, _T]
        nc += 1
        if nc < censored_out.shape[0]:
            censored_out[nc] = t_end - ev[ne - 2, _T]
        nc += 1
        for q in range(2, ne - 1):
            if ng < gaps_out.shape[0]:
                gaps_out[ng] = ev[q, _T] - ev[q - 1, _T]
            ng += 1
    return ng, nc


@njit(cache=True)
def _derive_many(seed, first, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _derive_seed(seed, np.int64(first + i))
    return out


def path_seeds(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Per-path seeds: path i gets derive_seed(seed, offset + i)."""
    return _derive_many(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.int64(offset), n)


@dataclass
class EnsembleResult:
    """Summary of an ensemble run, macroscopic units, paths in index order."""

    process: str
    starts: np.ndarray
    final: np.ndarray
    n_collisions: np.ndarray
    first_loop_time: np.ndarray
    gaps: np.ndarray
    censored: np.ndarray
    t_max: float

    @property
    def n_paths(self) -> int:
        return len(self.final)

    @property
    def has_loop(self) -> np.ndarray:
        return np.isfinite(self.first_loop_time)


def _chunks(n, threads):
    size = max(1, min(4096, -(-n // max(1, threads))))
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def run_ensemble(process: str, n_paths: int, t_max: float, seed: int, *, params: ScalingParams | None = None,
                 density: ObstacleDensity | None = None, rate: float = 2.0, starts: np.ndarray | None = None,
                 window=(-0.5, -0.5, 0.5, 0.5), seeds: np.ndarray | None = None, threads: int = 1) -> EnsembleResult:
    """Run ``n_paths`` independent paths and keep per-path summaries.

    Path i starts from ``starts[i]`` (default: :func:`start_states` of the
    seed over ``window``) and uses randomness ``seeds[i]`` (default:
    :func:`path_seeds`).  Results do not depend on ``threads``.
    """
    if starts is None:
        starts = start_states(seed, n_paths, window)
    starts = np.ascontiguousarray(starts, dtype=float)
    if seeds is None:
        seeds = path_seeds(seed, n_paths)
    seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
    n = starts.shape[0]
    final = np.empty((n, 4))
    ncoll = np.empty(n, dtype=np.int64)
    loop_t = np.full(n, np.inf)
    status = np.zeros(n, dtype=np.int64)
    if process in ("lorentz", "markovian"):
        if params is None or density is None:
            raise ValueError("Lorentz processes need params and density")
        unit = params.sqrt_eps
        t_end = t_max / unit
    elif process == "boltzmann":
        unit = 1.0
        t_end = t_max
    else:
        raise ValueError(f"unknown process {process!r}")

    def work(bounds):
        a, b = bounds
        cap = 64
        while True:
            gaps = np.empty(cap)
            cens = np.empty(2 * (b - a))
            if process == "boltzmann":
                ng, nc = _boltzmann_chunk(starts[a:b], seeds[a:b], t_end, rate, final[a:b], ncoll[a:b], gaps, cens)
            else:
                ng, nc = _lorentz_chunk(
                    starts[a:b], seeds[a:b], t_end, process == "markovian", density.code, density.table,
                    params.obstacle_radius, params.patch_radius, params.range_radius, 1.0 / unit,
                    final[a:b], ncoll[a:b], loop_t[a:b], gaps, cens, status[a:b],
                )
            if ng <= cap:
                return gaps[:ng].copy(), cens[:nc].copy()
            cap = ng

    bounds = _chunks(n, threads)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(bd) for bd in bounds]
    if status.any():
        raise StepLimit("a path exceeded the collision budget")
    final[:, :2] *= unit
    loop_t *= unit
    gaps = np.concatenate([p[0] for p in parts]) * unit if parts else np.empty(0)
    cens = np.concatenate([p[1] for p in parts]) * unit if parts else np.empty(0)
    return EnsembleResult(process, starts, final, ncoll, loop_t, gaps, cens, t_max)


# ---------------------------------------------------------------------------
# export


def _fmt(v) -> str:
    return format(float(v), ".17g")


def trajectories_to_csv(trajectories, stream=None, path_ids=None) -> str:
    """Write trajectories, one row per event, in macroscopic units."""
    out = stream if stream is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["path_id", "event_index", "kind", "t_macro", "x1_macro", "x2_macro", "v1", "v2",
                "cell_j", "cell_k", "impact_parameter"])
    for n, traj in enumerate(trajectories):
        pid = n if path_ids is None else path_ids[n]
        tm = traj.t_macro
        xm = traj.x_macro
        for i in range(len(traj)):
            is_coll = traj.kind[i] == KIND_COLLISION
            has_cell = is_coll and traj.process != "boltzmann"
            w.writerow([
                pid, i, _KIND_NAMES[int(traj.kind[i])], _fmt(tm[i]), _fmt(xm[i, 0]), _fmt(xm[i, 1]),
                _fmt(traj.v[i, 0]), _fmt(traj.v[i, 1]),
                int(traj.cell[i, 0]) if has_cell else "",
                int(traj.cell[i, 1]) if has_cell else "",
                _fmt(traj.impact[i]) if is_coll else "",
            ])
    return out.getvalue() if stream is None else ""
