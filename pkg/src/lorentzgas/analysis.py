"""Estimators and distances on trajectory ensembles."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import EnsembleResult, Trajectory, path_seeds, run_ensemble, start_states
from .errors import Empty, GridMismatch, HorizonMismatch
from .geometry import ScalingParams
from .rng import ObstacleDensity, derive_seed

__all__ = [
    "EmpiricalMeasure",
    "EstimateWithError",
    "FreePathSamples",
    "free_path_samples",
    "ks_statistic",
    "exponential_cdf",
    "tv_distance",
    "sup_distance",
    "skorokhod_distance",
    "loop_probability",
    "chaos_covariance",
    "bump_observable",
    "marginal_measure",
    "measure_window",
    "report_json",
]

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    standard_error: float
    sample_count: int

    def __post_init__(self):
        if not self.standard_error >= 0:
            raise ValueError("standard error must be nonnegative")

    @property
    def ci(self) -> tuple[float, float]:
        """value +- 3 standard errors."""
        return self.value - 3 * self.standard_error, self.value + 3 * self.standard_error

    def as_record(self, name: str) -> dict:
        return {"name": name, "value": self.value, "stderr": self.standard_error, "n": self.sample_count}


@dataclass
class EmpiricalMeasure:
    """Histogram of (x1, x2, angle) on a rectangular window times [0, 2 pi).

    ``window`` is (x_min, y_min, x_max, y_max); ``grid`` the bin counts per
    axis.  Samples outside the window are counted in ``outside`` so masses
    always sum to one.
    """

    window: tuple
    grid: tuple
    counts: np.ndarray
    outside: int = 0

    @classmethod
    def empty(cls, window, grid) -> "EmpiricalMeasure":
        grid = tuple(int(g) for g in grid)
        return cls(tuple(float(w) for w in window), grid, np.zeros(grid, dtype=np.int64), 0)

    @classmethod
    def from_states(cls, states: np.ndarray, window, grid) -> "EmpiricalMeasure":
        """Bin an (N, 4) array of (x1, x2, v1, v2)."""
        m = cls.empty(window, grid)
        m.add(states)
        return m

    def add(self, states: np.ndarray) -> None:
        states = np.asarray(states, dtype=float).reshape(-1, 4)
        x0, y0, x1, y1 = self.window
        nx, ny, na = self.grid
        fx = (states[:, 0] - x0) / (x1 - x0)
        fy = (states[:, 1] - y0) / (y1 - y0)
        ang = np.mod(np.arctan2(states[:, 3], states[:, 2]), TWO_PI)
        inside = (fx >= 0) & (fx < 1) & (fy >= 0) & (fy < 1)
        ix = np.minimum((fx[inside] * nx).astype(np.int64), nx - 1)
        iy = np.minimum((fy[inside] * ny).astype(np.int64), ny - 1)
        ia = np.minimum((ang[inside] / TWO_PI * na).astype(np.int64), na - 1)
        flat = np.bincount((ix * ny + iy) * na + ia, minlength=nx * ny * na)
        self.counts += flat.reshape(self.grid)
        self.outside += int(np.count_nonzero(~inside))

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        self._check(other)
        return EmpiricalMeasure(self.window, self.grid, self.counts + other.counts, self.outside + other.outside)

    def _check(self, other):
        if self.window != other.window or self.grid != other.grid:
            raise GridMismatch(f"grids differ: {self.window}/{self.grid} vs {other.window}/{other.grid}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_samples(self) -> int:
        return self.total + self.outside

    def masses(self) -> np.ndarray:
        n = self.n_samples
        if n == 0:
            raise Empty("measure has no samples")
        return self.counts / n

    def bin_centers(self):
        x0, y0, x1, y1 = self.window
        nx, ny, na = self.grid
        cx = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        cy = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        ca = (np.arange(na) + 0.5) * TWO_PI / na
        return cx, cy, ca

    def to_csv(self, stream=None) -> str:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["i", "j", "l", "x1_center", "x2_center", "angle_center", "count", "mass"])
        cx, cy, ca = self.bin_centers()
        mass = self.masses() if self.n_samples else np.zeros(self.grid)
        for (i, j, l), c in np.ndenumerate(self.counts):
            w.writerow([i, j, l, format(cx[i], ".17g"), format(cy[j], ".17g"), format(ca[l], ".17g"),
                        int(c), format(float(mass[i, j, l]), ".17g")])
        return out.getvalue() if stream is None else ""


def measure_window(start_window, t_max: float) -> tuple:
    """Start window inflated by t_max on every side (unit speed)."""
    x0, y0, x1, y1 = start_window
    return (x0 - t_max, y0 - t_max, x1 + t_max, y1 + t_max)


# ---------------------------------------------------------------------------
# free paths


@dataclass
class FreePathSamples:
    """Inter-collision times; first and last gaps are censored by the horizon."""

    interior: np.ndarray
    censored: np.ndarray


def free_path_samples(trajectories) -> FreePathSamples:
    """Macroscopic free times from trajectories or an :class:`EnsembleResult`."""
    if isinstance(trajectories, EnsembleResult):
        return FreePathSamples(trajectories.gaps.copy(), trajectories.censored.copy())
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    interior, censored = [], []
    for tr in trajectories:
        times = tr.collision_times * tr.length_unit
        end = tr.t_final_macro
        t0 = tr.t[0] * tr.length_unit
        if len(times) == 0:
            censored.append(end - t0)
            continue
        censored.append(times[0] - t0)
        censored.append(end - times[-1])
        interior.append(np.diff(times))
    return FreePathSamples(
        np.concatenate(interior) if interior else np.empty(0),
        np.asarray(censored, dtype=float),
    )


def exponential_cdf(rate: float) -> Callable:
    return lambda x: -np.expm1(-rate * np.clip(x, 0.0, None))


def ks_statistic(samples, cdf: Callable) -> float:
    """sup |F_n - F| for the empirical CDF of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise Empty("no samples")
    f = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(n) / n
    return float(max(upper.max(), lower.max(), 0.0))


# ---------------------------------------------------------------------------
# distances


def tv_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Half the L1 distance between normalized masses (outside mass included)."""
    a._check(b)
    ma, mb = a.masses(), b.masses()
    oa = a.outside / a.n_samples
    ob = b.outside / b.n_samples
    return float(0.5 * (np.abs(ma - mb).sum() + abs(oa - ob)))


def _eval_path(traj: Trajectory, times: np.ndarray, left: bool):
    """Position (linear between events) and velocity; left limits if ``left``."""
    t = traj.t_macro
    xm = traj.x_macro
    x = np.column_stack([np.interp(times, t, xm[:, 0]), np.interp(times, t, xm[:, 1])])
    idx = np.searchsorted(t, times, side="left" if left else "right") - 1
    idx = np.clip(idx, 0, len(t) - 1)
    return x, traj.v[idx]


def _state_gap(a: Trajectory, b: Trajectory, ta: np.ndarray, tb: np.ndarray) -> float:
    worst = 0.0
    for left in (False, True):
        xa, va = _eval_path(a, ta, left)
        xb, vb = _eval_path(b, tb, left)
        # componentwise max norm on (x, v)
        gap = np.max(np.abs(np.hstack([xa - xb, va - vb])), axis=1)
        worst = max(worst, float(np.max(gap)))
    return worst


def _check_horizon(a, b):
    if abs(a.t_final_macro - b.t_final_macro) > 1e-12 * max(1.0, a.t_final_macro):
        raise HorizonMismatch(f"horizons differ: {a.t_final_macro} vs {b.t_final_macro}")
    return a.t_final_macro


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """sup_t of the max-norm distance of (x, v) over the merged event grid, macroscopic units."""
    _check_horizon(a, b)
    grid = np.union1d(a.t_macro, b.t_macro)
    return _state_gap(a, b, grid, grid)


def _warp_objective(a, b, s, lam, base):
    # breakpoints: events of a, preimages of events of b, knots
    b_pre = np.interp(b.t_macro, lam, s)
    grid = np.union1d(np.union1d(base, b_pre), s)
    warped = np.interp(grid, s, lam)
    return max(float(np.max(np.abs(lam - s))), _state_gap(a, b, grid, warped))


def _event_matching_warp(a, b, s, horizon):
    """Warp sending each event of ``a`` to the nearest event of ``b``, kept monotone."""
    ta = a.t_macro[(a.t_macro > 0) & (a.t_macro < horizon)]
    tb = b.t_macro[(b.t_macro > 0) & (b.t_macro < horizon)]
    src, dst = [0.0], [0.0]
    if tb.size:
        for t in ta:
            m = tb[np.argmin(np.abs(tb - t))]
            if t > src[-1] and m > dst[-1]:
                src.append(t)
                dst.append(m)
    if dst[-1] >= horizon:
        src.pop()
        dst.pop()
    src.append(horizon)
    dst.append(horizon)
    return np.interp(s, src, dst)


def skorokhod_distance(a: Trajectory, b: Trajectory, warp_grid: int = 16, sweeps: int = 3) -> float:
    """Warp-restricted Skorokhod distance, an upper bound on the true one.

    Minimizes max(sup|lambda(t) - t|, sup d(a(t), b(lambda(t)))) over
    monotone piecewise-linear warps with ``warp_grid`` interior knots, by
    coordinate descent.  Knots sit at event times of ``a`` (padded with
    uniform times).  The search starts from the better of the identity and
    a warp matching each event of ``a`` to the nearest one of ``b``.
    ``warp_grid = 0`` gives the identity warp.
    """
    horizon = _check_horizon(a, b)
    if warp_grid <= 0:
        return sup_distance(a, b)
    inner = a.t_macro[(a.t_macro > 0) & (a.t_macro < horizon)]
    if len(inner) > warp_grid:
        inner = inner[np.linspace(0, len(inner) - 1, warp_grid).round().astype(int)]
    knots = np.unique(inner)
    if len(knots) < warp_grid:
        pad = np.linspace(0, horizon, warp_grid - len(knots) + 2)[1:-1]
        knots = np.union1d(knots, pad)
    s = np.concatenate([[0.0], knots, [horizon]])
    base = a.t_macro
    lam = s.copy()
    best = _warp_objective(a, b, s, lam, base)
    matched = _event_matching_warp(a, b, s, horizon)
    val = _warp_objective(a, b, s, matched, base)
    if val < best:
        best, lam = val, matched
    b_events = b.t_macro
    for _ in range(sweeps):
        for i in range(1, len(s) - 1):
            lo, hi = lam[i - 1], lam[i + 1]
            if hi - lo <= 0:
                continue
            cands = np.concatenate([
                np.linspace(lo, hi, 19)[1:-1],
                b_events[(b_events > lo) & (b_events < hi)],
                [s[i]] if lo < s[i] < hi else [],
            ])
            keep = lam[i]
            for c in cands:
                lam[i] = c
                val = _warp_objective(a, b, s, lam, base)
                if val < best:
                    best = val
                    keep = c
            lam[i] = keep
    return best


# ---------------------------------------------------------------------------
# ensemble estimators


def _binomial(hits: np.ndarray) -> EstimateWithError:
    n = hits.size
    if n == 0:
        raise Empty("no paths")
    p = float(np.count_nonzero(hits)) / n
    return EstimateWithError(p, math.sqrt(p * (1.0 - p) / n), n)


def loop_probability(params: ScalingParams, density: ObstacleDensity, process: str, t_max: float, n_paths: int,
                     seed: int, start_window=(-0.5, -0.5, 0.5, 0.5), threads: int = 1) -> EstimateWithError:
    """Fraction of paths that re-enter an obstacle range within t_max."""
    res = run_ensemble(process, n_paths, t_max, seed, params=params, density=density, window=start_window,
                       threads=threads)
    return _binomial(res.has_loop)


def bump_observable(center, radius: float = 0.5) -> Callable:
    """Smooth bump of the position, bounded by 1, supported in a disk."""
    c = np.asarray(center, dtype=float)

    def g(x, v=None):
        r2 = np.sum((np.asarray(x, dtype=float) - c) ** 2, axis=-1) / (radius * radius)
        out = np.zeros_like(r2)
        m = r2 < 1.0
        out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
        return out

    return g


def pair_seeds(seed: int, n_pairs: int, process: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-particle seeds; pair i has seed derive_seed(seed, i)."""
    base = path_seeds(seed, n_pairs)
    if process == "lorentz":
        return base, base.copy()
    first = np.array([derive_seed(int(s), 0) for s in base], dtype=np.uint64)
    second = np.array([derive_seed(int(s), 1) for s in base], dtype=np.uint64)
    return first, second


def pair_states(seed: int, n_pairs: int, window) -> tuple[np.ndarray, np.ndarray]:
    """Independent start states: particle 1 of pair i uses counter 2i, particle 2 uses 2i+1."""
    both = start_states(seed, 2 * n_pairs, window)
    return both[0::2].copy(), both[1::2].copy()


def chaos_covariance(g1: Callable, g2: Callable, params: ScalingParams, density: ObstacleDensity, t: float,
                     n_pairs: int, seed: int, start_window=(-0.5, -0.5, 0.5, 0.5), process: str = "lorentz",
                     threads: int = 1) -> EstimateWithError:
    """Cov(g1(x1(t)), g2(x2(t))) over pairs sharing one obstacle field.

    Standard error by the delta method (influence function of the plug-in
    covariance).
    """
    s1, s2 = pair_states(seed, n_pairs, start_window)
    k1, k2 = pair_seeds(seed, n_pairs, process)
    r1 = run_ensemble(process, n_pairs, t, seed, params=params, density=density, starts=s1, seeds=k1, threads=threads)
    r2 = run_ensemble(process, n_pairs, t, seed, params=params, density=density, starts=s2, seeds=k2, threads=threads)
    a = np.asarray(g1(r1.final[:, :2], r1.final[:, 2:]), dtype=float)
    b = np.asarray(g2(r2.final[:, :2], r2.final[:, 2:]), dtype=float)
    return _covariance(a, b)


def _covariance(a: np.ndarray, b: np.ndarray) -> EstimateWithError:
    n = a.size
    if n == 0:
        raise Empty("no pairs")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return EstimateWithError(0.0, 0.0, n)
    da = a - a.mean()
    db = b - b.mean()
    prod = da * db
    cov = float(prod.mean())
    se = float(np.std(prod - cov, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimateWithError(cov, se, n)


def marginal_measure(process: str, params: ScalingParams | None, density: ObstacleDensity | None, t: float,
                     n_paths: int, seed: int, start_window=(-0.5, -0.5, 0.5, 0.5), grid=(32, 32, 32), *,
                     window=None, rate: float = 2.0, threads: int = 1) -> EmpiricalMeasure:
    """Histogram of (x(t), angle(t)) over ``n_paths`` independent runs.

    Default binning window: the start window inflated by ``t``.  Path i
    starts from start_states(seed)[i], so different processes with one seed
    share their initial conditions.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    window = measure_window(start_window, t) if window is None else window
    if t == 0:
        return EmpiricalMeasure.from_states(start_states(seed, n_paths, start_window), window, grid)
    res = run_ensemble(process, n_paths, t, seed, params=params, density=density, rate=rate, window=start_window,
                       threads=threads)
    return EmpiricalMeasure.from_states(res.final, window, grid)


# ---------------------------------------------------------------------------
# reports


def report_json(experiment: str, params: dict, seed: int, estimates: Sequence[dict], *, histograms=None,
                extra: dict | None = None) -> str:
    """Deterministic JSON report (sorted keys, no timestamps)."""
    doc = {
        "experiment": experiment,
        "params": params,
        "seed": seed,
        "estimates": list(estimates),
    }
    if histograms:
        doc["histograms"] = list(histograms)
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"
