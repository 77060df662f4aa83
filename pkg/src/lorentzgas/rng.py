"""Counter-based randomness.

Every random number in the package is a pure function of a 64-bit seed and a
counter tuple, computed with the Philox4x64-10 block cipher.  Obstacle offsets
are addressed by (seed, cell, entry_index), so a quenched field over any number
of cells needs no storage and can be queried in any order.

Stability promise: the mapping (seed, counter) -> sample is part of the public
contract.  Changing a sampler or the counter layout must bump
``SAMPLER_VERSION``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import optimize, special

from .geometry import CellIndex, ScalingParams

__all__ = [
    "SAMPLER_VERSION",
    "UNIFORM_DISK",
    "SMOOTH_BUMP",
    "ObstacleDensity",
    "RealizationKey",
    "philox4x64",
    "uniform_pair",
    "derive_seed",
    "parse_seed",
    "offset_at",
    "offsets_for_cells",
    "sample_unit_disk",
    "sample_impact_parameter",
    "sample_exponential",
    "deflection_angle",
]

SAMPLER_VERSION = 1

UNIFORM_DISK = 0
SMOOTH_BUMP = 1
_KIND_CODES = {"uniform-disk": UNIFORM_DISK, "smooth-bump": SMOOTH_BUMP}

# counter word 3 tags, one per independent stream family
TAG_OFFSET = np.uint64(1)
TAG_JUMP = np.uint64(2)
TAG_START = np.uint64(3)
TAG_DERIVE = np.uint64(4)

# second key word; ASCII "LorentzV" xor version
KEY_SALT = np.uint64(0x4C6F72656E747A56 ^ SAMPLER_VERSION)

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
_PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_TWO_M53 = 1.0 / 9007199254740992.0

N_RADIAL_KNOTS = 2048


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    hl = a_hi * b_lo
    lh = a_lo * b_hi
    hh = a_hi * b_hi
    cross = (ll >> _S32) + (hl & _M32) + lh
    hi = hh + (hl >> _S32) + (cross >> _S32)
    lo = (cross << _S32) | (ll & _M32)
    return hi, lo


@njit(cache=True)
def _philox(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        hi0, lo0 = _mulhilo(_PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(_PHILOX_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _PHILOX_W0
        k1 = k1 + _PHILOX_W1
    return c0, c1, c2, c3


def philox4x64(counter, key):
    """Philox4x64-10 block: 4 counter words and 2 key words -> 4 words."""
    c = [np.uint64(int(v) & 0xFFFFFFFFFFFFFFFF) for v in counter]
    k = [np.uint64(int(v) & 0xFFFFFFFFFFFFFFFF) for v in key]
    return tuple(int(v) for v in _philox(c[0], c[1], c[2], c[3], k[0], k[1]))


@njit(cache=True, inline="always")
def _to_unit(x):
    return float(x >> _S11) * _TWO_M53


@njit(cache=True)
def _uniform_pair(seed, a, b, c, tag):
    """Two uniforms in [0, 1) from counter (a, b, c, tag)."""
    r0, r1, _, _ = _philox(np.uint64(a), np.uint64(b), np.uint64(c), tag, np.uint64(seed), KEY_SALT)
    return _to_unit(r0), _to_unit(r1)


def uniform_pair(seed: int, a: int, b: int, c: int, tag: int) -> tuple[float, float]:
    return _uniform_pair(
        np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF),
        np.int64(a),
        np.int64(b),
        np.int64(c),
        np.uint64(tag),
    )


@njit(cache=True)
def _derive_seed(seed, index):
    r0, _, _, _ = _philox(np.uint64(index), np.uint64(0), np.uint64(0), TAG_DERIVE, seed, KEY_SALT)
    return r0


def derive_seed(seed: int, index: int) -> int:
    """Child seed number ``index`` of ``seed`` (one per path or particle)."""
    return int(_derive_seed(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), np.int64(index)))


def parse_seed(text) -> int:
    """Accept an int, a decimal string, or a 0x-prefixed hex string."""
    if isinstance(text, (int, np.integer)):
        value = int(text)
    else:
        s = str(text).strip().lower().replace("_", "")
        value = int(s, 16) if s.startswith("0x") else int(s, 10)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {text!r}")
    return value


# ---------------------------------------------------------------------------
# densities


_E2_ONE = float(special.expn(2, 1.0))


def _bump_radial_cdf(r):
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    inside = r < 1.0
    w = 1.0 / (1.0 - r[inside] ** 2)
    out[inside] = 1.0 - special.expn(2, w) / (w * _E2_ONE)
    return np.where(r <= 0.0, 0.0, out)


# The bump's radial tail is thinner than exponential, so the inverse CDF is
# tabulated against q = -log(1 - F) rather than F; knots equally spaced in q
# up to Q_MAX cover every uniform with 53-bit resolution.
Q_MAX = 37.5


@lru_cache(maxsize=None)
def _bump_inverse_table() -> np.ndarray:
    """Squared radius at equally spaced levels of q = -log(1 - F)."""
    qs = np.linspace(0.0, Q_MAX, N_RADIAL_KNOTS)
    table = np.empty(N_RADIAL_KNOTS)
    table[0] = 0.0
    log_e2 = math.log(_E2_ONE)
    for i in range(1, N_RADIAL_KNOTS):
        # solve 1 - F = exp(-q) for w = 1/(1 - s); 1 - F = E2(w) / (w E2(1))
        g = lambda w, q=qs[i]: math.log(special.expn(2, w)) - math.log(w) - log_e2 + q
        w = optimize.brentq(g, 1.0, 2.0 + 2.0 * qs[i], xtol=1e-15, rtol=1e-15)
        table[i] = (w - 1.0) / w
    table.setflags(write=False)
    return table


_EMPTY_TABLE = np.zeros(2)


@dataclass(frozen=True)
class ObstacleDensity:
    """Rotationally symmetric density of obstacle offsets on the unit disk.

    ``uniform-disk`` is constant 1/pi on |x| < 1.  ``smooth-bump`` is
    proportional to exp(-1/(1 - |x|^2)); it is infinitely differentiable and
    is the default for oracle comparisons.  uniform-disk has a jump at the
    boundary.
    """

    kind: str = "smooth-bump"

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown density kind {self.kind!r}; expected one of {sorted(_KIND_CODES)}")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def table(self) -> np.ndarray:
        if self.code == SMOOTH_BUMP:
            return _bump_inverse_table()
        return _EMPTY_TABLE

    def pdf(self, x) -> np.ndarray:
        """Density at points ``x`` (shape (..., 2))."""
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return self.radial_pdf2(r2)

    def radial_pdf2(self, r2) -> np.ndarray:
        """Planar density as a function of the squared radius."""
        r2 = np.asarray(r2, dtype=float)
        if self.code == UNIFORM_DISK:
            return np.where(r2 < 1.0, 1.0 / math.pi, 0.0)
        out = np.zeros_like(r2)
        m = r2 < 1.0
        out[m] = np.exp(-1.0 / (1.0 - r2[m])) / (math.pi * _E2_ONE)
        return out

    def radial_cdf(self, r) -> np.ndarray:
        """P(|X| <= r)."""
        r = np.asarray(r, dtype=float)
        if self.code == UNIFORM_DISK:
            return np.clip(r, 0.0, 1.0) ** 2
        return _bump_radial_cdf(r)


# ---------------------------------------------------------------------------
# samplers (jitted cores + Python wrappers)


@njit(cache=True)
def _sample_disk(u1, u2, kind, table):
    angle = 2.0 * math.pi * u1
    if kind == UNIFORM_DISK:
        r = math.sqrt(u2)
    else:
        pos = -math.log1p(-u2) / Q_MAX * (table.shape[0] - 1)
        i = int(pos)
        if i >= table.shape[0] - 1:
            s = table[table.shape[0] - 1]
        else:
            f = pos - i
            s = table[i] + f * (table[i + 1] - table[i])
        r = math.sqrt(s)
    return r * math.cos(angle), r * math.sin(angle)


@njit(cache=True)
def _offset(seed, j, k, idx, kind, table, patch_radius):
    u1, u2 = _uniform_pair(seed, j, k, idx, TAG_OFFSET)
    sx, sy = _sample_disk(u1, u2, kind, table)
    return patch_radius * sx, patch_radius * sy


@njit(cache=True)
def _offsets_many(seed, cells, idx, kind, table, patch_radius, out):
    for n in range(cells.shape[0]):
        ox, oy = _offset(seed, cells[n, 0], cells[n, 1], idx[n], kind, table, patch_radius)
        out[n, 0] = ox
        out[n, 1] = oy


@dataclass(frozen=True)
class RealizationKey:
    seed: int
    cell: CellIndex
    entry_index: int = 0


def offset_at(key: RealizationKey, density: ObstacleDensity, params: ScalingParams) -> np.ndarray:
    """Microscopic offset of the obstacle centre from its lattice point."""
    ox, oy = _offset(
        np.uint64(key.seed & 0xFFFFFFFFFFFFFFFF),
        np.int64(key.cell.j),
        np.int64(key.cell.k),
        np.int64(key.entry_index),
        density.code,
        density.table,
        params.patch_radius,
    )
    return np.array([ox, oy])


def offsets_for_cells(seed: int, cells, entry_indices, density: ObstacleDensity, params: ScalingParams) -> np.ndarray:
    """Vectorised :func:`offset_at` over an (N, 2) integer array of cells."""
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    idx = np.broadcast_to(np.asarray(entry_indices, dtype=np.int64), (cells.shape[0],)).copy()
    out = np.empty((cells.shape[0], 2))
    _offsets_many(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), cells, idx, density.code, density.table, params.patch_radius, out)
    return out


def sample_unit_disk(u1: float, u2: float, density: ObstacleDensity) -> np.ndarray:
    """Point of the unit disk from two uniforms: angle 2 pi u1, radius by inverse CDF of u2."""
    return np.array(_sample_disk(float(u1), float(u2), density.code, density.table))


def sample_impact_parameter(u):
    """Impact parameter uniform on [-1, 1]."""
    return 2.0 * np.asarray(u, dtype=float) - 1.0 if np.ndim(u) else 2.0 * float(u) - 1.0


def sample_exponential(u, rate: float):
    """Exponential waiting time with the given rate; u in (0, 1]."""
    if np.ndim(u):
        return -np.log(np.asarray(u, dtype=float)) / rate
    return -math.log(u) / rate


def deflection_angle(r):
    """Signed angle from the backscatter direction -v to the outgoing velocity.

    With impact parameter r = sin(alpha), alpha the angle of incidence, the
    outgoing direction sits 2*alpha away from -v.  For r uniform on [-1, 1]
    this angle has density cos(a/2)/4 on (-pi, pi).
    """
    return 2.0 * np.arcsin(np.clip(r, -1.0, 1.0))
