"""Deterministic oracles for the kinetic limit.

Single-passage collision probabilities, sums of them along a straight path
(directly and through a Fourier series with Dirichlet kernels), the
no-collision product, and the 0- and 1-jump terms of the Boltzmann
semigroup.  Everything here is quadrature; nothing is sampled.

Conventions.  A straight passage through a cell is described in the
canonical frame (see :mod:`lorentzgas.geometry`) by the angle ``beta`` in
[0, pi/4] and the crossing coordinate of the lower edge.  Here ``y`` always
denotes that coordinate measured from the centred value y0 = -tan(beta)/2,
so the path passes the cell centre at distance ``|y| cos(beta)``.  The
recurrence of successive crossings works with raw lower-edge coordinates in
[-1/2, 1/2); :func:`crossing_sequence` produces them.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateCell, QuadratureWarning, TruncationWarning
from .geometry import ScalingParams
from .rng import UNIFORM_DISK, ObstacleDensity

__all__ = [
    "MarginalDensity",
    "PassageProfile",
    "FourierData",
    "FourierSum",
    "OracleResult",
    "marginal_density",
    "p_single_passage",
    "crossing_sequence",
    "passage_sum_direct",
    "passage_sums_direct",
    "passage_sum_fourier",
    "fourier_data",
    "dirichlet_kernel",
    "p0_product",
    "v0_term",
    "v1_term",
    "default_k_max",
]

_E2_ONE = float(special.expn(2, 1.0))
_BUMP_C = 1.0 / (math.pi * _E2_ONE)

_N_KNOTS = 4096
# frequency beyond which the bump's line-marginal transform is below 1e-15
_BUMP_XI_CUT = 100.0
# the uniform disk has algebraic decay; this cap keeps sums affordable
_DISK_XI_CUT = 400.0
# per-crossing tail below this is roundoff; keeps zero-valued sums quiet
_TAIL_FLOOR = 1e-14


def _gl(n, a=0.0, b=1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# line marginals


class MarginalDensity:
    """Line marginal phi0(x) = integral of the planar density over x2.

    By rotational symmetry it does not depend on the direction of the line.
    ``pdf``/``cdf``/``ft`` act on the unit scale; ``scaled_*`` on the
    microscopic scale where the patch radius is eps**(1 - nu).
    """

    def __init__(self, density: ObstacleDensity):
        self.density = density
        if density.code != UNIFORM_DISK:
            self._s_nodes, self._s_weights = _gl(400)
            knots = np.linspace(-1.0, 1.0, _N_KNOTS + 1)
            g, w = np.polynomial.legendre.leggauss(10)
            h = knots[1] - knots[0]
            pts = 0.5 * (knots[:-1, None] + knots[1:, None]) + 0.5 * h * g
            incr = (self._bump_pdf(pts.ravel()).reshape(pts.shape) * w).sum(axis=1) * 0.5 * h
            cdf = np.concatenate([[0.0], np.cumsum(incr)])
            self.mass_error = float(cdf[-1] - 1.0)
            self._spline = CubicHermiteSpline(knots, cdf / cdf[-1], self._bump_pdf(knots) / cdf[-1])
        else:
            self.mass_error = 0.0
        r, w = _gl(3000)
        self._hankel_r = r
        self._hankel_w = w * r * self.density.radial_pdf2(r * r) * 2.0 * math.pi
        self._hankel_w /= self._hankel_w.sum()

    @property
    def kind(self) -> str:
        return self.density.kind

    def _bump_pdf(self, x):
        a = 1.0 - x * x
        out = np.zeros_like(x)
        m = a > 0.0
        am = a[m][:, None]
        inner = np.exp(-1.0 / (am * (1.0 - self._s_nodes**2))) @ self._s_weights
        out[m] = 2.0 * _BUMP_C * np.sqrt(a[m]) * inner
        return out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.density.code == UNIFORM_DISK:
            return np.where(np.abs(x) < 1.0, (2.0 / math.pi) * np.sqrt(np.clip(1.0 - x * x, 0.0, None)), 0.0)
        return self._bump_pdf(np.atleast_1d(x)).reshape(x.shape)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, -1.0, 1.0)
        if self.density.code == UNIFORM_DISK:
            val = 0.5 + (xc * np.sqrt(1.0 - xc * xc) + np.arcsin(xc)) / math.pi
        else:
            val = self._spline(xc)
        return np.where(x <= -1.0, 0.0, np.where(x >= 1.0, 1.0, val))

    def ft(self, xi):
        """Fourier transform of the line marginal: int phi0(x) exp(-2 pi i xi x) dx.

        Real and even; equal to the Hankel transform of the planar density.
        """
        xi = np.abs(np.asarray(xi, dtype=float))
        if self.density.code == UNIFORM_DISK:
            safe = np.where(xi == 0.0, 1.0, xi)
            return np.where(xi == 0.0, 1.0, special.j1(2.0 * math.pi * safe) / (math.pi * safe))
        flat = xi.ravel()
        out = np.empty_like(flat)
        step = 256
        for a in range(0, flat.size, step):
            blk = flat[a:a + step]
            out[a:a + step] = special.j0(2.0 * math.pi * blk[:, None] * self._hankel_r) @ self._hankel_w
        return out.reshape(xi.shape)

    @property
    def xi_cut(self) -> float:
        return _DISK_XI_CUT if self.density.code == UNIFORM_DISK else _BUMP_XI_CUT

    def scaled_pdf(self, x, params: ScalingParams):
        a = params.patch_radius
        return self.pdf(np.asarray(x, dtype=float) / a) / a

    def scaled_cdf(self, x, params: ScalingParams):
        return self.cdf(np.asarray(x, dtype=float) / params.patch_radius)


@lru_cache(maxsize=None)
def marginal_density(density: ObstacleDensity) -> MarginalDensity:
    """Cached line marginal of an obstacle density."""
    return MarginalDensity(density)


# ---------------------------------------------------------------------------
# passage profiles


@dataclass(frozen=True)
class PassageProfile:
    """Weight psi0 on [-1, 1] integrated against the obstacle position.

    ``indicator`` gives the collision probability; ``zero`` is the trivial
    profile; ``tabulated`` interpolates ``values`` linearly on an equispaced
    grid of [-1, 1].
    """

    kind: str = "indicator"
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("indicator", "zero", "tabulated"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated" and len(self.values) < 2:
            raise ValueError("tabulated profile needs at least two values")

    @classmethod
    def indicator(cls) -> "PassageProfile":
        return cls("indicator")

    @classmethod
    def zero(cls) -> "PassageProfile":
        return cls("zero")

    @classmethod
    def tabulated(cls, values) -> "PassageProfile":
        return cls("tabulated", tuple(float(v) for v in values))

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, len(self.values))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 1.0
        if self.kind == "indicator":
            return inside.astype(float)
        if self.kind == "zero":
            return np.zeros_like(x)
        return np.where(inside, np.interp(x, self.knots, np.asarray(self.values)), 0.0)

    def integral(self) -> float:
        if self.kind == "indicator":
            return 2.0
        if self.kind == "zero":
            return 0.0
        v = np.asarray(self.values)
        h = self.knots[1] - self.knots[0]
        return float(h * (v.sum() - 0.5 * (v[0] + v[-1])))

    def ft(self, xi):
        """Fourier transform, int psi0(x) exp(-2 pi i xi x) dx (complex)."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "zero":
            return np.zeros(xi.shape, dtype=complex)
        if self.kind == "indicator":
            return (2.0 * np.sinc(2.0 * xi)).astype(complex)
        # sum of hat functions; the end hats are cut at +-1
        v = np.asarray(self.values)
        x = self.knots
        h = x[1] - x[0]
        out = np.zeros(xi.shape, dtype=complex)
        flat = xi.ravel()
        res = np.zeros(flat.shape, dtype=complex)
        full = h * np.sinc(h * flat) ** 2
        for j in range(1, len(v) - 1):
            res += v[j] * full * np.exp(-2j * math.pi * flat * x[j])
        res += v[0] * _half_hat_ft(flat, x[0], h, +1)
        res += v[-1] * _half_hat_ft(flat, x[-1], h, -1)
        out[...] = res.reshape(xi.shape)
        return out


def _half_hat_ft(xi, x0, h, side):
    # hat supported on [x0, x0 + h] (side=+1) or [x0 - h, x0] (side=-1), peak at x0
    nodes, weights = _gl(64, 0.0, h)
    s = side * nodes
    vals = (1.0 - nodes / h) * weights
    return np.exp(-2j * math.pi * np.outer(xi, x0 + s)) @ vals


# ---------------------------------------------------------------------------
# single passage


def _rho(y, beta):
    return np.asarray(y, dtype=float) * math.cos(beta)


def p_single_passage(y, beta: float, params: ScalingParams, density: ObstacleDensity,
                     profile: PassageProfile | None = None):
    """Collision probability of one straight passage through a cell.

    ``y`` is the centred crossing coordinate, so the path passes at distance
    |y cos beta| from the lattice point.  With the indicator profile this is
    the probability that a random obstacle centre lies within sqrt(eps) of the
    path; other profiles weight the offset along the normal.
    """
    if not 0.0 <= beta <= math.pi / 4 + 1e-15:
        raise ValueError("beta must lie in [0, pi/4]")
    profile = profile or PassageProfile.indicator()
    rho = _rho(y, beta)
    marg = marginal_density(density)
    if profile.kind == "zero":
        return np.zeros_like(rho) if rho.ndim else 0.0
    s = params.sqrt_eps
    if profile.kind == "indicator":
        val = marg.scaled_cdf(rho + s, params) - marg.scaled_cdf(rho - s, params)
        val = np.where(np.abs(rho) >= params.range_radius, 0.0, np.clip(val, 0.0, 1.0))
        return val if val.ndim else float(val)
    # piecewise-linear profile: Gauss-Legendre on each interpolation interval
    knots = profile.knots
    g, w = np.polynomial.legendre.leggauss(12)
    h = knots[1] - knots[0]
    nodes = (0.5 * (knots[:-1, None] + knots[1:, None]) + 0.5 * h * g).ravel()
    weights = np.tile(0.5 * h * w, len(knots) - 1)
    pv = profile(nodes) * weights
    r = np.atleast_1d(rho)
    out = np.array([s * np.dot(pv, marg.scaled_pdf(ri + s * nodes, params)) for ri in r])
    return out.reshape(rho.shape) if rho.ndim else float(out[0])


def crossing_sequence(y1: float, beta: float, n: int) -> np.ndarray:
    """Raw lower-edge crossings y_1..y_n of a straight path in [-1/2, 1/2)."""
    k = np.arange(n)
    return -0.5 + np.mod(0.5 + y1 + k * math.tan(beta), 1.0)


def _centred(y_raw, beta):
    # periodic distance to the centred crossing, in [-1/2, 1/2)
    return np.mod(y_raw + 0.5 * math.tan(beta) + 0.5, 1.0) - 0.5


def _row_values(y_raw, beta, params, density, profile):
    """Single-passage values of every cell in the rows crossed at ``y_raw``.

    A row holds cells at centred offsets y + j, j integer; the support is
    narrower than one period, so j in {-1, 0, 1} covers it.  Returns shape
    (len(y_raw), 3).
    """
    yc = _centred(np.atleast_1d(y_raw), beta)
    shifted = yc[:, None] + np.array([-1.0, 0.0, 1.0])
    vals = p_single_passage(shifted.ravel(), beta, params, density, profile)
    return np.asarray(vals, dtype=float).reshape(shifted.shape)


def passage_sum_direct(y1: float, beta: float, n: int, profile: PassageProfile, params: ScalingParams,
                       density: ObstacleDensity) -> float:
    """Sum of single-passage values over n successive row crossings.

    ``y1`` is the raw lower-edge coordinate of the first crossing.  Every
    cell of a crossed row contributes; for small eps only the cell entered
    through its lower edge is nonzero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    vals = _row_values(crossing_sequence(y1, beta, n), beta, params, density, profile)
    return float(math.fsum(vals.ravel()))


def passage_sums_direct(y1s, beta: float, n: int, profile: PassageProfile, params: ScalingParams,
                        density: ObstacleDensity) -> np.ndarray:
    """Vectorised :func:`passage_sum_direct` over many first crossings."""
    y1s = np.atleast_1d(np.asarray(y1s, dtype=float))
    ys = -0.5 + np.mod(0.5 + y1s[:, None] + np.arange(n) * math.tan(beta), 1.0)
    vals = _row_values(ys.ravel(), beta, params, density, profile)
    return vals.reshape(len(y1s), -1).sum(axis=1)


def dirichlet_kernel(m: int, x):
    """D_m(x) = sin((2m+1) pi x) / sin(pi x), equal to 2m+1 at integers."""
    x = np.asarray(x, dtype=float)
    frac = x - np.round(x)
    den = np.sin(math.pi * frac)
    small = np.abs(frac) < 1e-8
    safe = np.where(small, 1.0, den)
    # period 1: an integer shift flips numerator and denominator together
    val = np.sin((2 * m + 1) * math.pi * frac) / safe
    # near integers use the Taylor series of the ratio
    t = math.pi * frac
    n = 2 * m + 1
    series = n * (1.0 - (n * n - 1.0) * t * t / 6.0)
    out = np.where(small, series, val)
    return out if out.ndim else float(out)


def default_k_max(beta: float, params: ScalingParams, density: ObstacleDensity) -> int:
    """Truncation index where the marginal transform has decayed below 1e-15."""
    cut = marginal_density(density).xi_cut
    return max(1, int(math.ceil(cut * math.cos(beta) / params.patch_radius)))


@dataclass
class FourierData:
    """Coefficients p_hat_k, k = 0..k_max, of the periodised single-passage function.

    The function y -> p(wrap(y - y0)), with y the raw crossing coordinate,
    has period 1; p_hat_{-k} is the conjugate of p_hat_k.
    """

    k: np.ndarray
    coefficients: np.ndarray
    phi_hat: np.ndarray
    psi_hat: np.ndarray
    beta: float
    params: ScalingParams
    density_kind: str
    profile_kind: str

    @property
    def k_max(self) -> int:
        return int(self.k[-1])

    @property
    def p_hat_0(self) -> float:
        return float(self.coefficients[0].real)


def fourier_data(beta: float, params: ScalingParams, density: ObstacleDensity, profile: PassageProfile,
                 k_max: int) -> FourierData:
    k = np.arange(k_max + 1, dtype=float)
    cb = math.cos(beta)
    y0 = -0.5 * math.tan(beta)
    marg = marginal_density(density)
    phi_hat = marg.ft(params.patch_radius * k / cb)
    psi_hat = profile.ft(-params.sqrt_eps * k / cb)
    coeff = (params.sqrt_eps / cb) * psi_hat * phi_hat * np.exp(-2j * math.pi * k * y0)
    return FourierData(k.astype(np.int64), coeff, phi_hat, psi_hat, beta, params, density.kind, profile.kind)


@dataclass
class FourierSum:
    value: float
    leading_term: float
    remainder: float
    tail_estimate: float
    k_max: int
    even_correction: float = 0.0

    def __iter__(self):
        yield self.value
        yield self.leading_term
        yield self.remainder


def _odd_fourier_sum(y1, beta, n, data):
    m = (n - 1) // 2
    tb = math.tan(beta)
    k = data.k.astype(float)
    d = dirichlet_kernel(m, k * tb)
    phase = np.exp(2j * math.pi * k * (y1 + m * tb))
    terms = (data.coefficients * phase).real * d
    return terms[0] + 2.0 * math.fsum(terms[1:])


def passage_sum_fourier(y1: float, beta: float, n: int, profile: PassageProfile, params: ScalingParams,
                        density: ObstacleDensity, k_max: int | None = None) -> FourierSum:
    """Same sum as :func:`passage_sum_direct` via Fourier series and Dirichlet kernels.

    For n = 2m+1, sum_{j<n} e^{2 pi i k (y1 + j tan b)} = e^{2 pi i k (y1 + m tan b)} D_m(k tan b).
    Even n: the odd sum over n-1 crossings plus the last term computed
    directly.  The tail estimate is n times the mass of the next k_max
    coefficients; a TruncationWarning is issued above 1e-8 relative (or
    1e-14 per crossing, whichever is larger).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if k_max is None:
        k_max = default_k_max(beta, params, density)
    n_odd = n if n % 2 == 1 else n - 1
    data = fourier_data(beta, params, density, profile, 2 * k_max)
    head = FourierData(data.k[: k_max + 1], data.coefficients[: k_max + 1], data.phi_hat[: k_max + 1],
                       data.psi_hat[: k_max + 1], beta, params, density.kind, profile.kind)
    value = _odd_fourier_sum(y1, beta, n_odd, head)
    extra = 0.0
    if n_odd != n:
        y_last = crossing_sequence(y1, beta, n)[-1:]
        extra = float(math.fsum(_row_values(y_last, beta, params, density, profile).ravel()))
        value += extra
    tail = 2.0 * n * float(np.abs(data.coefficients[k_max + 1:]).sum())
    leading = params.sqrt_eps * n / math.cos(beta) * profile.integral()
    if tail > max(1e-8 * abs(value), _TAIL_FLOOR * n):
        warnings.warn(f"Fourier tail estimate {tail:.3g} exceeds 1e-8 relative at k_max={k_max}",
                      TruncationWarning, stacklevel=2)
    return FourierSum(float(value), leading, float(value - leading), tail, int(k_max), extra)


# ---------------------------------------------------------------------------
# no-collision product


def p0_product(y1: float, beta: float, n: int, params: ScalingParams, density: ObstacleDensity) -> float:
    """Probability of no collision over n successive crossings of a straight path."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _row_values(crossing_sequence(y1, beta, n), beta, params, density, PassageProfile.indicator()).ravel()
    if np.any(p >= 1.0):
        raise DegenerateCell("a single-passage collision probability reached 1")
    return float(math.exp(math.fsum(np.log1p(-p))))


# ---------------------------------------------------------------------------
# semigroup terms


@dataclass
class OracleResult:
    """A computed value with its error estimate and provenance."""

    value: float
    error_estimate: float
    method: str
    inputs: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)

    def to_record(self) -> dict:
        return {"inputs": self.inputs, "value": self.value, "error_estimate": self.error_estimate,
                "method": self.method}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _state_arrays(state):
    x = np.asarray(state.x, dtype=float)
    v = np.asarray(state.v, dtype=float)
    return x, v / math.hypot(v[0], v[1])


def v0_term(g: Callable, state, t: float, rate: float = 2.0) -> float:
    """No-jump term exp(-rate t) g(x + t v, v).

    ``g`` takes arrays of positions and velocities of shape (N, 2) and
    returns N values.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    x, v = _state_arrays(state)
    val = np.asarray(g((x + t * v)[None, :], v[None, :]), dtype=float).reshape(-1)[0]
    return float(math.exp(-rate * t) * val)


def scattered_velocity(v, r):
    """Outgoing velocity for impact parameter(s) r and incoming unit velocity v."""
    r = np.asarray(r, dtype=float)
    c = np.sqrt(np.clip(1.0 - r * r, 0.0, None))
    vp = np.array([-v[1], v[0]])
    omega = -c[..., None] * v + r[..., None] * vp
    dot = omega @ v
    return v - 2.0 * dot[..., None] * omega


def _v1_quad(g, x, v, t, rate, n):
    tau, wt = _gl(n, 0.0, t)
    # r = sin(theta) removes the square-root endpoint behaviour in r
    th, wth = _gl(n, -0.5 * math.pi, 0.5 * math.pi)
    r = np.sin(th)
    wr = wth * np.cos(th)
    vout = scattered_velocity(v, r)
    T, R = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pos = x + tau[T, None] * v + (t - tau[T])[..., None] * vout[R]
    vel = vout[R]
    vals = np.asarray(g(pos.reshape(-1, 2), vel.reshape(-1, 2)), dtype=float).reshape(n, n)
    return math.exp(-rate * t) * 0.5 * rate * float(wt @ vals @ wr)


def v1_term(g: Callable, state, t: float, quad_nodes: int = 64, rate: float = 2.0) -> OracleResult:
    """Exactly-one-jump term of the Boltzmann semigroup.

    exp(-rate t) (rate/2) int_0^t int_{-1}^{1} g(x + tau v + (t - tau) v'(r), v'(r)) dr dtau,
    by tensor Gauss-Legendre quadrature; the error estimate compares
    ``quad_nodes`` with ``2 * quad_nodes`` nodes.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if quad_nodes < 16:
        raise ValueError("quad_nodes must be >= 16")
    x, v = _state_arrays(state)
    inputs = {"x": x.tolist(), "v": v.tolist(), "t": t, "rate": rate, "quad_nodes": quad_nodes}
    if t == 0:
        return OracleResult(0.0, 0.0, "gauss-legendre", inputs)
    coarse = _v1_quad(g, x, v, t, rate, quad_nodes)
    fine = _v1_quad(g, x, v, t, rate, 2 * quad_nodes)
    err = abs(fine - coarse)
    if err > 1e-6 * abs(fine):
        warnings.warn(f"v1 quadrature error estimate {err:.3g} exceeds 1e-6 relative", QuadratureWarning,
                      stacklevel=2)
    return OracleResult(fine, err, "gauss-legendre tensor, node doubling", inputs)


def records_to_json(records) -> str:
    """Serialize oracle records (dicts or OracleResult) deterministically."""
    out = [r.to_record() if isinstance(r, OracleResult) else r for r in records]
    return json.dumps(out, sort_keys=True, indent=2)


def params_record(params: ScalingParams) -> dict:
    return asdict(params)
