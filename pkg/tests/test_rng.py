import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from lorentzgas.geometry import CellIndex, validate_params
from lorentzgas.rng import (
    KEY_SALT,
    TAG_OFFSET,
    ObstacleDensity,
    RealizationKey,
    deflection_angle,
    derive_seed,
    offset_at,
    offsets_for_cells,
    parse_seed,
    philox4x64,
    sample_exponential,
    sample_impact_parameter,
    sample_unit_disk,
    uniform_pair,
)

PARAMS = validate_params(1e-4, 0.75)
N = 1_000_000


def _grid_cells(n):
    side = int(math.isqrt(n))
    j, k = np.meshgrid(np.arange(side) - side // 2, np.arange(side) - side // 2, indexing="ij")
    return np.column_stack([j.ravel(), k.ravel()])


def test_philox_matches_numpy_reference():
    # numpy increments its counter before producing the first block
    bg = np.random.Philox(key=np.array([1, 2], dtype=np.uint64), counter=np.zeros(4, dtype=np.uint64))
    ref = bg.random_raw(4)
    got = philox4x64((1, 0, 0, 0), (1, 2))
    assert tuple(int(v) for v in ref) == got


def test_philox_counter_carry_matches_numpy():
    start = np.array([2**64 - 1, 7, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=np.array([9, 11], dtype=np.uint64), counter=start)
    ref = bg.random_raw(4)
    assert tuple(int(v) for v in ref) == philox4x64((0, 8, 0, 0), (9, 11))


def test_offset_is_pure():
    d = ObstacleDensity()
    key = RealizationKey(123, CellIndex(5, -7), 0)
    a = offset_at(key, d, PARAMS)
    b = offset_at(key, d, PARAMS)
    assert a.tobytes() == b.tobytes()
    many = offsets_for_cells(123, [[5, -7], [0, 0]], [0, 0], d, PARAMS)
    assert many[0].tobytes() == a.tobytes()


def test_offsets_depend_on_every_key_part():
    d = ObstacleDensity()
    base = offset_at(RealizationKey(1, CellIndex(0, 0), 0), d, PARAMS)
    for key in (RealizationKey(2, CellIndex(0, 0), 0), RealizationKey(1, CellIndex(1, 0), 0),
                RealizationKey(1, CellIndex(0, 1), 0), RealizationKey(1, CellIndex(0, 0), 1)):
        assert offset_at(key, d, PARAMS).tobytes() != base.tobytes()


def test_negative_cells_address_distinct_streams():
    # negative indices enter the counter in two's complement
    r0 = philox4x64((2**64 - 1, 0, 0, int(TAG_OFFSET)), (3, int(KEY_SALT)))[0]
    assert uniform_pair(3, -1, 0, 0, int(TAG_OFFSET))[0] == (r0 >> 11) * 2.0**-53
    assert uniform_pair(3, -1, 0, 0, int(TAG_OFFSET)) != uniform_pair(3, 1, 0, 0, int(TAG_OFFSET))


@pytest.mark.parametrize("kind", ["uniform-disk", "smooth-bump"])
def test_offset_support(kind):
    d = ObstacleDensity(kind)
    off = offsets_for_cells(99, _grid_cells(N), 0, d, PARAMS)
    assert np.all(np.hypot(off[:, 0], off[:, 1]) <= PARAMS.patch_radius)


def test_uniform_disk_radial_law():
    d = ObstacleDensity("uniform-disk")
    off = offsets_for_cells(7, _grid_cells(N), 0, d, PARAMS)
    r = np.hypot(off[:, 0], off[:, 1]) / PARAMS.patch_radius
    assert stats.kstest(r, lambda x: np.clip(x, 0, 1) ** 2).statistic < 0.002


def test_smooth_bump_radial_law():
    d = ObstacleDensity("smooth-bump")
    off = offsets_for_cells(8, _grid_cells(N), 0, d, PARAMS)
    r = np.hypot(off[:, 0], off[:, 1]) / PARAMS.patch_radius
    edges = np.linspace(0, 1, 41)
    c = 1.0 / (math.pi * special.expn(2, 1.0))
    probs = np.array([
        integrate.quad(lambda s: c * math.exp(-1 / (1 - s * s)) * 2 * math.pi * s, a, b, epsabs=1e-14)[0]
        for a, b in zip(edges[:-1], edges[1:])
    ])
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)
    observed, _ = np.histogram(r, bins=edges)
    keep = probs * r.size > 5
    expected = probs[keep] * r.size
    chi2 = ((observed[keep] - expected) ** 2 / expected).sum()
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.001


def test_bump_density_normalized_and_radial():
    d = ObstacleDensity()
    total = integrate.quad(lambda r: float(d.radial_pdf2(r * r)) * 2 * math.pi * r, 0, 1, epsabs=1e-14)[0]
    assert total == pytest.approx(1.0, abs=1e-12)
    assert d.pdf([0.3, 0.4]) == pytest.approx(d.pdf([0.5, 0.0]))
    assert d.radial_cdf(0.6) == pytest.approx(
        integrate.quad(lambda r: float(d.radial_pdf2(r * r)) * 2 * math.pi * r, 0, 0.6)[0], abs=1e-12)


def test_entry_indices_uncorrelated():
    d = ObstacleDensity()
    cells = _grid_cells(N)
    a = offsets_for_cells(5, cells, 0, d, PARAMS)
    b = offsets_for_cells(5, cells, 1, d, PARAMS)
    for axis in range(2):
        assert abs(np.corrcoef(a[:, axis], b[:, axis])[0, 1]) < 0.005


def test_sample_unit_disk_endpoints():
    d = ObstacleDensity("uniform-disk")
    np.testing.assert_array_equal(sample_unit_disk(0.0, 0.0, d), [0.0, 0.0])
    p = sample_unit_disk(0.25, 1 - 1e-16, d)
    assert math.hypot(*p) == pytest.approx(1.0, abs=1e-12)
    assert math.atan2(p[1], p[0]) == pytest.approx(math.pi / 2)
    q = sample_unit_disk(0.6, 0.999999, ObstacleDensity())
    assert math.hypot(*q) < 1.0


def test_impact_parameter_and_exponential():
    assert sample_impact_parameter(0.5) == 0.0
    assert sample_impact_parameter(0.0) == -1.0
    assert sample_exponential(1.0, 3.0) == 0.0
    assert sample_exponential(math.exp(-2), 2.0) == pytest.approx(1.0, abs=1e-15)
    u = np.random.default_rng(0).random(N)
    assert abs(sample_exponential(1.0 - u, 2.0).mean() - 0.5) < 0.002


def test_deflection_angle_density():
    angles = deflection_angle(sample_impact_parameter(np.random.default_rng(4).random(N)))
    edges = np.linspace(-math.pi, math.pi, 61)
    probs = np.diff(np.sin(edges / 2)) / 2  # antiderivative of cos(a/2)/4
    observed, _ = np.histogram(angles, bins=edges)
    expected = probs * N
    chi2 = ((observed - expected) ** 2 / expected).sum()
    assert stats.chi2.sf(chi2, len(probs) - 1) > 0.001


def test_seed_helpers():
    assert parse_seed("0x10") == 16
    assert parse_seed("42") == 42
    with pytest.raises(ValueError):
        parse_seed(str(2**64))
    kids = {derive_seed(11, i) for i in range(1000)}
    assert len(kids) == 1000
    assert derive_seed(11, 3) == derive_seed(11, 3)
    assert int(KEY_SALT) != 0


def test_deflection_angle_matches_geometric_reflection():
    r = np.linspace(-0.999, 0.999, 301)
    v = np.array([0.0, 1.0])
    # outward normal at the impact point for impact parameter r = v x omega
    omega = np.column_stack([-np.sqrt(1 - r * r) * v[0] - r * v[1], -np.sqrt(1 - r * r) * v[1] + r * v[0]])
    vout = v - 2 * (omega @ v)[:, None] * omega
    back = -v
    measured = np.arctan2(back[0] * vout[:, 1] - back[1] * vout[:, 0], vout @ back)
    np.testing.assert_allclose(np.abs(measured), np.abs(deflection_angle(r)), atol=1e-12)
