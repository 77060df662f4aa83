import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentzgas.errors import NoEntry, OutOfRange, RangeOverflow
from lorentzgas.geometry import (
    SYMMETRIES,
    CellIndex,
    apply_symmetry,
    canonical_symmetry,
    cell_center,
    cell_of,
    crossing_coordinates,
    invert_symmetry,
    restore_crossing,
    row_crossings,
    to_macro,
    to_micro,
    validate_params,
)


def test_validate_accepts_default_regime():
    p = validate_params(1e-4, 0.75)
    assert p.patch_radius == pytest.approx(1e-1, rel=1e-14)
    assert p.obstacle_radius == pytest.approx(1e-2, rel=1e-14)
    assert p.range_radius == pytest.approx(0.11, rel=1e-14)
    assert p.macro_obstacle_radius == pytest.approx(1e-4)
    assert p.macro_range_radius == pytest.approx(0.11 * 1e-2)


def test_range_overflow():
    with pytest.raises(RangeOverflow):
        validate_params(0.3, 0.6)


@pytest.mark.parametrize("eps,nu", [(1e-4, 0.4), (0.0, 0.75), (1.0, 0.75), (1e-3, 1.0), (-1, 0.7), (math.nan, 0.7)])
def test_out_of_range(eps, nu):
    with pytest.raises(OutOfRange):
        validate_params(eps, nu)


def test_cell_of_examples():
    assert cell_of((0.2, 0.7)) == CellIndex(0, 1)
    assert cell_of((0.5, -0.5)) == CellIndex(1, 0)
    p = validate_params(1e-2, 0.75)
    assert cell_of((0.02, 0.07), "macro", p) == CellIndex(0, 1)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_point_lies_in_its_cell(x, y):
    c = cell_of((x, y))
    d = np.abs(np.array([x, y]) - c.center())
    assert np.all(d <= 0.5 + 1e-9)


def test_macro_round_trip():
    p = validate_params(1e-3, 0.7)
    x = np.array([0.123456789, -987.654321])
    np.testing.assert_allclose(to_micro(to_macro(x, p), p), x, rtol=1e-15)
    np.testing.assert_allclose(cell_center(CellIndex(3, -2), "macro", p), [3 * p.sqrt_eps, -2 * p.sqrt_eps])


def test_symmetries_form_a_group():
    mats = [m.astype(int) for m in SYMMETRIES]
    keys = {m.tobytes() for m in mats}
    assert len(keys) == 8
    for a in mats:
        for b in mats:
            assert (a @ b).tobytes() in keys


@given(st.floats(0, 2 * math.pi, exclude_max=True))
def test_canonical_symmetry_lands_in_octant(angle):
    d = np.array([math.cos(angle), math.sin(angle)])
    op = canonical_symmetry(d)
    dc = apply_symmetry(op, d)
    assert 0.0 <= dc[0] <= dc[1]
    np.testing.assert_array_equal(invert_symmetry(op, dc), d)


def test_vertical_entry():
    c = crossing_coordinates((0.3, -0.9), (0.0, 1.0), CellIndex(0, 0))
    assert c.y == pytest.approx(0.3, abs=1e-15)
    assert c.beta == 0.0
    assert c.rho == pytest.approx(0.3, abs=1e-15)


def test_thirty_degree_entry():
    b = math.pi / 6
    d = (math.sin(b), math.cos(b))
    c = crossing_coordinates((0.1, -0.5), d, CellIndex(0, 0))
    assert c.beta == pytest.approx(b, abs=1e-15)
    y0 = -math.tan(b) / 2
    assert c.y0 == pytest.approx(y0)
    assert c.rho == pytest.approx((c.y - y0) * math.cos(b), abs=1e-15)
    assert c.y == pytest.approx(0.1, abs=1e-15)


def test_eighty_degree_round_trip():
    a = math.radians(80)
    d = np.array([math.sin(a), math.cos(a)])
    origin = np.array([-0.6, 0.05])
    c = crossing_coordinates(origin, d, CellIndex(0, 0))
    assert 0.0 <= c.beta <= math.pi / 4
    o2, d2 = restore_crossing(c)
    np.testing.assert_allclose(o2, origin, atol=1e-14)
    np.testing.assert_allclose(d2, d, atol=1e-14)


def test_rho_is_distance_to_centre():
    rng = np.random.default_rng(3)
    for _ in range(200):
        ang = rng.uniform(0, 2 * math.pi)
        d = np.array([math.cos(ang), math.sin(ang)])
        origin = rng.uniform(-0.2, 0.2, 2) - 2.0 * d
        c = crossing_coordinates(origin, d, CellIndex(0, 0))
        dist = abs(origin[0] * d[1] - origin[1] * d[0])
        assert abs(c.rho) == pytest.approx(dist, abs=1e-12)


def test_no_entry():
    with pytest.raises(NoEntry):
        crossing_coordinates((-2.0, 2.0), (1.0, 0.0), CellIndex(0, 0))
    with pytest.raises(NoEntry):
        crossing_coordinates((2.0, 0.0), (1.0, 0.0), CellIndex(0, 0))


@settings(max_examples=50)
@given(st.floats(0, 2 * math.pi, exclude_max=True), st.floats(-0.45, 0.45), st.floats(-0.45, 0.45))
def test_crossing_round_trip(angle, ox, oy):
    d = np.array([math.cos(angle), math.sin(angle)])
    origin = np.array([ox, oy]) - 0.9 * d
    c = crossing_coordinates(origin, d, CellIndex(0, 0))
    o2, d2 = restore_crossing(c)
    np.testing.assert_allclose(o2, origin, atol=1e-12)
    np.testing.assert_allclose(d2, d, atol=1e-12)


@pytest.mark.parametrize("angle", [0.3, 1.9, 3.5, 5.2])
def test_row_crossings_follow_recurrence(angle):
    d = np.array([math.cos(angle), math.sin(angle)])
    crossings = row_crossings((0.137, -0.291), d, 10_000)
    beta = crossings[0].beta
    y1 = crossings[0].y
    k = np.arange(len(crossings))
    expected = -0.5 + np.mod(0.5 + y1 + k * math.tan(beta), 1.0)
    got = np.array([c.y for c in crossings])
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert all(-0.5 <= c.y < 0.5 for c in crossings)
