import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualtrap.errors import CalibrationError, DomainError, InputError
from dualtrap.potential import (
    Anchor,
    DEFAULT_GEOMETRY,
    ElectrodeBasis,
    TrapGeometry,
    anchor_from_dict,
    axial_field_and_curvature,
    axial_potential,
    basis_from_dict,
    basis_to_dict,
    calibrate,
    find_minima,
    frequency_from_curvature,
    geometry_from_dict,
    geometry_to_dict,
    nearest_minimum,
)

volts = st.lists(st.floats(-10, 10), min_size=5, max_size=5)


def grid_minima(basis, v, step=0.1e-6):
    lo, hi = basis.geometry.region
    z = np.arange(lo, hi, step)
    u = axial_potential(basis, v, z)
    i = np.nonzero((u[1:-1] < u[:-2]) & (u[1:-1] <= u[2:]))[0] + 1
    return z[i]


# -- geometry ------------------------------------------------------------------

def test_default_layout_lengths_and_spacing():
    g = DEFAULT_GEOMETRY
    assert np.allclose(g.lengths, [1100e-6, 400e-6, 800e-6, 400e-6, 1100e-6])
    assert g.centers[3] - g.centers[1] == pytest.approx(1220e-6)
    assert g.d == pytest.approx(270e-6)
    assert g.centers[1] == pytest.approx(0.0)


def test_geometry_rejects_bad_gap():
    edges = list(DEFAULT_GEOMETRY.electrode_edges)
    edges[2] = (edges[2][0] + 1e-6, edges[2][1])
    with pytest.raises(InputError):
        TrapGeometry(tuple(edges), 10e-6, 270e-6)
    with pytest.raises(InputError):
        TrapGeometry.from_lengths((1e-3,) * 4)


def test_geometry_dict_round_trip_and_unknown_keys():
    g = geometry_from_dict(geometry_to_dict(DEFAULT_GEOMETRY))
    assert np.allclose(g.electrode_edges, DEFAULT_GEOMETRY.electrode_edges, atol=1e-15)
    with pytest.raises(InputError):
        geometry_from_dict({"gap_um": 10, "width_um": 3})


# -- basis ---------------------------------------------------------------------

def test_basis_bounded_and_vanishing(basis):
    z = np.linspace(-5e-3, 6e-3, 20001)
    phi = basis.evaluate(z)
    assert phi.min() >= 0 and phi.max() <= 1
    assert np.all(basis.evaluate(-50e-3) < 1e-6)


def test_basis_symmetric_about_each_electrode(basis):
    for i, c in enumerate(basis.geometry.centers):
        x = np.linspace(0, 800e-6, 41)
        assert np.allclose(basis.evaluate(c + x)[:, i], basis.evaluate(c - x)[:, i], atol=1e-14)


def test_derivatives_match_finite_differences(basis):
    z = np.linspace(-400e-6, 1600e-6, 37)
    h = 1e-8
    d1 = (basis.evaluate(z + h) - basis.evaluate(z - h)) / (2 * h)
    d2 = (basis.evaluate(z + h, 1) - basis.evaluate(z - h, 1)) / (2 * h)
    scale1 = np.abs(basis.evaluate(z, 1)).max()
    scale2 = np.abs(basis.evaluate(z, 2)).max()
    assert np.abs(d1 - basis.evaluate(z, 1)).max() < 1e-6 * scale1
    assert np.abs(d2 - basis.evaluate(z, 2)).max() < 1e-6 * scale2


def test_field_and_curvature_match_numerical_differentiation(basis):
    v = [8, 0, 8, 0, 8]
    z = np.linspace(-300e-6, 300e-6, 13)
    h = 1e-8
    e, c = axial_field_and_curvature(basis, v, z)
    u = lambda x: axial_potential(basis, v, x)
    fd_e = -(u(z + h) - u(z - h)) / (2 * h)
    fd_c = -(axial_field_and_curvature(basis, v, z + h)[0] - axial_field_and_curvature(basis, v, z - h)[0]) / (2 * h)
    assert np.allclose(e, fd_e, rtol=1e-6, atol=1e-6 * np.abs(e).max())
    assert np.allclose(c, fd_c, rtol=1e-6, atol=1e-6 * np.abs(c).max())


def test_zero_voltages_give_zero_everything(basis):
    z = np.linspace(-1e-3, 2e-3, 7)
    assert np.all(axial_potential(basis, [0] * 5, z) == 0)
    e, c = axial_field_and_curvature(basis, [0] * 5, z)
    assert np.all(e == 0) and np.all(c == 0)


@settings(max_examples=50, deadline=None)
@given(volts, volts, st.floats(-3, 3), st.floats(-3, 3))
def test_superposition(v, w, a, b):
    basis = _basis()
    z = np.linspace(-1e-3, 2.2e-3, 11)
    lhs = axial_potential(basis, a * np.array(v) + b * np.array(w), z)
    rhs = a * axial_potential(basis, v, z) + b * axial_potential(basis, w, z)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_doubling_voltages_doubles_potential(basis):
    z = np.linspace(-1e-3, 2e-3, 9)
    v = np.array([8, 1, 3, 0.5, 8])
    assert np.array_equal(axial_potential(basis, 2 * v, z), 2 * axial_potential(basis, v, z))


def test_non_finite_inputs_rejected(basis):
    with pytest.raises(InputError):
        axial_potential(basis, [np.nan, 0, 0, 0, 0], 0.0)
    with pytest.raises(InputError):
        axial_field_and_curvature(basis, [0] * 5, np.inf)
    with pytest.raises(InputError):
        axial_potential(basis, [0] * 4, 0.0)


# -- calibration -----------------------------------------------------------------

def test_calibrated_anchors(basis):
    zm, nu = nearest_minimum(basis, (8, 0, 8, 0, 8), 0.0)
    assert nu == pytest.approx(2.9e6, rel=0.15)
    zm3, nu3 = nearest_minimum(basis, (8, 0, 0, 0, 8), basis.geometry.center)
    assert nu3 == pytest.approx(0.7e6, rel=0.15)
    assert abs(basis.evaluate(0.0, 1)[0]) == pytest.approx(242.0, rel=0.15)
    assert max(abs(r) for r in basis.residuals.values()) < 1e-9


def test_symmetric_config_field_vanishes_at_minimum(basis):
    zm, _ = nearest_minimum(basis, (8, 0, 8, 0, 8), 0.0)
    e, c = axial_field_and_curvature(basis, (8, 0, 8, 0, 8), zm)
    assert abs(e) < 1e-6
    assert frequency_from_curvature(c) == pytest.approx(2.9e6, rel=1e-6)


@pytest.mark.parametrize("initial", [(0.6, 90e-6, 0.3), (0.4, 150e-6, 0.5), (0.55, 100e-6, 0.35)])
def test_calibration_stable_under_perturbed_guess(basis, initial):
    other = calibrate(initial=initial)
    assert other.alpha == pytest.approx(basis.alpha, rel=0.01)
    assert other.w == pytest.approx(basis.w, rel=0.01)


def test_trivial_anchor_accepts_any_parameters():
    anchor = Anchor((8, 0, 8, 0, 8), "field", 0.0, DEFAULT_GEOMETRY.center)
    b = calibrate(anchors=[anchor], initial=(0.3, 150e-6, 0.2))
    assert abs(b.residuals["anchor0"]) < 1e-9
    assert b.alpha == pytest.approx(0.3)


def test_unreachable_anchor_raises_calibration_error():
    anchors = [Anchor((8, 0, 8, 0, 8), "frequency", 50e6, "trap2", "too-high")]
    with pytest.raises(CalibrationError) as info:
        calibrate(anchors=anchors)
    assert "too-high" in info.value.residuals


def test_empty_anchor_list_rejected():
    with pytest.raises(InputError):
        calibrate(anchors=[])


def test_anchor_and_basis_config_round_trip(basis):
    a = anchor_from_dict({"voltages_V": [8, 0, 8, 0, 8], "observable": "frequency", "target": "2.9 MHz",
                          "location": "trap2"})
    assert a.target == pytest.approx(2.9e6)
    with pytest.raises(InputError):
        anchor_from_dict({"voltages_V": [1] * 5, "observable": "field", "target": 1, "location": "trap2",
                          "colour": "red"})
    b2 = basis_from_dict(basis_to_dict(basis))
    z = np.linspace(-1e-3, 2e-3, 11)
    assert np.allclose(b2.evaluate(z, 2), basis.evaluate(z, 2), rtol=1e-12)


# -- minima -------------------------------------------------------------------------

def test_double_well_positions(basis):
    minima = find_minima(basis, (8, 0, 8, 0, 8))
    assert len(minima) == 2
    (z2, nu2), (z4, nu4) = minima
    assert z4 - z2 == pytest.approx(1.2e-3, rel=0.10)
    assert nu2 == pytest.approx(nu4, rel=1e-9)


def test_single_well_at_centre(basis):
    minima = find_minima(basis, (8, 0, 0, 0, 8))
    assert len(minima) == 1
    assert minima[0][0] == pytest.approx(basis.geometry.center, abs=1e-9)


def test_minima_match_dense_grid(basis):
    v = (0, 8, 0, 8, 0)
    found = [z for z, _ in find_minima(basis, v)]
    grid = grid_minima(basis, v)
    assert len(found) == len(grid)
    assert np.allclose(found, grid, atol=0.5e-6)


def test_random_configs_agree_with_grid_search(basis):
    rng = np.random.default_rng(7)
    for _ in range(100):
        v = rng.uniform(0, 10, 5)
        try:
            found = [z for z, _ in find_minima(basis, v)]
        except DomainError:
            found = []
        grid = [z for z in grid_minima(basis, v)
                if axial_field_and_curvature(basis, v, z)[1] > 0]
        assert len(found) == len(grid)
        assert np.allclose(found, grid, atol=0.5e-6)


def test_minimum_consistency(basis):
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 20:
        v = rng.uniform(0, 10, 5)
        try:
            minima = find_minima(basis, v)
        except DomainError:
            continue
        checked += 1
        for z, nu in minima:
            e, c = axial_field_and_curvature(basis, v, z)
            assert abs(e) < 1e-3 and c > 0 and nu > 0


def test_anti_trapping_raises_domain_error(basis):
    with pytest.raises(DomainError):
        find_minima(basis, (0, 0, 8, 0, 0))


_cache = {}


def _basis():
    if "b" not in _cache:
        _cache["b"] = ElectrodeBasis(DEFAULT_GEOMETRY, 0.49, 110e-6, 0.44)
    return _cache["b"]


def test_frequency_of_non_confining_curvature_is_zero():
    assert frequency_from_curvature(-1.0) == 0.0
    assert math.isclose(frequency_from_curvature(0.0), 0.0)
