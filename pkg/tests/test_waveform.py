import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualtrap.errors import InputError, SynthesisError
from dualtrap.potential import find_minima, nearest_minimum
from dualtrap.waveform import (
    CONTROL_FILTER,
    ENDPOINT_VOLTAGES,
    FilterModel,
    TrajectorySpec,
    VoltageProgram,
    apply_filter,
    concatenate,
    constant_program,
    filter_impedance,
    hold_upsample,
    precompensate,
    profile_acceleration,
    quantize,
    read_program,
    reverse,
    round_trip,
    smooth_polynomial_profile,
    synthesize_separation,
    synthesize_transport,
    transport_profile,
    write_program,
)

SPEC = TrajectorySpec(0.0, 1.2e-3, 54e-6)


def step_program(dt, n, channels=1.0):
    s = np.zeros((n, 5))
    s[1:] = channels
    return VoltageProgram(dt, s, rails=(-100, 100))


# -- program container ----------------------------------------------------------

def test_program_validation():
    with pytest.raises(InputError):
        VoltageProgram(0.0, np.zeros((3, 5)))
    with pytest.raises(InputError):
        VoltageProgram(1e-6, np.zeros((3, 4)))
    with pytest.raises(InputError):
        VoltageProgram(1e-6, np.full((3, 5), 11.0))
    p = constant_program(ENDPOINT_VOLTAGES, 10e-6, 1e-6)
    assert len(p) == 11 and p.duration == pytest.approx(10e-6)


def test_concatenate_shares_boundary_sample():
    a = constant_program(ENDPOINT_VOLTAGES, 5e-6, 1e-6)
    b = constant_program(ENDPOINT_VOLTAGES, 3e-6, 1e-6)
    assert len(concatenate(a, b)) == len(a) + len(b) - 1
    with pytest.raises(InputError):
        concatenate(a, constant_program(ENDPOINT_VOLTAGES, 3e-6, 2e-6))


# -- profiles ---------------------------------------------------------------------

def test_sin2_profile_endpoints_and_midpoint():
    assert transport_profile(SPEC, 0.0) == 0.0
    assert transport_profile(SPEC, SPEC.duration) == pytest.approx(1.2e-3)
    assert transport_profile(SPEC, SPEC.duration / 2) == pytest.approx(0.6e-3)


def test_sin2_profile_flat_at_ends_and_monotone():
    T, h = SPEC.duration, 1e-12
    assert abs(transport_profile(SPEC, h) - transport_profile(SPEC, 0)) / h < 1e-3
    assert abs(transport_profile(SPEC, T) - transport_profile(SPEC, T - h)) / h < 1e-3
    z = transport_profile(SPEC, np.linspace(0, T, 1001))
    assert np.all(np.diff(z) >= 0)


def test_profile_rejects_times_outside_interval():
    with pytest.raises(InputError):
        transport_profile(SPEC, -1e-9)
    with pytest.raises(InputError):
        smooth_polynomial_profile(SPEC, 2 * SPEC.duration)


def test_quintic_matches_boundary_value_solve():
    # oracle: polynomial through the six boundary conditions
    T, a, b = 1.0, 0.2, 1.7
    M = np.array([[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
                  [1, T, T**2, T**3, T**4, T**5], [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
                  [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3]], float)
    c = np.linalg.solve(M, [a, 0, 0, b, 0, 0])
    spec = TrajectorySpec(a, b, T, "poly")
    t = np.linspace(0, T, 51)
    assert np.allclose(smooth_polynomial_profile(spec, t), np.polyval(c[::-1], t), atol=1e-12)
    assert smooth_polynomial_profile(spec, T / 2) == pytest.approx((a + b) / 2)
    assert profile_acceleration(spec, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert profile_acceleration(spec, T) == pytest.approx(0.0, abs=1e-9)


def test_analytic_acceleration_matches_finite_difference():
    for profile, z in (("sin2", transport_profile), ("poly", smooth_polynomial_profile)):
        spec = TrajectorySpec(0.0, 1.2e-3, 30e-6, profile)
        t = np.linspace(2e-6, 28e-6, 9)
        h = 1e-7
        fd = (z(spec, t + h) - 2 * z(spec, t) + z(spec, t - h)) / h**2
        a = profile_acceleration(spec, t)
        assert np.abs(fd - a).max() < 1e-4 * np.abs(a).max()


# -- transport synthesis --------------------------------------------------------------

def test_transport_endpoints_reproduce_static_double_well(basis):
    prog = synthesize_transport(basis, SPEC)
    for k, z in ((0, 0.0), (-1, 1.2e-3)):
        zm, nu = nearest_minimum(basis, prog.samples[k], z, window=20e-6)
        assert zm == pytest.approx(z, abs=1e-7)
        assert nu == pytest.approx(2.9e6, rel=0.01)


def test_transport_identity_is_constant(basis):
    prog = synthesize_transport(basis, TrajectorySpec(0.0, 0.0, 20e-6))
    assert np.allclose(prog.samples, prog.samples[0], atol=1e-12)


def test_transport_minimum_follows_profile(basis):
    prog = synthesize_transport(basis, SPEC)
    rng = np.random.default_rng(11)
    for k in rng.integers(0, len(prog), 20):
        z = transport_profile(SPEC, min(prog.times[k], SPEC.duration))
        zm, nu = nearest_minimum(basis, prog.samples[k], z, window=50e-6)
        assert abs(zm - z) < 0.1e-6
        assert nu == pytest.approx(2.9e6, rel=0.01)


def test_transport_infeasible_within_rails(basis):
    with pytest.raises(SynthesisError) as info:
        synthesize_transport(basis, SPEC, rails=(0, 10))
    assert info.value.time is not None and info.value.request is not None


def test_round_trip_is_time_reversed(basis):
    fwd = synthesize_transport(basis, SPEC)
    rt = round_trip(fwd, SPEC.duration)
    n = len(fwd)
    assert np.array_equal(rt.samples[-n:], fwd.samples[::-1])
    assert np.array_equal(reverse(reverse(fwd)).samples, fwd.samples)


# -- separation ----------------------------------------------------------------------

def test_separation_sample_count_and_endpoints(basis, separation):
    assert len(separation) == 10001
    assert separation.sample_period == pytest.approx(1e-6)
    first = find_minima(basis, separation.samples[0])
    last = find_minima(basis, separation.samples[-1])
    assert len(first) == 1 and first[0][1] == pytest.approx(0.7e6, rel=0.15)
    assert len(last) == 2 and all(nu == pytest.approx(2.9e6, rel=0.15) for _, nu in last)


def test_separation_within_rails_and_v3_monotone(separation):
    s = separation.samples
    assert s.min() >= 0 and s.max() <= 10
    assert np.all(np.diff(s[:, 2]) >= -1e-12)
    assert np.allclose(s[:, 0], s[:, 4]) and np.allclose(s[:, 1], s[:, 3])


def test_separation_unreachable_floor_raises(basis):
    with pytest.raises(SynthesisError):
        synthesize_separation(basis, nu_min=200e3)


# -- quantization ----------------------------------------------------------------------

def test_quantize_rounding_examples():
    p = VoltageProgram(1e-6, [[0.004, 0.006, 1.234, 0, 0]] * 2)
    q = quantize(p, 0.01)
    assert q.samples[0, 0] == 0.0
    assert q.samples[0, 1] == pytest.approx(0.01)
    assert q.samples[0, 2] == pytest.approx(1.23)
    with pytest.raises(InputError):
        quantize(p, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=10, max_size=10), st.sampled_from([0.01, 0.003, 0.1]))
def test_quantize_idempotent_and_bounded(values, step):
    p = VoltageProgram(1e-6, np.reshape(values, (2, 5)))
    q = quantize(p, step)
    assert np.array_equal(quantize(q, step).samples, q.samples)
    assert np.abs(q.samples - p.samples).max() <= step / 2 + 1e-12


# -- filtering ---------------------------------------------------------------------------

def test_filter_dc_gain_is_one():
    p = constant_program((1, 2, 3, 4, 5), 20e-6, 1e-8)
    assert np.allclose(apply_filter(p, CONTROL_FILTER).samples, p.samples, atol=1e-12)


def test_single_stage_step_reaches_63_percent_at_rc():
    dt = 1e-9
    out = apply_filter(step_program(dt, 3000), FilterModel(((1e3, 820e-12),))).samples[:, 0]
    # the step enters at sample 1 and the output lags the input by one hold period
    k = 1 + int(round(0.82e-6 / dt))
    assert out[k] == pytest.approx(1 - math.exp(-1), rel=0.01)


def test_two_stage_step_matches_analytic_cascade():
    tau, dt = 0.82e-6, 2e-9
    out = apply_filter(step_program(dt, 4000), CONTROL_FILTER).samples[:, 0]
    # loaded ladder: H(s) = 1 / (1 + 3 s tau + s^2 tau^2)
    p1, p2 = (-3 + math.sqrt(5)) / (2 * tau), (-3 - math.sqrt(5)) / (2 * tau)
    t = np.arange(len(out) - 1) * dt
    y = 1 + p2 / (p1 - p2) * np.exp(p1 * t) - p1 / (p1 - p2) * np.exp(p2 * t)
    assert np.abs(out[1:] - y).max() < 0.01


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_filter_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    p1 = VoltageProgram(1e-7, rng.uniform(-1, 1, (50, 5)), rails=(-1e3, 1e3))
    p2 = VoltageProgram(1e-7, rng.uniform(-1, 1, (50, 5)), rails=(-1e3, 1e3))
    mix = p1.with_samples(a * p1.samples + b * p2.samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lhs = apply_filter(mix).samples
        rhs = a * apply_filter(p1).samples + b * apply_filter(p2).samples
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_filter_is_causal():
    out = apply_filter(step_program(1e-9, 100)).samples
    assert np.all(out[:2] == 0.0)


def test_coarse_sampling_warns_and_too_coarse_errors():
    with pytest.warns(UserWarning):
        apply_filter(constant_program(ENDPOINT_VOLTAGES, 10e-6, 0.1e-6))
    with pytest.raises(InputError):
        apply_filter(constant_program(ENDPOINT_VOLTAGES, 10e-6, 1e-6))


def test_hold_upsample_is_zero_order_hold():
    p = VoltageProgram(1e-6, [[0] * 5, [1] * 5, [2] * 5])
    u = hold_upsample(p, 4)
    assert len(u) == 9 and u.duration == pytest.approx(p.duration)
    assert np.array_equal(u.samples[:, 0], [0, 0, 0, 0, 1, 1, 1, 1, 2])


def test_precompensation_undoes_filter():
    t = np.arange(0, 20e-6, 1e-8)
    x = np.clip((t - 2e-6) / 10e-6, 0, 1)
    s = np.zeros((len(t), 5))
    s[:, 2] = 4 + 2 * x**3 * (10 - 15 * x + 6 * x**2)
    p = VoltageProgram(1e-8, s)
    out = apply_filter(precompensate(p, CONTROL_FILTER), CONTROL_FILTER)
    assert np.abs(out.samples[:, 2] - s[:, 2]).max() < 1e-3
    plain = apply_filter(p, CONTROL_FILTER)
    assert np.abs(plain.samples[:, 2] - s[:, 2]).max() > 0.05


# -- impedance ----------------------------------------------------------------------------

def test_single_stage_impedance_limits():
    f = FilterModel(((1e3, 820e-12),))
    assert filter_impedance(f, 1e-3).real == pytest.approx(1e3, rel=1e-9)
    w = 2 * np.pi * 2.9e6
    wrc = w * 1e3 * 820e-12
    assert filter_impedance(f, w).real == pytest.approx(1e3 / (1 + wrc**2), rel=1e-12)
    zc = 1 / (1j * w * 820e-12)
    assert filter_impedance(f, w) == pytest.approx(1e3 * zc / (1e3 + zc), rel=1e-12)


def test_two_stage_impedance_against_direct_ladder():
    w = 2 * np.pi * 2.9e6
    r, c = 1e3, 820e-12
    zc = 1 / (1j * w * c)
    z1 = r * zc / (r + zc)
    z2 = (z1 + r) * zc / (z1 + r + zc)
    assert filter_impedance(CONTROL_FILTER, w) == pytest.approx(z2, rel=1e-12)
    assert filter_impedance(CONTROL_FILTER, w).real > 0


def test_zero_capacitance_stage_adds_series_resistance():
    w = 2 * np.pi * 2.9e6
    base = filter_impedance(CONTROL_FILTER, w)
    extra = filter_impedance(FilterModel(CONTROL_FILTER.stages + ((470.0, 0.0),)), w)
    assert extra == pytest.approx(base + 470.0, rel=1e-14)
    with pytest.raises(InputError):
        filter_impedance(CONTROL_FILTER, 0.0)


# -- file format ---------------------------------------------------------------------------

def test_csv_round_trip_is_bit_identical(tmp_path, basis):
    prog = synthesize_transport(basis, SPEC)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_program(prog, a)
    back = read_program(a)
    write_program(back, b)
    assert a.read_text() == b.read_text()
    assert a.read_text().splitlines()[0] == "t_s,V1,V2,V3,V4,V5"
    assert np.allclose(back.samples, prog.samples, rtol=1e-8, atol=1e-8)


def test_csv_rejects_bad_header(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("time,a,b,c,d,e\n0,1,2,3,4,5\n")
    with pytest.raises(InputError):
        read_program(f)
