import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavitytomo.dispersive import (
    RABI_HZ,
    DispersiveParams,
    calibrate_teff,
    cat_setup,
    coherent_setup,
    fock_setup,
    phase_operator,
    phase_shift,
    phase_slope,
)
from cavitytomo.fock import number_operator

params = st.builds(
    DispersiveParams,
    st.floats(1e3, 2e5),
    st.one_of(st.floats(5e3, 5e5), st.floats(-5e5, -5e3)),
    st.floats(1e-6, 1e-3),
)


def test_weak_coupling_limit_vanishes():
    p = DispersiveParams(1e-6, 120e3, 6.45e-5)
    assert np.all(np.abs(phase_shift(np.arange(10), p)) < 1e-12)


def test_large_detuning_is_linear():
    p = DispersiveParams(RABI_HZ, 50e6, 6.45e-5)
    n = np.arange(6)
    linear = 0.5 * p.t_eff * 2 * math.pi * p.omega**2 * (n + 1) / (2 * p.delta)
    np.testing.assert_allclose(phase_shift(n, p), linear, rtol=1e-5)


def test_fock_anchor_slope_and_teff():
    p = fock_setup()
    assert phase_slope(3, p) == pytest.approx(math.pi / 2, rel=1e-12)
    assert p.t_eff == pytest.approx(6.45e-5, rel=2e-3)
    # "Phi(n+4) ~ Phi(n) + 2 pi" quoted as approximate: within 20 %
    gap = phase_shift(7, p) - phase_shift(3, p)
    assert abs(gap - 2 * math.pi) <= 0.2 * 2 * math.pi


def test_cat_anchor_chi():
    p = cat_setup()
    assert phase_slope(3.5, p) / 2 == pytest.approx(0.37 * math.pi, rel=1e-12)
    assert p.delta == 51e3


def test_coherent_setup_reuses_fock_time():
    assert coherent_setup().t_eff == fock_setup().t_eff
    assert coherent_setup().delta == 65e3


def test_phase_operator_diagonal_and_commutes():
    p = fock_setup()
    op = phase_operator(p, 9)
    n = number_operator(9)
    assert np.count_nonzero(op @ n - n @ op) == 0
    assert np.all(np.diff(np.diag(op).real) > 0)


@settings(max_examples=60, deadline=None)
@given(params, st.floats(0.01, 20))
def test_slope_matches_finite_difference(p, n):
    h = 1e-4
    fd = (phase_shift(n + h, p) - phase_shift(n - h, p)) / (2 * h)
    # rounding in the difference of two O(Phi) numbers bounds what the oracle can resolve
    rounding = 8 * np.finfo(float).eps * abs(phase_shift(n, p)) / h
    assert phase_slope(n, p) == pytest.approx(fd, rel=1e-6, abs=rounding)


@settings(max_examples=60, deadline=None)
@given(params)
def test_shift_increasing_concave(p):
    phi = phase_shift(np.arange(15), p)
    d1 = np.diff(phi)
    assert np.all(phi >= 0) if p.delta > 0 else True
    assert np.all(d1 > 0)
    assert np.all(np.diff(d1) < 0)
    assert np.all(np.diff(phase_slope(np.arange(15.0), p)) < 0)


@settings(max_examples=60, deadline=None)
@given(params, st.floats(0, 10), st.floats(0.05, 5))
def test_calibration_roundtrip_and_linearity(p, n, slope):
    q = calibrate_teff(p.delta, n, slope, p)
    assert phase_slope(n, q) == pytest.approx(slope, rel=1e-12)
    q2 = calibrate_teff(p.delta, n, 2 * slope, p)
    assert q2.t_eff == pytest.approx(2 * q.t_eff, rel=1e-12)
    # identity on t_eff
    back = calibrate_teff(p.delta, n, phase_slope(n, p), p)
    assert back.t_eff == pytest.approx(p.t_eff, rel=1e-12)


def test_rationalized_form_matches_direct_formula():
    p = fock_setup()
    n = np.arange(10.0)
    d, o = 2 * math.pi * p.delta, 2 * math.pi * p.omega
    direct = 0.5 * p.t_eff * (np.sqrt(d**2 + o**2 * (n + 1)) - d)
    np.testing.assert_allclose(phase_shift(n, p), direct, rtol=1e-12)


def test_validation_and_config_roundtrip():
    with pytest.raises(ValueError):
        DispersiveParams(0, 1e3, 1e-5)
    with pytest.raises(ValueError):
        DispersiveParams(1e3, 0, 1e-5)
    with pytest.raises(ValueError):
        phase_shift(-1, fock_setup())
    with pytest.raises(ValueError):
        calibrate_teff(1e5, 3, 0.0, fock_setup())
    p = fock_setup()
    assert DispersiveParams.from_config(p.to_config()) == p
