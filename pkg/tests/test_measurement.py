import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavitytomo.dispersive import fock_setup, phase_shift
from cavitytomo.fock import FieldState, coherent_state, translate
from cavitytomo.measurement import (
    IDEAL,
    REALISTIC,
    DetectionRecord,
    ImperfectionModel,
    MeasurementSetting,
    atoms_per_window,
    correct_signal,
    excitation_probability,
    expected_signal,
    g_operator,
    ramsey_kraus,
    sample_detections,
    window_time,
)

from conftest import random_state, seeds

P = fock_setup()


def test_g_at_origin_is_diagonal_cosine():
    phi = 0.3
    g = g_operator(MeasurementSetting(0, phi, P), 9)
    np.testing.assert_allclose(g, np.diag(np.cos(phase_shift(np.arange(9), P) + phi)), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_g_spectrum_bounded(r, theta, phi):
    g = g_operator(MeasurementSetting(r * np.exp(1j * theta), phi, P), 20)
    np.testing.assert_allclose(g, g.conj().T, atol=1e-14)
    ev = np.linalg.eigvalsh(g)
    assert ev.min() >= -1 - 1e-9 and ev.max() <= 1 + 1e-9


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0, 1.5), st.floats(-math.pi, math.pi))
def test_cyclic_trace_oracle(seed, r, phi):
    rho = random_state(np.random.default_rng(seed), 10)
    alpha = r * np.exp(0.7j)
    s = MeasurementSetting(alpha, phi, P)
    via_g = rho.expect(g_operator(s, 10, work_dim=10)).real
    moved = translate(rho, alpha)
    via_state = moved.expect(np.diag(np.cos(phase_shift(np.arange(10), P) + phi))).real
    assert via_g == pytest.approx(via_state, abs=1e-10)


def test_padded_g_matches_large_space():
    # the padded block equals the block of the operator built in a much larger space
    s = MeasurementSetting(1.3 - 0.4j, 0.2, P)
    small = g_operator(s, 8)
    big = g_operator(s, 8, work_dim=120)
    np.testing.assert_allclose(small, big, atol=1e-10)


def test_expected_signal_examples():
    vac = FieldState.fock(0, 6)
    assert expected_signal(vac, MeasurementSetting(0, -P.phi0, P)) == pytest.approx(1.0)
    assert expected_signal(vac, MeasurementSetting(0, -P.phi0 + math.pi, P)) == pytest.approx(-1.0)
    mixed = FieldState.maximally_mixed(7)
    phi = 0.4
    oracle = np.mean(np.cos(phase_shift(np.arange(7), P) + phi))
    assert expected_signal(mixed, MeasurementSetting(0, phi, P)) == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(-math.pi, math.pi))
def test_kraus_double_angle_and_completeness(seed, phi):
    me, mg = ramsey_kraus(phi, P, 8)
    np.testing.assert_allclose(me.conj().T @ me + mg.conj().T @ mg, np.eye(8), atol=1e-15)
    rho = random_state(np.random.default_rng(seed), 8)
    signal = expected_signal(rho, MeasurementSetting(0, phi, P))
    assert signal == pytest.approx(rho.expect(me @ me - mg @ mg).real, abs=1e-12)
    # QND: the unread measurement leaves the photon-number distribution untouched
    after = me @ rho.matrix @ me + mg @ rho.matrix @ mg
    np.testing.assert_allclose(np.diag(after).real, rho.populations(), atol=1e-14)


def test_kraus_pe_vacuum():
    me, _ = ramsey_kraus(-P.phi0, P, 4)
    assert abs(me[0, 0]) ** 2 == pytest.approx(1.0)


def test_sampling_ideal_deterministic_outcomes():
    vac = FieldState.fock(0, 5)
    s = MeasurementSetting(0, -P.phi0, P)
    rec = sample_detections(vac, s, 500, IDEAL, seed=3)
    assert (rec.n_e, rec.n_g) == (500, 0)


def test_sampling_concentration_at_zero_signal():
    rec = sample_detections(FieldState.fock(0, 3), MeasurementSetting(0, 0, P), 100_000, IDEAL, seed=1, signal=0.0)
    assert abs(rec.n_e / 100_000 - 0.5) < 0.01


def test_sampling_law_of_large_numbers():
    rho = coherent_state(1.0, 12)
    s = MeasurementSetting(0.5, -P.phi0 + math.pi, P)
    g = expected_signal(rho, s)
    n = 50_000
    rec = sample_detections(rho, s, n, REALISTIC, seed=11)
    raw = (rec.n_e - rec.n_g) / n
    pe = (1 + 0.8 * g) / 2
    assert abs(raw - 0.8 * g) <= 3 * 2 * math.sqrt(pe * (1 - pe) / n)
    g_hat, sigma = correct_signal(rec, REALISTIC)
    assert abs(g_hat - g) <= 3 * sigma


def test_sampling_is_deterministic_per_seed():
    rho = coherent_state(1.0, 12)
    s = MeasurementSetting(0.3j, 0.1, P)
    assert sample_detections(rho, s, 1000, REALISTIC, seed=5) == sample_detections(rho, s, 1000, REALISTIC, seed=5)


def test_excitation_probability_rejects_bad_model():
    bad = ImperfectionModel(1.0, 0.0)
    object.__setattr__(bad, "offset", 0.5)  # skip constructor validation
    with pytest.raises(ValueError):
        excitation_probability(1.0, bad)
    with pytest.raises(ValueError):
        ImperfectionModel(0.9, 0.2)
    with pytest.raises(ValueError):
        ImperfectionModel(0.0, 0.0)
    with pytest.raises(ValueError):
        sample_detections(FieldState.fock(0, 3), MeasurementSetting(0, 0, P), 0)


def test_correct_signal_arithmetic_and_clipping():
    s = MeasurementSetting(0, 0, P)
    g, sigma = correct_signal(DetectionRecord(s, 70, 30), IDEAL)
    assert g == pytest.approx(0.4)
    assert sigma == pytest.approx(2 * math.sqrt(0.7 * 0.3 / 100))
    # raw 0.816 / 0.8 = 1.02 -> clipped
    g, _ = correct_signal(DetectionRecord(s, 908, 92), REALISTIC)
    assert g == 1.0
    _, sigma = correct_signal(DetectionRecord(s, 50, 0), IDEAL)
    assert sigma > 0
    with pytest.raises(ValueError):
        correct_signal(DetectionRecord(s, 0, 0), IDEAL)


def test_window_helpers():
    assert window_time(0) == pytest.approx(2e-3)
    assert window_time(3) == pytest.approx(14e-3)
    counts = [atoms_per_window(np.random.default_rng(i)) for i in range(400)]
    assert np.mean(counts) == pytest.approx(8, abs=0.5)
