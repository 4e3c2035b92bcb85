import logging
from dataclasses import replace

import numpy as np
import pytest

import model
from constant import Constant
from exceptions import ConvergenceError, PoleError, ValidationError
from model import (
    TWO_PI,
    CouplingMatrix,
    MechanicalMode,
    NoiseSpec,
    OpticalMode,
    bose_einstein_occupancy,
    chi_c,
    chi_m,
    chi_m_dressed,
    chi_m_rwa,
    hz_to_rad_s,
    laser_angular_frequency,
    rad_s_to_hz,
    solve_steady_state,
    steady_state_residuals,
)


def test_unit_conversions_round_trip():
    assert hz_to_rad_s(1.0) == pytest.approx(TWO_PI)
    assert rad_s_to_hz(TWO_PI * 226764.581) == pytest.approx(226764.581)
    np.testing.assert_allclose(rad_s_to_hz(hz_to_rad_s(np.array([1.0, 2.0]))), [1.0, 2.0])


def test_laser_frequency_rejects_non_positive_wavelength():
    assert laser_angular_frequency(1.064e-6) == pytest.approx(TWO_PI * Constant.C_LIGHT / 1.064e-6)
    with pytest.raises(ValidationError):
        laser_angular_frequency(0.0)


def test_optical_mode_splits_total_decay_evenly():
    mode = OpticalMode.from_total(10.0, 1e15, 0.0, 1e-6)
    assert mode.kappa1 == pytest.approx(5.0)
    assert mode.kappa2 == pytest.approx(5.0)
    assert mode.kappa == pytest.approx(10.0)


def test_optical_mode_fills_missing_mirror_rate():
    mode = OpticalMode.from_total(10.0, 1e15, 0.0, 1e-6, kappa1=4.0, kappa_l=1.0)
    assert mode.kappa2 == pytest.approx(5.0)
    assert mode.port_rate(1) == pytest.approx(4.0)


def test_optical_mode_rejects_rates_that_do_not_add_up():
    with pytest.raises(ValidationError, match="do not add up"):
        OpticalMode.from_total(10.0, 1e15, 0.0, 1e-6, kappa1=3.0, kappa2=3.0, kappa_l=1.0)


def test_optical_mode_rejects_negative_power():
    with pytest.raises(ValidationError):
        OpticalMode.from_total(10.0, 1e15, 0.0, -1.0)


def test_low_q_membrane_logs_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="model"):
        MechanicalMode(omega_m=100.0, gamma_m=20.0)
    assert "exceeds omega_m/10" in caplog.text


def test_high_q_membrane_is_silent(caplog):
    with caplog.at_level(logging.WARNING, logger="model"):
        MechanicalMode(omega_m=TWO_PI * 226764.581, gamma_m=TWO_PI * 1.44)
    assert caplog.text == ""


def test_thermal_occupancy_from_temperature():
    omega = TWO_PI * 226764.581
    mode = MechanicalMode.from_temperature(omega, TWO_PI * 1.44, 300.0)
    assert mode.n_th == pytest.approx(Constant.K_B * 300.0 / (Constant.HBAR * omega))
    assert mode.n_th > 1e7


def test_bose_einstein_approaches_classical_limit():
    omega = TWO_PI * 226764.581
    classical = Constant.K_B * 300.0 / (Constant.HBAR * omega)
    assert bose_einstein_occupancy(omega, 300.0) == pytest.approx(classical - 0.5, rel=1e-9)
    assert bose_einstein_occupancy(omega, 0.0) == 0.0


def test_susceptibilities_peak_at_resonance():
    optical = OpticalMode.from_total(TWO_PI * 119e3, 1e15, TWO_PI * 240e3, 1e-6)
    mechanical = MechanicalMode(omega_m=TWO_PI * 1e5, gamma_m=TWO_PI * 2.0)
    assert chi_c(optical, optical.detuning0) == pytest.approx(2.0 / optical.kappa)
    assert chi_m(mechanical, mechanical.omega_m) == pytest.approx(2.0 / mechanical.gamma_m)


def test_uncoupled_steady_state_is_bare_cavity_field(make_params):
    params = make_params(couplings_hz=((0.0, 0.0), (0.0, 0.0)))
    steady = solve_steady_state(params)
    for k, mode in enumerate(params.optical):
        expected = mode.drive_mean / (0.5 * mode.kappa + 1j * mode.detuning0)
        assert steady.alpha[k] == pytest.approx(expected, rel=1e-14)
    np.testing.assert_array_equal(steady.xbar, [0.0, 0.0])
    np.testing.assert_array_equal(steady.g_eff, np.zeros((2, 2)))


def test_steady_state_residuals_are_small(bench_params):
    steady = solve_steady_state(bench_params)
    residuals = steady_state_residuals(bench_params, steady)
    assert set(residuals) == {"alpha", "xbar", "detuning"}
    assert max(residuals.values()) < 1e-10


def test_steady_state_shifts_pump_detuning(bench_params):
    steady = solve_steady_state(bench_params)
    assert steady.xbar[1] > 0
    assert steady.detuning[1] < bench_params.optical[1].detuning0
    assert steady.detuning[0] == 0.0


def test_steady_state_reports_non_convergence(bench_params):
    with pytest.raises(ConvergenceError) as info:
        solve_steady_state(bench_params, max_iterations=1)
    assert len(info.value.candidates) == 3


def test_uncoupled_dressed_susceptibilities_reduce_to_bare(make_params):
    params = make_params(couplings_hz=((0.0, 0.0), (0.0, 0.0)))
    steady = solve_steady_state(params)
    omega = np.linspace(0.99, 1.01, 201) * params.mechanical[0].omega_m
    bare = chi_m(params.mechanical[0], omega)
    np.testing.assert_allclose(chi_m_dressed(0, steady, params, omega), bare, rtol=1e-12)
    np.testing.assert_allclose(chi_m_rwa(0, steady, params, omega), bare, rtol=1e-12)


def test_coupling_matrix_shape_is_checked():
    with pytest.raises(ValidationError, match="2x2"):
        CouplingMatrix.from_array(np.zeros((3, 2)))
    with pytest.raises(ValidationError, match="finite"):
        CouplingMatrix.from_array([[np.nan, 0.0], [0.0, 0.0]])


def test_coupling_matrix_with_entry_copies():
    base = CouplingMatrix.zeros()
    updated = base.with_entry(1, 0, 2.5)
    assert updated[1] == (2.5, 0.0)
    assert base[1] == (0.0, 0.0)


def test_fingerprint_tracks_parameters(make_params):
    first, second = make_params(), make_params()
    assert first.fingerprint() == second.fingerprint()
    changed = first.with_couplings(first.couplings.with_entry(0, 1, TWO_PI * 0.2))
    assert changed.fingerprint() != first.fingerprint()


def test_with_power_replaces_only_one_laser(bench_params):
    doubled = bench_params.with_power(1, 2 * bench_params.optical[1].power)
    assert doubled.optical[1].power == pytest.approx(134e-6)
    assert doubled.optical[0] == bench_params.optical[0]


def test_noise_spec_validation():
    assert NoiseSpec().is_quiet
    noisy = NoiseSpec().with_amplitude(1, 5.0).with_phase(0, 2.0, TWO_PI * 100.0)
    assert not noisy.is_quiet
    assert noisy.gamma_eps_strength == (0.0, 5.0)
    assert noisy.gamma_phi_bw[0] == pytest.approx(TWO_PI * 100.0)
    assert len(noisy.active_bandwidths()) == 2
    with pytest.raises(ValidationError, match="non-negative"):
        NoiseSpec(gamma_eps_strength=(-1.0, 0.0))
    with pytest.raises(ValidationError, match="bandwidth must be positive"):
        NoiseSpec(gamma_L_strength=(1.0, 0.0), gamma_phi_bw=(0.0, 1.0))


def _dressed_inverse_at_resonance(params, j):
    steady = solve_steady_state(params)
    omega_m = params.mechanical[j].omega_m
    return 1.0 / chi_m_dressed(j, steady, params, omega_m)


def _reverse_pump_detuning(params):
    optical = list(params.optical)
    optical[1] = replace(optical[1], detuning0=-optical[1].detuning0)
    return replace(params, optical=tuple(optical))


def test_optical_spring_reverses_with_detuning(bench_params):
    # the frequency shift of membrane j is Im of its dressed inverse susceptibility at omega_m
    positive = [_dressed_inverse_at_resonance(bench_params, j).imag / TWO_PI for j in range(2)]
    negative = [_dressed_inverse_at_resonance(_reverse_pump_detuning(bench_params), j).imag / TWO_PI for j in range(2)]
    for shift, reversed_shift in zip(positive, negative):
        assert abs(shift) > 1.0
        assert np.sign(shift) == -np.sign(reversed_shift)
        assert abs(reversed_shift) == pytest.approx(abs(shift), rel=0.05)


def test_positive_detuning_broadens_the_membranes(bench_params):
    assert bench_params.optical[1].detuning0 > 0
    for j, mode in enumerate(bench_params.mechanical):
        assert _dressed_inverse_at_resonance(bench_params, j).real >= 0.5 * mode.gamma_m


def test_susceptibilities_mirror_under_frequency_reflection():
    optical = OpticalMode.from_total(TWO_PI * 119e3, 1e15, TWO_PI * 240e3, 1e-6)
    mechanical = MechanicalMode(omega_m=TWO_PI * 1e5, gamma_m=TWO_PI * 2.0)
    omega = TWO_PI * np.linspace(-3e5, 3e5, 61)
    np.testing.assert_allclose(
        np.conj(chi_c(optical, -omega)), chi_c(optical, omega, -optical.detuning0), rtol=1e-14
    )
    # chi_m at a reflected resonance, written out since MechanicalMode keeps omega_m positive
    reflected = 1.0 / (0.5 * mechanical.gamma_m - 1j * (omega + mechanical.omega_m))
    np.testing.assert_allclose(np.conj(chi_m(mechanical, -omega)), reflected, rtol=1e-14)


def test_dressed_susceptibility_reports_poles(bench_params, monkeypatch):
    steady = solve_steady_state(bench_params)
    omega = bench_params.mechanical[0].omega_m
    # |inverse| never exceeds |bare| + |self energy|, so a unit tolerance flags every point
    monkeypatch.setattr(model, "POLE_TOLERANCE", 1.0)
    with pytest.raises(PoleError, match="dressed mechanical mode 1") as info:
        chi_m_dressed(0, steady, bench_params, omega)
    assert info.value.omega == pytest.approx(omega)
