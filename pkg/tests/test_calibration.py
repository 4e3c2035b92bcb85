import logging

import numpy as np
import pandas as pd
import pytest

from calibration import (
    BeatConfig,
    beat_intensity,
    calibrate,
    calibration_sweep,
    equivalent_amplitude_noise,
    equivalent_phase_noise,
    load_readings,
    lock_in,
    photon_flux,
)
from exceptions import CalibrationError, InsufficientSettling
from model import laser_angular_frequency

WAVELENGTH = 1.064e-6
PUMP_POWER = 67e-6
PROBE_POWER = 3.8e-6


def _beat(ratio=0.05, duration=0.6):
    return BeatConfig.from_powers(PUMP_POWER, PROBE_POWER, WAVELENGTH, ratio, 7000.0, 40000.0, 250000.0, duration)


def test_equivalent_noise_arithmetic():
    assert 2 * equivalent_amplitude_noise(8.2e6**2, 10.0) == pytest.approx(6.724e12, rel=1e-12)
    assert 2 * equivalent_phase_noise(5.6e5, 10.0) == pytest.approx(3.136e10, rel=1e-12)
    with pytest.raises(CalibrationError):
        equivalent_amplitude_noise(1.0, 0.0)


def test_calibration_inverts_closed_form_lines():
    cfg = _beat()
    carrier, sideband, modulation = cfg.line_amplitudes()
    scale = 1.6e-15
    result = calibrate(
        scale * carrier, scale * sideband, scale * modulation, PUMP_POWER, laser_angular_frequency(WAVELENGTH), 10.0
    )
    assert result.eps_a_sq == pytest.approx(cfg.eps_a**2, rel=1e-12)
    assert result.eps_m == pytest.approx(cfg.eps_m, rel=1e-12)
    assert result.A_factor == pytest.approx(scale, rel=1e-12)
    assert result.Gamma_L_equiv is None
    record = result.to_record()
    assert record["two_gamma_eps"] == pytest.approx(cfg.eps_m**2 / 10.0, rel=1e-12)
    assert "two_gamma_L" not in record


def test_calibration_reports_phase_noise_when_given():
    record = calibrate(1.0, 1e-3, 2.0, PUMP_POWER, laser_angular_frequency(WAVELENGTH), 10.0, phidot=5.6e5).to_record()
    assert record["two_gamma_L"] == pytest.approx(3.136e10)


def test_phase_excursion_alone_is_enough():
    result = calibrate(None, None, None, PUMP_POWER, laser_angular_frequency(WAVELENGTH), 10.0, phidot=5.6e5)
    assert result.A_factor is None and result.eps_m is None
    assert result.to_record() == {
        "Gamma_L_equiv": pytest.approx(5.6e5**2 / 20.0),
        "two_gamma_L": pytest.approx(3.136e10),
    }


def test_calibration_needs_readings_or_phase_excursion():
    omega_L = laser_angular_frequency(WAVELENGTH)
    with pytest.raises(CalibrationError, match="phidot"):
        calibrate(None, None, None, PUMP_POWER, omega_L, 10.0)
    with pytest.raises(CalibrationError, match="together"):
        calibrate(1.0, None, 2.0, PUMP_POWER, omega_L, 10.0, phidot=5.6e5)


@pytest.mark.parametrize(
    "readings",
    [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0), (1.0, float("nan"), 1.0)],
)
def test_calibration_rejects_non_positive_readings(readings):
    with pytest.raises(CalibrationError):
        calibrate(*readings, PUMP_POWER, laser_angular_frequency(WAVELENGTH), 10.0)


def test_beat_config_rejects_large_modulation():
    with pytest.raises(CalibrationError, match="small-modulation"):
        _beat(ratio=0.35)
    with pytest.raises(CalibrationError):
        BeatConfig(eps_a=0.0, eps_b=1.0, eps_m=0.0, Omega_m=1.0, Delta=1.0, duration=1.0, sample_rate=10.0)


def test_beat_config_warns_above_ten_percent(caplog):
    with caplog.at_level(logging.WARNING, logger="calibration"):
        _beat(ratio=0.2)
    assert "lose accuracy" in caplog.text


def test_expanded_beat_tracks_exact_beat():
    cfg = _beat(ratio=0.05, duration=0.01)
    exact = beat_intensity(cfg, cfg.times, exact=True)
    expanded = beat_intensity(cfg, cfg.times)
    assert np.max(np.abs(exact - expanded)) / np.max(np.abs(exact)) < 1e-5


def test_lock_in_recovers_tone_amplitude():
    sample_rate = 20000.0
    t = np.arange(int(sample_rate)) / sample_rate
    samples = 3.0 * np.cos(2 * np.pi * 1000.0 * t + 0.4) + 0.5 * np.cos(2 * np.pi * 1700.0 * t)
    assert lock_in(samples, sample_rate, 1000.0) == pytest.approx(3.0, rel=1e-3)
    assert lock_in(samples, sample_rate, 1700.0) == pytest.approx(0.5, rel=1e-3)


def test_lock_in_needs_settling_time():
    sample_rate = 20000.0
    samples = np.ones(int(0.1 * sample_rate))
    with pytest.raises(InsufficientSettling):
        lock_in(samples, sample_rate, 1000.0)


def test_lock_in_needs_sample_rate_headroom():
    with pytest.raises(CalibrationError, match="sample rate"):
        lock_in(np.ones(1000), 3000.0, 1000.0)


def test_synthetic_sweep_round_trip():
    report = calibration_sweep(
        PUMP_POWER,
        PROBE_POWER,
        WAVELENGTH,
        [0.02, 0.05, 0.2],
        7000.0,
        40000.0,
        250000.0,
        0.6,
        1.6e-15,
        10.0,
    )
    assert list(report.table["modulation_ratio"]) == [0.02, 0.05, 0.2]
    assert report.max_eps_m_error < 0.01
    assert report.A_spread < 0.10
    assert report.A_mean == pytest.approx(1.6e-15, rel=0.10)


def test_sweep_needs_ratios():
    with pytest.raises(CalibrationError):
        calibration_sweep(PUMP_POWER, PROBE_POWER, WAVELENGTH, [], 7000.0, 40000.0, 250000.0, 0.6, 1.0, 10.0)


def test_load_readings(tmp_path):
    path = tmp_path / "readings.csv"
    pd.DataFrame({"v_car": [1.0, 2.0], "v_sb": [0.1, 0.2], "v_omega_m": [3.0, 4.0]}).to_csv(path, index=False)
    frame = load_readings(path)
    assert len(frame) == 2
    pd.DataFrame({"v_car": [1.0]}).to_csv(path, index=False)
    with pytest.raises(CalibrationError, match="missing columns"):
        load_readings(path)
    with pytest.raises(FileNotFoundError):
        load_readings(tmp_path / "absent.csv")


def test_photon_flux():
    omega_L = laser_angular_frequency(WAVELENGTH)
    assert photon_flux(PUMP_POWER, omega_L) == pytest.approx(PUMP_POWER * WAVELENGTH / (6.62607015e-34 * 299792458.0))
