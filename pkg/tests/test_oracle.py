import numpy as np
import pytest
from scipy.linalg import expm

from cli import selector_for, sim_config_for
from config import load_run_config
from exceptions import TooShortSeries, UnstableSystem, ValidationError
from model import TWO_PI, solve_steady_state
from noise import noise_basis
from oracle import (
    OuProcess,
    Propagator,
    SimConfig,
    analytic_reference,
    coarsen_inputs,
    compare_spectra,
    drift_matrix,
    dt_halving_deviation,
    generate_inputs,
    integrate,
    oracle_psd,
    ou_series,
    resolve_config,
    step_ou,
    time_step_limit,
    welch_psd,
)
from spectra import QuadratureSelector, SpectrumResult


@pytest.fixture
def desk_config(config_dir):
    return load_run_config(config_dir / "oracle_omit_desk.yaml")


@pytest.fixture
def desk(desk_config):
    params = desk_config.params
    return params, solve_steady_state(params)


def test_ou_process_validation():
    assert OuProcess(strength=2.0, bandwidth=3.0).variance == pytest.approx(6.0)
    with pytest.raises(ValidationError):
        OuProcess(strength=-1.0, bandwidth=1.0)
    with pytest.raises(ValidationError):
        OuProcess(strength=1.0, bandwidth=0.0)


def test_block_ou_matches_single_steps():
    process = OuProcess(strength=2.0, bandwidth=3.0, x=0.5)
    gauss = np.random.default_rng(8).standard_normal(200)
    values, updated = ou_series(process, 0.01, gauss)
    stepped = process
    expected = []
    for g in gauss:
        stepped = step_ou(stepped, 0.01, g)
        expected.append(stepped.x)
    np.testing.assert_allclose(values, expected, rtol=1e-12, atol=1e-14)
    assert updated.x == pytest.approx(stepped.x, rel=1e-12)
    empty, same = ou_series(process, 0.01, [])
    assert empty.size == 0 and same == process


def test_ou_stationary_statistics():
    process = OuProcess(strength=2.0, bandwidth=3.0)
    dt, lag = 0.1 / process.bandwidth, 10
    rng = np.random.default_rng(20240611)
    start = OuProcess(process.strength, process.bandwidth, x=float(np.sqrt(process.variance) * rng.standard_normal()))
    values, _ = ou_series(start, dt, rng.standard_normal(2**20))
    variance = float(np.mean(values**2))
    assert variance == pytest.approx(process.variance, rel=0.03)
    acf = float(np.mean(values[:-lag] * values[lag:])) / variance
    assert acf == pytest.approx(np.exp(-process.bandwidth * lag * dt), rel=0.05)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"burn_in": -1.0},
        {"realizations": 0},
        {"segment_length": 1},
        {"overlap": 1.0},
        {"scheme": "rk4"},
        {"classical_mode": False},
    ],
)
def test_sim_config_validation(kwargs):
    with pytest.raises(ValidationError):
        SimConfig(**kwargs)


def test_sim_config_record_length():
    assert SimConfig(segment_length=100, segments_per_realization=4, overlap=0.5).record_steps == 250
    assert SimConfig(dt=0.1, duration=1.0).record_steps == 10
    with pytest.raises(ValidationError, match="unresolved"):
        SimConfig().burn_in_steps


def test_resolve_config_fills_time_step(desk):
    params, steady = desk
    resolved = resolve_config(SimConfig(), params, steady)
    assert resolved.dt == pytest.approx(1.0 / (20 * 40000.0))
    assert resolved.dt == pytest.approx(time_step_limit(params))
    assert resolved.burn_in > 0
    with pytest.raises(ValidationError, match="exceeds the limit"):
        resolve_config(SimConfig(dt=1e-5), params, steady)


def test_seeded_inputs_are_reproducible(desk):
    params, steady = desk
    cfg = resolve_config(SimConfig(seed=3), params, steady)
    first = generate_inputs(params, cfg, n_steps=512)
    np.testing.assert_array_equal(first, generate_inputs(params, cfg, n_steps=512))
    other = generate_inputs(params, resolve_config(SimConfig(seed=4), params, steady), n_steps=512)
    assert not np.array_equal(first, other)


def test_inputs_pair_operators_with_conjugates(desk):
    params, steady = desk
    cfg = resolve_config(SimConfig(seed=3), params, steady)
    inputs = generate_inputs(params, cfg, n_steps=256)
    idx = noise_basis().index
    assert inputs.shape == (256, 16)
    np.testing.assert_array_equal(inputs[:, idx["a_in_12_dag"]], np.conj(inputs[:, idx["a_in_12"]]))
    np.testing.assert_array_equal(inputs[:, idx["b_in_2_dag"]], np.conj(inputs[:, idx["b_in_2"]]))
    assert np.all(inputs[:, idx["eps_2"]].imag == 0)
    assert np.any(inputs[:, idx["eps_2"]] != 0)
    assert not np.any(inputs[:, idx["eps_1"]])


def test_coarsened_inputs_average_step_pairs():
    inputs = np.arange(14, dtype=complex).reshape(7, 2)
    coarse = coarsen_inputs(inputs)
    assert coarse.shape == (3, 2)
    np.testing.assert_array_equal(coarse[0], [1.0, 2.0])
    np.testing.assert_array_equal(coarse[2], [9.0, 10.0])


def test_exponential_propagator_follows_matrix_exponential(desk):
    params, steady = desk
    drift, input_map = drift_matrix(params, steady)
    dt, steps = 1e-6, 64
    propagator = Propagator(drift, input_map, dt, "exponential")
    start = np.random.default_rng(1).standard_normal(8) + 0j
    states = propagator.advance(start[np.newaxis, :], np.zeros((1, steps, input_map.shape[1])))[0]
    expected = expm(drift * dt * steps) @ start
    assert np.max(np.abs(states[-1] - expected)) / np.max(np.abs(expected)) < 1e-8
    np.testing.assert_allclose(states[0], start, atol=1e-10)


def test_euler_propagator_reports_instability(desk):
    params, steady = desk
    drift, input_map = drift_matrix(params, steady)
    with pytest.raises(UnstableSystem, match="Euler"):
        Propagator(drift, input_map, 1e-4, "euler")


def test_single_trajectory_outputs(desk):
    params, steady = desk
    sel = QuadratureSelector()
    result = integrate(params, steady, SimConfig(seed=5, burn_in=0.0, duration=0.01), selectors=[sel])
    series = result.settled("x_t2")
    assert series.shape == (8000,)
    assert np.all(np.isfinite(series))
    assert result.times.shape == (8001,)
    assert result.states.shape == (8001, 8)


def test_welch_matches_white_noise_level():
    dt = 1e-3
    cfg = SimConfig(dt=dt, segment_length=256)
    series = np.random.default_rng(2).standard_normal((8, 256 * 16))
    estimate = welch_psd(series, cfg)
    assert np.all(np.diff(estimate.omega) > 0)
    assert float(np.mean(estimate.values)) == pytest.approx(dt, rel=0.03)
    assert estimate.metadata["segments"] == 128
    with pytest.raises(TooShortSeries):
        welch_psd(series[:, :100], cfg)
    with pytest.raises(TooShortSeries, match="linewidth"):
        welch_psd(series, cfg, min_linewidth=1.0)


def test_compare_spectra():
    omega = np.linspace(1.0, 10.0, 10)
    spectrum = SpectrumResult(omega=omega, values=np.full(omega.size, 2.0))
    same = compare_spectra(spectrum, spectrum, (2.0, 9.0))
    assert same.max_deviation == 0.0
    assert len(same.table) == 8
    doubled = SpectrumResult(omega=omega, values=np.full(omega.size, 4.0))
    assert compare_spectra(doubled, spectrum, (1.0, 10.0)).max_deviation == pytest.approx(1.0)
    with pytest.raises(ValidationError, match="cover"):
        compare_spectra(spectrum, SpectrumResult(omega=omega[3:], values=np.ones(7)), (1.0, 10.0))
    with pytest.raises(ValidationError, match="no empirical"):
        compare_spectra(spectrum, spectrum, (20.0, 30.0))


@pytest.mark.slow
def test_desk_oracle_matches_analytic_spectrum(desk_config):
    settings = desk_config.require("oracle")
    params = desk_config.params
    sel = selector_for(desk_config.require("spectrum"))
    steady = solve_steady_state(params)
    empirical = oracle_psd(params, sel, sim_config_for(desk_config), steady)
    band = (TWO_PI * settings.band_hz[0], TWO_PI * settings.band_hz[1])
    comparison = compare_spectra(empirical, analytic_reference(params, sel, empirical, band, steady), band)
    assert empirical.metadata["segments"] >= 200
    assert comparison.max_deviation < settings.tolerance


@pytest.mark.slow
def test_halving_time_step_keeps_spectrum(desk_config, desk):
    params, steady = desk
    settings = desk_config.require("oracle")
    sel = selector_for(desk_config.require("spectrum"))
    cfg = SimConfig(seed=21, segment_length=8192, segments_per_realization=4)
    band = (TWO_PI * settings.band_hz[0], TWO_PI * settings.band_hz[1])
    comparison = dt_halving_deviation(params, sel, cfg, band, steady, realizations=2)
    assert len(comparison.table) > 0
    assert comparison.max_deviation < 0.02
