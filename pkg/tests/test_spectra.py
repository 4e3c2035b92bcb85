import numpy as np
import pytest

from constant import Constant
from exceptions import SingularSystemError, UnsupportedPort, ValidationError, WindowTooCoarse
from model import TWO_PI, NoiseSpec, solve_steady_state
from spectra import (
    DetectionChain,
    QuadratureSelector,
    SpectrumResult,
    build_system,
    cancellation_metrics,
    dip_finder,
    frequency_grid,
    incoherent_reference,
    mechanical_rows,
    psd,
    pump_off_params,
    rwa_mechanical_rows,
    shot_noise_params,
    single_membrane_params,
)

PUMP_NOISE = NoiseSpec().with_amplitude(1, 3.35e12, TWO_PI * 1e7)


def _grid_around_membranes(params, span_hz=200.0, points=801):
    return np.linspace(
        min(m.omega_m for m in params.mechanical) - TWO_PI * span_hz,
        max(m.omega_m for m in params.mechanical) + TWO_PI * span_hz,
        points,
    )


def _lorentzian(omega, center, fwhm, height):
    half = 0.5 * fwhm
    return height * half**2 / ((omega - center) ** 2 + half**2)


def test_selector_port_names():
    sel = QuadratureSelector.from_port_name("r1", which="y")
    assert (sel.mode, sel.mirror, sel.port_name) == (0, 1, "r1")
    assert QuadratureSelector.from_port_name("t2").port_name == "t2"


def test_generic_ports_need_opt_in():
    with pytest.raises(UnsupportedPort, match="generic_port"):
        QuadratureSelector.from_port_name("t1")
    assert QuadratureSelector.from_port_name("t1", generic=True).port_name == "t1"
    with pytest.raises(UnsupportedPort):
        QuadratureSelector.from_port_name("t3")


def test_selector_rejects_unknown_quadrature():
    with pytest.raises(ValidationError):
        QuadratureSelector(which="z")
    with pytest.raises(ValidationError):
        QuadratureSelector(lo_reference="cavity")


def test_field_reference_adds_intracavity_phase(bench_params):
    steady = solve_steady_state(bench_params)
    sel = QuadratureSelector(lo_phase=0.3, lo_reference=Constant.LO_REFERENCE_FIELD)
    assert sel.phase(bench_params, steady) == pytest.approx(0.3 + np.angle(steady.alpha[1]))
    assert QuadratureSelector(lo_phase=0.3).phase(bench_params, steady) == pytest.approx(0.3)


def test_closed_form_rwa_matches_matrix_solve(make_params):
    params = make_params(noise=PUMP_NOISE, n_th=100.0)
    steady = solve_steady_state(params)
    omega = _grid_around_membranes(params)
    matrix = build_system(params, steady, omega, rwa=True).solution
    closed = rwa_mechanical_rows(params, steady, omega)
    for j in range(2):
        b, _ = mechanical_rows(j)
        error = np.max(np.abs(matrix[:, b] - closed[:, j])) / np.max(np.abs(matrix[:, b]))
        assert error < 1e-9


def test_undamped_resonance_makes_the_system_singular(make_params):
    params = make_params(couplings_hz=((0.0, 0.0), (0.0, 0.0)), mechanical_hz=((226764.581, 1e-13), (231887.32, 8.8)))
    steady = solve_steady_state(params)
    omega_m = params.mechanical[0].omega_m
    omega = np.array([omega_m - TWO_PI * 100.0, omega_m])
    with pytest.raises(SingularSystemError, match="singular") as info:
        build_system(params, steady, omega)
    assert info.value.omega == omega_m
    assert info.value.condition > 1e14


def test_spectrum_is_non_negative_with_metadata(bench_params):
    params = bench_params.with_noise(PUMP_NOISE)
    omega = _grid_around_membranes(params)
    spectrum = psd(params, QuadratureSelector(), omega)
    assert spectrum.values.shape == omega.shape
    assert np.all(spectrum.values >= 0)
    assert spectrum.metadata["convention"] == Constant.CONVENTION
    assert spectrum.metadata["params_hash"] == params.fingerprint()
    assert spectrum.metadata["port"] == "t2"
    np.testing.assert_allclose(spectrum.freq_hz, omega / TWO_PI)


def test_unknown_solver_is_rejected(bench_params):
    with pytest.raises(ValidationError, match="solver"):
        psd(bench_params, QuadratureSelector(), [1.0, 2.0], solver="exact")


def test_detection_chain_scales_and_offsets(bench_params):
    params = bench_params.with_noise(PUMP_NOISE)
    steady = solve_steady_state(params)
    omega = _grid_around_membranes(params, points=101)
    raw = psd(params, QuadratureSelector(), omega, steady=steady)
    detected = psd(
        params,
        QuadratureSelector(),
        omega,
        steady=steady,
        detection=DetectionChain(factor=2.0, shot_floor=0.5, electronic_floor=0.25),
    )
    np.testing.assert_allclose(detected.values, 2.0 * raw.values + 0.75, rtol=1e-12)
    with pytest.raises(ValidationError):
        DetectionChain(factor=0.0)


def test_decoupled_quiet_system_sits_at_shot_noise(make_params):
    params = make_params(couplings_hz=((0.3, 0.3), (0.3, 0.3)), noise=PUMP_NOISE, n_th=1e6)
    omega = _grid_around_membranes(params, points=101)
    floor = psd(shot_noise_params(params), QuadratureSelector.from_port_name("r1", which="y"), omega)
    np.testing.assert_allclose(floor.values, 0.5, rtol=1e-9)
    detected = psd(
        shot_noise_params(params),
        QuadratureSelector.from_port_name("r1", which="y"),
        omega,
        detection=DetectionChain(electronic_floor=0.2),
    )
    np.testing.assert_allclose(detected.values, 0.7, rtol=1e-9)


def test_pump_off_leaves_thermal_peaks_above_shot_noise(make_params):
    params = pump_off_params(make_params(couplings_hz=((0.3, 0.3), (0.3, 0.3)), noise=PUMP_NOISE, n_th=1e6))
    assert params.optical[1].power == 0.0
    assert params.noise.is_quiet
    sel = QuadratureSelector.from_port_name("r1", which="y")
    peaks = psd(params, sel, np.array([mode.omega_m for mode in params.mechanical]))
    assert np.all(peaks.values > 100.0 * 0.5)


def test_one_sided_spectrum_folds_negative_frequencies(bench_params):
    params = bench_params.with_noise(PUMP_NOISE)
    steady = solve_steady_state(params)
    omega = _grid_around_membranes(params, points=101)
    sel = QuadratureSelector()
    positive = psd(params, sel, omega, steady=steady).values
    negative = psd(params, sel, -omega[::-1], steady=steady).values[::-1]
    folded = psd(params, sel, omega, steady=steady, one_sided=True).values
    np.testing.assert_allclose(folded, positive + negative, rtol=1e-9)
    with pytest.raises(ValidationError, match="non-negative grid"):
        psd(params, sel, [-1.0, 1.0], steady=steady, one_sided=True)


def test_spectrum_grid_must_increase(bench_params):
    with pytest.raises(ValidationError, match="strictly increasing"):
        psd(bench_params, QuadratureSelector(), [2.0, 1.0])
    with pytest.raises(ValidationError, match="non-empty"):
        psd(bench_params, QuadratureSelector(), [])


def test_frequency_grid_refines_resonances(bench_params):
    grid = frequency_grid(224e3, 235e3, 101, bench_params)
    assert np.all(np.diff(grid) > 0)
    assert grid.size > 101
    for mode in bench_params.mechanical:
        assert np.any(grid == mode.omega_m)
        near = grid[np.abs(grid - mode.omega_m) < 5 * mode.gamma_m]
        assert np.max(np.diff(near)) <= mode.gamma_m / 16 * (1 + 1e-9)
    assert frequency_grid(224e3, 235e3, 101, bench_params, refine=False).size == 101


def test_frequency_grid_validation():
    with pytest.raises(ValidationError):
        frequency_grid(1.0, 2.0, 1)
    with pytest.raises(ValidationError):
        frequency_grid(2.0, 1.0, 10)


def test_dip_finder_locates_interior_minimum():
    center, linewidth = 1000.0, 4.0
    omega = center + np.linspace(-50.0, 50.0, 1001)
    values = 1.0 - _lorentzian(omega, center, linewidth, 0.9)
    (dip,) = dip_finder(SpectrumResult(omega=omega, values=values), [(center, 40.0)], linewidth=linewidth)
    assert dip.omega == pytest.approx(center)
    assert dip.value == pytest.approx(0.1)
    assert dip.depth_db > 9.0
    assert dip.freq_hz == pytest.approx(center / TWO_PI)


def test_dip_finder_skips_monotonic_windows():
    omega = np.linspace(0.0, 10.0, 101)
    assert dip_finder(SpectrumResult(omega=omega, values=1.0 + omega), [(5.0, 4.0)]) == []


def test_dip_finder_rejects_coarse_windows():
    omega = np.linspace(0.0, 10.0, 11)
    values = (omega - 5.0) ** 2 + 1.0
    with pytest.raises(WindowTooCoarse):
        dip_finder(SpectrumResult(omega=omega, values=values), [(5.0, 2.0)])
    with pytest.raises(WindowTooCoarse, match="linewidth"):
        dip_finder(SpectrumResult(omega=omega, values=values), [(5.0, 5.0)], linewidth=1.0)


def _reflected_phase_quadrature():
    return QuadratureSelector.from_port_name(Constant.PORT_REFLECTION_1, which=Constant.QUADRATURE_Y, lo_phase=0.0)


def _close_mode_grid():
    return TWO_PI * np.linspace(366700.0, 367500.0, 1601)


def test_cancellation_window_from_common_drive(cancellation_config):
    params = cancellation_config.params
    sel = _reflected_phase_quadrature()
    spectrum = psd(params, sel, _close_mode_grid())
    metrics = cancellation_metrics(spectrum, params, sel=sel)
    assert metrics is not None
    low, high = metrics.peak_omegas
    assert low < metrics.omega_min < high
    assert metrics.value_min < metrics.incoherent_value
    record = metrics.to_record()
    assert record["suppression_db"] > 0
    assert record["window_depth_db"] > 0


def test_incoherent_sum_has_no_cancellation_window(cancellation_config):
    params = cancellation_config.params
    sel = _reflected_phase_quadrature()
    omega = _close_mode_grid()
    reference = incoherent_reference(lambda p: psd(p, sel, omega), params)
    assert reference.metadata["reference"] == "incoherent"
    assert cancellation_metrics(reference, params, reference=reference) is None


def test_noisy_lorentzian_sum_is_not_a_window(make_params):
    params = make_params(mechanical_hz=((1000.0, 2.0), (1100.0, 2.0)), noise=PUMP_NOISE)
    omega = TWO_PI * np.linspace(900.0, 1200.0, 3001)
    values = _lorentzian(omega, TWO_PI * 1000.0, TWO_PI * 2.0, 1.0) + _lorentzian(omega, TWO_PI * 1100.0, TWO_PI * 2.0, 1.0)
    spectrum = SpectrumResult(omega=omega, values=values)
    assert cancellation_metrics(spectrum, params, reference=spectrum) is None
    with pytest.raises(ValidationError, match="reference spectrum or a quadrature selector"):
        cancellation_metrics(spectrum, params)


def test_single_membrane_has_no_cancellation_window(cancellation_config):
    params = single_membrane_params(cancellation_config.params, 0)
    assert params.couplings.array[1].tolist() == [0.0, 0.0]
    sel = _reflected_phase_quadrature()
    spectrum = psd(params, sel, _close_mode_grid())
    assert cancellation_metrics(spectrum, params, sel=sel) is None
