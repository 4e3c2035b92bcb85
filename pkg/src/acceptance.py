"""Acceptance runner: each criterion yields named checks collected into one CSV report."""
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy.integrate import quad
from tqdm import tqdm

from calibration import calibration_sweep, equivalent_amplitude_noise, equivalent_phase_noise
from cli import (
    compute_spectrum,
    find_dips,
    seeded_params,
    selector_for,
    sim_config_for,
    synthetic_measurement,
)
from config import RunConfig, load_run_config
from constant import Constant
from exceptions import ValidationError
from fitting import LorentzianPeak, coupling_name, fit_couplings, fit_lorentzians, lorentzian_model
from model import (
    TWO_PI,
    CouplingMatrix,
    NoiseSpec,
    chi_m,
    chi_m_dressed,
    chi_m_rwa,
    solve_steady_state,
    steady_state_residuals,
)
from noise import amplitude_noise_psd
from oracle import (
    OuProcess,
    analytic_reference,
    compare_spectra,
    dt_halving_deviation,
    generate_inputs,
    oracle_psd,
    ou_series,
    resolve_config,
)
from output import read_csv, write_csv, write_spectrum_csv
from spectra import (
    SpectrumResult,
    build_system,
    cancellation_metrics,
    incoherent_reference,
    mechanical_rows,
    psd,
    pump_off_params,
    rwa_mechanical_rows,
)

LOGGER = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
REPORT_NAME = "acceptance_report.csv"
REPORT_COLUMNS = ["criterion", "check", "measured", "tolerance", "passed", "detail", "runtime_s"]
MIN_ORACLE_SEGMENTS = 200
DT_HALVING_TOLERANCE = 0.02


@dataclass
class Check:
    criterion: int
    check: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""
    runtime_s: float = 0.0


class CheckList:
    """Collects checks of one criterion; tolerances are multiplied (upper bounds) or divided (lower bounds) by the scale."""

    def __init__(self, criterion: int, scale: float):
        self.criterion = criterion
        self.scale = scale
        self.checks: List[Check] = []

    def at_most(self, name: str, measured: float, tolerance: float, detail: str = "") -> None:
        limit = tolerance * self.scale
        self._add(name, measured, limit, bool(measured < limit), detail)

    def at_least(self, name: str, measured: float, tolerance: float, detail: str = "") -> None:
        limit = tolerance / self.scale if self.scale > 0 else np.inf
        self._add(name, measured, limit, bool(measured >= limit), detail)

    def holds(self, name: str, condition: bool, detail: str = "") -> None:
        self.at_least(name, 1.0 if condition else 0.0, 1.0, detail)

    def _add(self, name: str, measured: float, limit: float, passed: bool, detail: str) -> None:
        measured = float(measured) if measured is not None else float("nan")
        self.checks.append(Check(self.criterion, name, measured, float(limit), passed and np.isfinite(measured), detail))


def _config(name: str) -> RunConfig:
    return load_run_config(CONFIG_DIR / name)


def _relative(value: float, reference: float) -> float:
    return abs(value / reference - 1.0)


def calibration_arithmetic(checks: CheckList) -> None:
    two_gamma_eps = 2.0 * equivalent_amplitude_noise(8.2e6**2, 10.0)
    two_gamma_l = 2.0 * equivalent_phase_noise(5.6e5, 10.0)
    checks.at_most("two_gamma_eps_exact", _relative(two_gamma_eps, 6.724e12), 1e-12, f"{two_gamma_eps:.6e}")
    checks.at_most("two_gamma_eps_rounded", _relative(two_gamma_eps, 6.7e12), 0.015, "quoted 6.7e12")
    checks.at_most("two_gamma_L_exact", _relative(two_gamma_l, 3.136e10), 1e-12, f"{two_gamma_l:.6e}")
    checks.at_most("two_gamma_L_rounded", _relative(two_gamma_l, 3.1e10), 0.015, "quoted 3.1e10")


def calibration_round_trip(checks: CheckList) -> None:
    settings = _config("calibration.yaml").require("calibration")
    synthetic = settings.synthetic
    ratios = synthetic.modulation_ratios
    report = calibration_sweep(
        settings.pump_power_w,
        synthetic.probe_power_w,
        settings.wavelength_m,
        ratios,
        synthetic.modulation_hz,
        synthetic.offset_hz,
        synthetic.sample_rate_hz,
        synthetic.duration_s,
        synthetic.detection_factor,
        settings.measurement_bw_hz,
        settings.lockin_bw_hz,
        settings.lockin_order,
    )
    checks.at_least("modulation_span", max(ratios) / min(ratios), 10.0, "ratio of largest to smallest modulation")
    checks.at_most("eps_m_recovery", report.max_eps_m_error, 0.01)
    checks.at_most("detection_factor_spread", report.A_spread, 0.10, f"mean {report.A_mean:.4e}")
    checks.at_most("detection_factor_truth", _relative(report.A_mean, synthetic.detection_factor), 0.10)


def _dip_checks(checks: CheckList, config_name: str) -> None:
    config = _config(config_name)
    spectrum, _ = compute_spectrum(config)
    table = find_dips(config, spectrum)
    for row in table.itertuples():
        checks.holds(f"dip_{row.membrane}_found", row.found, f"near {row.resonance_hz:.4f} Hz")
        if row.found:
            checks.at_most(
                f"dip_{row.membrane}_offset_linewidths", row.offset_linewidths, 3.0, f"dip at {row.dip_hz:.4f} Hz"
            )
            checks.at_least(f"dip_{row.membrane}_depth_db", row.depth_db, 3.0)


def amplitude_noise_dips(checks: CheckList) -> None:
    _dip_checks(checks, "amplitude_dips.yaml")


def phase_noise_dips(checks: CheckList) -> None:
    _dip_checks(checks, "phase_dips.yaml")


def cancellation_window(checks: CheckList) -> None:
    config = _config("cancellation.yaml")
    thermal, _ = compute_spectrum(config, pump_off_params(config.params))
    results = []
    for injected_sq in config.require("cancellation").injected_sq:
        params = seeded_params(config, injected_sq)
        spectrum, _ = compute_spectrum(config, params)
        reference = incoherent_reference(lambda p: compute_spectrum(config, p)[0], params)
        metrics = cancellation_metrics(spectrum, params, thermal, reference)
        checks.holds(f"window_{injected_sq:.2g}", metrics is not None)
        if metrics is None:
            return
        low, high = metrics.peak_omegas
        checks.holds(
            f"window_{injected_sq:.2g}_between_peaks",
            low < metrics.omega_min < high,
            f"minimum at {metrics.omega_min / TWO_PI:.3f} Hz",
        )
        checks.at_least(f"window_{injected_sq:.2g}_depth_db", metrics.depth_db, np.finfo(float).tiny)
        results.append(metrics)
    if len(results) < 2:
        return
    weak, strong = results[0], results[-1]
    checks.holds("stronger_seed_raises_peaks", min(np.subtract(strong.peak_values, weak.peak_values)) > 0)
    checks.at_most("window_shift_hz", abs(strong.omega_min - weak.omega_min) / TWO_PI, 20.0)


def rwa_agreement(checks: CheckList) -> None:
    config = _config("amplitude_dips.yaml")
    params = config.params
    steady = solve_steady_state(params)
    omega = np.linspace(
        min(m.omega_m for m in params.mechanical) - 200 * TWO_PI,
        max(m.omega_m for m in params.mechanical) + 200 * TWO_PI,
        2001,
    )
    matrix = build_system(params, steady, omega, rwa=True).solution
    closed = rwa_mechanical_rows(params, steady, omega)
    for j in range(2):
        b, _ = mechanical_rows(j)
        error = np.max(np.abs(matrix[:, b] - closed[:, j])) / np.max(np.abs(matrix[:, b]))
        checks.at_most(f"b{j + 1}_closed_form", error, 1e-9)

    full, _ = compute_spectrum(config)
    rwa_config = replace(config, spectrum=replace(config.spectrum, solver=Constant.SOLVER_RWA))
    rotating, _ = compute_spectrum(rwa_config)
    full_dips, rwa_dips = find_dips(config, full), find_dips(config, rotating)
    for j, mode in enumerate(params.mechanical):
        found = bool(full_dips.loc[j, "found"]) and bool(rwa_dips.loc[j, "found"])
        checks.holds(f"dip_{j + 1}_both_solvers", found)
        if found:
            shift = abs(full_dips.loc[j, "dip_hz"] - rwa_dips.loc[j, "dip_hz"]) * TWO_PI
            checks.at_most(f"dip_{j + 1}_solver_shift_linewidths", shift / mode.gamma_m, 0.25)


def _ou_statistics(checks: CheckList) -> None:
    process = OuProcess(strength=2.0, bandwidth=3.0)
    dt, lag = 0.1 / process.bandwidth, 10
    rng = np.random.default_rng(20240611)
    start = OuProcess(process.strength, process.bandwidth, x=float(np.sqrt(process.variance) * rng.standard_normal()))
    values, _ = ou_series(start, dt, rng.standard_normal(2**23))
    variance = float(np.mean(values**2))
    acf = float(np.mean(values[:-lag] * values[lag:])) / variance
    checks.at_most("ou_variance", _relative(variance, process.variance), 0.01)
    checks.at_most("ou_autocorrelation", _relative(acf, np.exp(-process.bandwidth * lag * dt)), 0.03)


def oracle_equivalence(checks: CheckList, show_progress: bool = False) -> None:
    _ou_statistics(checks)
    for name in ("oracle_omit_desk.yaml", "oracle_cancellation_desk.yaml"):
        config = _config(name)
        settings = config.require("oracle")
        sel = selector_for(config.require("spectrum"))
        steady = solve_steady_state(config.params)
        empirical = oracle_psd(config.params, sel, sim_config_for(config), steady, show_progress=show_progress)
        band = (TWO_PI * settings.band_hz[0], TWO_PI * settings.band_hz[1])
        comparison = compare_spectra(empirical, analytic_reference(config.params, sel, empirical, band, steady), band)
        stem = Path(name).stem
        checks.at_least(f"{stem}_segments", empirical.metadata["segments"], MIN_ORACLE_SEGMENTS)
        checks.at_most(
            f"{stem}_max_deviation", comparison.max_deviation, settings.tolerance,
            f"mean deviation {comparison.mean_deviation:.3f}",
        )
        halving = dt_halving_deviation(config.params, sel, sim_config_for(config), band, steady)
        checks.at_most(f"{stem}_dt_halving", halving.max_deviation, DT_HALVING_TOLERANCE)


def property_suite(checks: CheckList) -> None:
    config = _config("amplitude_dips.yaml")
    params = config.params
    steady = solve_steady_state(params)
    checks.at_most("steady_state_residual", max(steady_state_residuals(params, steady).values()), 1e-10)

    uncoupled = params.with_couplings(CouplingMatrix.zeros())
    bare = solve_steady_state(uncoupled)
    omega = np.linspace(0.9, 1.1, 401) * params.mechanical[0].omega_m
    reference = chi_m(params.mechanical[0], omega)
    for name, value in (
        ("dressed", chi_m_dressed(0, bare, uncoupled, omega)),
        ("rotating", chi_m_rwa(0, bare, uncoupled, omega)),
    ):
        checks.at_most(f"uncoupled_{name}_susceptibility", np.max(np.abs(value / reference - 1.0)), 1e-12)

    noise = params.noise
    sample = np.linspace(-5.0, 5.0, 11) * noise.gamma_eps_bw[1]
    checks.holds(
        "noise_psd_even", np.array_equal(amplitude_noise_psd(noise, 1, sample), amplitude_noise_psd(noise, 1, -sample))
    )
    bandwidth = noise.gamma_eps_bw[1]
    integral, _ = quad(lambda x: amplitude_noise_psd(noise, 1, bandwidth * x) * bandwidth / TWO_PI, -np.inf, np.inf)
    checks.at_most("noise_psd_integral", _relative(integral, noise.gamma_eps_strength[1] * bandwidth), 1e-8)

    sel = selector_for(config.spectrum)
    grid = np.linspace(225.0e3, 233.0e3, 801) * TWO_PI
    quiet = params.with_noise(NoiseSpec())
    level = noise.gamma_eps_strength[1]

    def spectrum_at(strength: float):
        trial = params.with_noise(NoiseSpec().with_amplitude(1, strength, bandwidth))
        return psd(trial, sel, grid, steady=steady).values

    base = psd(quiet, sel, grid, steady=steady).values
    single, double = spectrum_at(level) - base, spectrum_at(2.0 * level) - base
    checks.at_most("linear_in_amplitude_noise", np.max(np.abs(double / single - 2.0)), 1e-6)

    phase_noise = NoiseSpec().with_phase(1, 1.0e10, bandwidth)
    ratios = []
    for power_scale in (1.0, 2.0):
        trial = uncoupled.with_power(1, power_scale * uncoupled.optical[1].power)
        trial_steady = solve_steady_state(trial)
        contribution = psd(trial.with_noise(phase_noise), sel, grid, steady=trial_steady).values - psd(
            trial.with_noise(NoiseSpec()), sel, grid, steady=trial_steady
        ).values
        ratios.append(contribution / abs(trial_steady.alpha[1]) ** 2)
    checks.at_most("phase_noise_scales_with_intracavity_photons", np.max(np.abs(ratios[1] / ratios[0] - 1.0)), 1e-6)

    sim_cfg = replace(sim_config_for(_config("oracle_omit_desk.yaml")), seed=99)
    desk = _config("oracle_omit_desk.yaml").params
    resolved = resolve_config(sim_cfg, desk, solve_steady_state(desk))
    first = generate_inputs(desk, resolved, n_steps=4096)
    second = generate_inputs(desk, resolved, n_steps=4096)
    checks.holds("seeded_inputs_identical", np.array_equal(first, second))

    spectrum, _ = compute_spectrum(config)
    with tempfile.TemporaryDirectory() as scratch:
        bodies = []
        for name in ("first.csv", "second.csv"):
            path = write_spectrum_csv(Path(scratch) / name, spectrum)
            lines = path.read_text(encoding="utf-8").splitlines()
            bodies.append([line for line in lines if not line.startswith("#")])
    checks.holds("csv_body_identical", bodies[0] == bodies[1])


def fit_recovery(checks: CheckList) -> None:
    base = _config("fit_couplings.yaml")
    for label, config in (("amplitude", base), ("phase", replace(_config("phase_dips.yaml"), spectrum=base.spectrum))):
        settings = base.require("fit")
        measured = synthetic_measurement(config, settings.synthetic_noise, settings.seed)
        report = fit_couplings(
            measured,
            config.params,
            selector_for(config.spectrum),
            free=settings.free,
            starts=3,
            seed=settings.seed,
        )
        truth = config.params.couplings.array / TWO_PI
        for j, k in settings.free:
            name = coupling_name(j, k)
            checks.at_most(f"{label}_{name}", _relative(report.estimates[name], truth[j, k]), 0.03)

    rng = np.random.default_rng(5)
    truth = [
        LorentzianPeak(center=TWO_PI * 366852.5, fwhm=TWO_PI * 11.9, area=1.0),
        LorentzianPeak(center=TWO_PI * 367338.9, fwhm=TWO_PI * 8.6, area=0.8),
    ]
    omega = TWO_PI * np.arange(366700.0, 367500.0, 0.25)
    clean = lorentzian_model(omega, truth, offset=1e-4)
    noisy = clean * (1.0 + 0.01 * rng.standard_normal(omega.size))
    windows = [(peak.center, TWO_PI * 100.0) for peak in truth]
    peaks, _ = fit_lorentzians(SpectrumResult(omega=omega, values=noisy), 2, windows)
    for i, (fitted, expected) in enumerate(zip(peaks, truth), start=1):
        checks.at_most(f"lorentzian_{i}_center_hz", abs(fitted.center - expected.center) / TWO_PI, 0.2)
        checks.at_most(f"lorentzian_{i}_width", _relative(fitted.fwhm, expected.fwhm), 0.05)


CRITERIA: Dict[int, Callable[[CheckList], None]] = {
    1: calibration_arithmetic,
    2: calibration_round_trip,
    3: amplitude_noise_dips,
    4: phase_noise_dips,
    5: cancellation_window,
    6: rwa_agreement,
    7: oracle_equivalence,
    8: property_suite,
    9: fit_recovery,
}


def run_criterion(criterion: int, tolerance_scale: float = 1.0, show_progress: bool = False) -> List[Check]:
    checks = CheckList(criterion, tolerance_scale)
    started = time.perf_counter()
    try:
        if criterion == 7:
            oracle_equivalence(checks, show_progress=show_progress)
        else:
            CRITERIA[criterion](checks)
    except Exception as exc:  # noqa: BLE001
        LOGGER.error("Criterion %d raised %s: %s", criterion, type(exc).__name__, exc)
        checks.checks.append(Check(criterion, "completed", float("nan"), float("nan"), False, f"{type(exc).__name__}: {exc}"))
    if not checks.checks:
        checks.checks.append(Check(criterion, "completed", float("nan"), float("nan"), False, "no checks ran"))
    runtime = time.perf_counter() - started
    for check in checks.checks:
        check.runtime_s = runtime
    failed = [check.check for check in checks.checks if not check.passed]
    if failed:
        LOGGER.warning("Criterion %d failed: %s (%.1f s)", criterion, ", ".join(failed), runtime)
    else:
        LOGGER.info("Criterion %d passed (%.1f s)", criterion, runtime)
    return checks.checks


def run_all_acceptance(
    out_dir=None,
    tolerance_scale: float = 1.0,
    only: Optional[Iterable[int]] = None,
    show_progress: bool = False,
) -> pd.DataFrame:
    """Run the selected criteria (all by default) and write the report when out_dir is given."""
    selected = sorted(set(only)) if only else sorted(CRITERIA)
    unknown = [c for c in selected if c not in CRITERIA]
    if unknown:
        raise ValidationError(f"unknown acceptance criteria {unknown}; expected 1-{len(CRITERIA)}")
    rows = []
    for criterion in tqdm(selected, desc="acceptance", disable=not show_progress):
        rows.extend(asdict(check) for check in run_criterion(criterion, tolerance_scale, show_progress))
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if out_dir is not None:
        write_csv(Path(out_dir) / REPORT_NAME, report, {"tolerance_scale": tolerance_scale})
    return report


def parse_report(path) -> pd.DataFrame:
    frame, _ = read_csv(path)
    if list(frame.columns) != REPORT_COLUMNS:
        raise ValidationError(f"{path}: expected columns {REPORT_COLUMNS}, found {list(frame.columns)}")
    frame["detail"] = frame["detail"].fillna("").astype(str)
    frame["passed"] = frame["passed"].astype(str).str.lower().map({"true": True, "false": False})
    if frame["passed"].isna().any():
        raise ValidationError(f"{path}: passed column must hold True/False")
    frame["passed"] = frame["passed"].astype(bool)
    frame["criterion"] = frame["criterion"].astype(int)
    frame["check"] = frame["check"].astype(str)
    return frame
