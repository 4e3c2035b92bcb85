#!/usr/bin/env python3
"""Command-line entry point: spectrum, thermal, cancellation, dips, calibrate, fit, oracle, acceptance."""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from calibration import calibrate, calibration_sweep, equivalent_phase_noise, load_readings
from config import RunConfig, SpectrumSettings, load_run_config
from exceptions import NumericalError, ValidationError
from fitting import fit_couplings, fit_lorentzians, lorentzian_model
from model import TWO_PI, SteadyState, SystemParams, laser_angular_frequency, solve_steady_state
from noise import ou_strength_from_injection
from oracle import SimConfig, analytic_reference, compare_spectra, integrate, oracle_psd, selector_name
from output import plain, read_spectrum_csv, write_csv, write_key_value_csv, write_spectrum_csv
from spectra import (
    DetectionChain,
    QuadratureSelector,
    SpectrumResult,
    cancellation_metrics,
    dip_finder,
    frequency_grid,
    incoherent_reference,
    psd,
    pump_off_params,
    shot_noise_params,
)

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4

THERMAL_FIT_LINEWIDTHS = 10.0


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
    )


def selector_for(settings: SpectrumSettings) -> QuadratureSelector:
    return QuadratureSelector.from_port_name(
        settings.port,
        which=settings.quadrature,
        lo_phase=settings.lo_phase_rad,
        lo_reference=settings.lo_phase_reference,
        generic=settings.generic_port,
    )


def detection_for(settings: SpectrumSettings) -> DetectionChain:
    return DetectionChain(
        factor=settings.detection.factor,
        shot_floor=settings.detection.shot_floor,
        electronic_floor=settings.detection.electronic_floor,
    )


def grid_for(config: RunConfig) -> np.ndarray:
    grid = config.require("spectrum").grid
    return frequency_grid(grid.fmin_hz, grid.fmax_hz, grid.points, config.params, grid.refine)


def steady_record(steady: SteadyState) -> Dict:
    return {
        "alpha_abs_sq": np.abs(steady.alpha) ** 2,
        "detuning_rad_s": steady.detuning,
        "xbar": steady.xbar,
        "iterations": steady.iterations,
    }


def resolved_record(config: RunConfig, steady: Optional[SteadyState] = None, **extra) -> Dict:
    record = {
        "config_path": str(config.path),
        "schema_version": config.schema_version,
        "params": config.params.to_record(),
        "config": config.document,
    }
    if steady is not None:
        record["steady_state"] = steady_record(steady)
    record.update(extra)
    return plain(record)


def compute_spectrum(
    config: RunConfig,
    params: Optional[SystemParams] = None,
    steady: Optional[SteadyState] = None,
) -> Tuple[SpectrumResult, SteadyState]:
    settings = config.require("spectrum")
    params = params or config.params
    steady = steady or solve_steady_state(params)
    spectrum = psd(
        params,
        selector_for(settings),
        grid_for(config),
        solver=settings.solver,
        steady=steady,
        symmetrized=settings.symmetrized,
        one_sided=settings.one_sided,
        detection=detection_for(settings),
    )
    return spectrum, steady


def run_spectrum(config: RunConfig, out_dir) -> Path:
    spectrum, steady = compute_spectrum(config)
    path = Path(out_dir) / f"{config.path.stem}_spectrum.csv"
    return write_spectrum_csv(path, spectrum, resolved_record(config, steady))


def run_thermal(config: RunConfig, out_dir) -> Tuple[Path, pd.DataFrame]:
    """Homodyne spectrum with the pump off: thermal peaks over the shot-noise and electronic levels."""
    detection = config.require("spectrum").detection
    params = pump_off_params(config.params)
    spectrum, steady = compute_spectrum(config, params)
    floor, _ = compute_spectrum(config, shot_noise_params(params))
    shot_level = float(np.median(floor.values)) - detection.electronic_floor
    windows = [(mode.omega_m, THERMAL_FIT_LINEWIDTHS * mode.gamma_m) for mode in params.mechanical]
    peaks, report = fit_lorentzians(spectrum, len(windows), windows)

    rows = []
    for j, (mode, peak) in enumerate(zip(params.mechanical, peaks)):
        top = float(lorentzian_model(peak.center, [peak], peak.offset))
        rows.append(
            {
                "membrane": j + 1,
                "resonance_hz": mode.omega_m / TWO_PI,
                "damping_hz": mode.gamma_m / TWO_PI,
                "center_hz": peak.center / TWO_PI,
                "fwhm_hz": peak.fwhm / TWO_PI,
                "area": peak.area,
                "peak_over_floor_db": 10.0 * np.log10(top / (shot_level + detection.electronic_floor)),
            }
        )
        LOGGER.info(
            "Membrane %d: thermal peak at %.3f Hz, FWHM %.3f Hz", j + 1, rows[-1]["center_hz"], rows[-1]["fwhm_hz"]
        )
    levels = {
        "shot_noise_level": shot_level,
        "electronic_floor": detection.electronic_floor,
        "fit_converged": report.converged,
        "fit_residual_norm": report.residual_norm,
    }
    spectrum.metadata.update(levels, pump="off")
    write_spectrum_csv(
        Path(out_dir) / f"{config.path.stem}_thermal.csv", spectrum, resolved_record(config, steady, pump="off")
    )
    table = pd.DataFrame(rows)
    path = write_csv(Path(out_dir) / f"{config.path.stem}_thermal_peaks.csv", table, levels)
    return path, table


def find_dips(config: RunConfig, spectrum: SpectrumResult) -> pd.DataFrame:
    """One row per membrane with the deepest interior minimum near its bare frequency."""
    halfwidth_hz = config.require("spectrum").dip_halfwidth_hz
    if halfwidth_hz is None:
        raise ValidationError("spectrum.dips.halfwidth_hz is required to search for dips")
    rows = []
    for j, mode in enumerate(config.params.mechanical):
        found = dip_finder(spectrum, [(mode.omega_m, TWO_PI * halfwidth_hz)], linewidth=mode.gamma_m)
        row = {"membrane": j + 1, "resonance_hz": mode.omega_m / TWO_PI, "found": bool(found)}
        if found:
            dip = found[0]
            row.update(
                dip_hz=dip.freq_hz,
                offset_hz=(dip.omega - mode.omega_m) / TWO_PI,
                offset_linewidths=abs(dip.omega - mode.omega_m) / mode.gamma_m,
                depth_db=dip.depth_db,
                value=dip.value,
                baseline=dip.baseline,
            )
        rows.append(row)
    return pd.DataFrame(rows)


def run_dips(config: RunConfig, out_dir) -> Tuple[Path, pd.DataFrame]:
    spectrum, steady = compute_spectrum(config)
    table = find_dips(config, spectrum)
    for row in table.itertuples():
        if row.found:
            LOGGER.info("Membrane %d: dip at %.4f Hz, %.1f dB deep", row.membrane, row.dip_hz, row.depth_db)
        else:
            LOGGER.warning("Membrane %d: no dip near %.4f Hz", row.membrane, row.resonance_hz)
    write_spectrum_csv(Path(out_dir) / f"{config.path.stem}_spectrum.csv", spectrum, resolved_record(config, steady))
    path = write_csv(Path(out_dir) / f"{config.path.stem}_dips.csv", table, {"params_hash": spectrum.metadata["params_hash"]})
    return path, table


def seeded_params(config: RunConfig, injected_sq: float) -> SystemParams:
    settings = config.require("cancellation")
    params = config.params
    bandwidth = None if settings.noise_bandwidth_hz is None else TWO_PI * settings.noise_bandwidth_hz
    strength = ou_strength_from_injection(injected_sq, settings.measurement_bw_hz)
    return params.with_noise(params.noise.with_amplitude(settings.laser, strength, bandwidth))


def run_cancellation(config: RunConfig, out_dir) -> Tuple[List[Path], pd.DataFrame]:
    """Spectrum per injected seed; window metrics go into each file's header and a summary table."""
    settings = config.require("cancellation")
    thermal, _ = compute_spectrum(config, pump_off_params(config.params))
    paths, rows = [], []
    for i, injected_sq in enumerate(settings.injected_sq):
        params = seeded_params(config, injected_sq)
        spectrum, steady = compute_spectrum(config, params)
        reference = incoherent_reference(lambda p: compute_spectrum(config, p)[0], params)
        metrics = cancellation_metrics(spectrum, params, thermal, reference)
        spectrum.metadata["injected_sq"] = injected_sq
        if metrics is None:
            LOGGER.warning("Seed %.3g: no cancellation window between the resonances", injected_sq)
            spectrum.metadata["cancellation_window"] = "absent"
            rows.append({"injected_sq": injected_sq, "window": False})
        else:
            record = metrics.to_record()
            LOGGER.info(
                "Seed %.3g: window minimum at %.3f Hz, %.1f dB below the peaks",
                injected_sq, record["window_min_hz"], record["window_depth_db"],
            )
            spectrum.metadata.update(record)
            rows.append({"injected_sq": injected_sq, "window": True, **record})
        path = Path(out_dir) / f"{config.path.stem}_cancellation_{i + 1}.csv"
        paths.append(write_spectrum_csv(path, spectrum, resolved_record(config, steady, injected_sq=injected_sq)))
    table = pd.DataFrame(rows)
    write_csv(Path(out_dir) / f"{config.path.stem}_cancellation_summary.csv", table)
    return paths, table


def run_calibrate(config: RunConfig, out_dir) -> Tuple[Path, pd.DataFrame]:
    settings = config.require("calibration")
    metadata = {"measurement_bw_hz": settings.measurement_bw_hz, "pump_power_w": settings.pump_power_w}
    if settings.phase_modulation_rad_s is not None:
        gamma_l = equivalent_phase_noise(settings.phase_modulation_rad_s, settings.measurement_bw_hz)
        metadata["two_gamma_L"] = 2.0 * gamma_l
    if settings.synthetic is not None:
        synthetic = settings.synthetic
        report = calibration_sweep(
            settings.pump_power_w,
            synthetic.probe_power_w,
            settings.wavelength_m,
            synthetic.modulation_ratios,
            synthetic.modulation_hz,
            synthetic.offset_hz,
            synthetic.sample_rate_hz,
            synthetic.duration_s,
            synthetic.detection_factor,
            settings.measurement_bw_hz,
            settings.lockin_bw_hz,
            settings.lockin_order,
        )
        table = report.table
        metadata.update(max_eps_m_error=report.max_eps_m_error, A_spread=report.A_spread, A_mean=report.A_mean)
    elif settings.readings_csv is None:
        omega_L = laser_angular_frequency(settings.wavelength_m)
        result = calibrate(
            None, None, None, settings.pump_power_w, omega_L,
            settings.measurement_bw_hz, settings.phase_modulation_rad_s,
        )
        table = pd.DataFrame([result.to_record()])
    else:
        readings = load_readings(settings.readings_csv)
        omega_L = laser_angular_frequency(settings.wavelength_m)
        table = pd.DataFrame(
            [
                calibrate(
                    row.v_car, row.v_sb, row.v_omega_m, settings.pump_power_w, omega_L,
                    settings.measurement_bw_hz, settings.phase_modulation_rad_s,
                ).to_record()
                for row in readings.itertuples()
            ]
        )
        metadata["A_mean"] = float(table["A_factor"].mean())
    path = write_csv(Path(out_dir) / f"{config.path.stem}_calibration.csv", table, metadata)
    return path, table


def synthetic_measurement(config: RunConfig, noise: float, seed: int) -> SpectrumResult:
    """Model spectrum of the configured system under multiplicative log-normal noise."""
    spectrum, _ = compute_spectrum(config)
    rng = np.random.default_rng(seed)
    values = spectrum.values * np.exp(noise * rng.standard_normal(spectrum.values.size))
    return SpectrumResult(omega=spectrum.omega, values=values, metadata={**spectrum.metadata, "synthetic_noise": noise})


def run_fit(config: RunConfig, out_dir) -> Tuple[Path, Dict]:
    settings = config.require("fit")
    if settings.measured_csv is not None:
        measured = read_spectrum_csv(settings.measured_csv)
        source = str(settings.measured_csv)
    else:
        measured = synthetic_measurement(config, settings.synthetic_noise, settings.seed)
        source = "synthetic"
    if settings.model == "couplings":
        spectrum_settings = config.require("spectrum")
        report = fit_couplings(
            measured,
            config.params,
            selector_for(spectrum_settings),
            free=settings.free,
            fit_scale=settings.fit_scale,
            starts=settings.starts,
            seed=settings.seed,
            solver=spectrum_settings.solver,
        )
    else:
        windows = [(TWO_PI * center, TWO_PI * halfwidth) for center, halfwidth in settings.windows_hz]
        _, report = fit_lorentzians(measured, len(windows), windows)
    record = report.to_record()
    path = write_key_value_csv(
        Path(out_dir) / f"{config.path.stem}_fit.csv",
        record,
        {"model": settings.model, "measured": source, "seed": settings.seed},
    )
    return path, record


def sim_config_for(config: RunConfig) -> SimConfig:
    settings = config.require("oracle")
    return SimConfig(
        dt=settings.dt_s,
        burn_in=settings.burn_in_s,
        duration=settings.duration_s,
        seed=settings.seed,
        realizations=settings.realizations,
        batch=settings.batch,
        segment_length=settings.segment_length,
        segments_per_realization=settings.segments_per_realization,
        overlap=settings.overlap,
        scheme=settings.scheme,
    )


def run_oracle(config: RunConfig, out_dir, show_progress: bool = True) -> Tuple[Path, Optional[float]]:
    """Welch spectrum of simulated trajectories, compared with the symmetrized analytic spectrum."""
    settings = config.require("oracle")
    sel = selector_for(config.require("spectrum"))
    params = config.params
    steady = solve_steady_state(params)
    cfg = sim_config_for(config)
    empirical = oracle_psd(params, sel, cfg, steady=steady, show_progress=show_progress)
    stem = config.path.stem
    max_deviation = None
    if settings.band_hz is not None:
        band = (TWO_PI * settings.band_hz[0], TWO_PI * settings.band_hz[1])
        analytic = analytic_reference(params, sel, empirical, band, steady)
        comparison = compare_spectra(empirical, analytic, band)
        max_deviation = comparison.max_deviation
        passed = max_deviation < settings.tolerance
        empirical.metadata.update(max_deviation=max_deviation, tolerance=settings.tolerance, passed=passed)
        write_csv(
            Path(out_dir) / f"{stem}_oracle_comparison.csv",
            comparison.table,
            {"max_deviation": max_deviation, "mean_deviation": comparison.mean_deviation},
        )
        log = LOGGER.info if passed else LOGGER.warning
        log("Oracle vs analytic: max deviation %.3f (tolerance %.3f)", max_deviation, settings.tolerance)
    if settings.record_series:
        result = integrate(params, steady, cfg, selectors=[sel])
        series = result.settled(selector_name(sel))[:: settings.decimate]
        times = result.times[result.burn_in_steps : result.burn_in_steps + series.size * settings.decimate : settings.decimate]
        write_csv(Path(out_dir) / f"{stem}_oracle_series.csv", pd.DataFrame({"time_s": times[: series.size], "output": series}))
    path = write_spectrum_csv(Path(out_dir) / f"{stem}_oracle.csv", empirical, resolved_record(config, steady))
    return path, max_deviation


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over the config file."""
    if config.spectrum is not None:
        spectrum = config.spectrum
        grid = spectrum.grid
        grid = replace(
            grid,
            fmin_hz=grid.fmin_hz if args.fmin is None else args.fmin,
            fmax_hz=grid.fmax_hz if args.fmax is None else args.fmax,
            points=grid.points if args.points is None else args.points,
        )
        spectrum = replace(
            spectrum,
            grid=grid,
            solver=args.solver or spectrum.solver,
            quadrature=args.quadrature or spectrum.quadrature,
            port=args.port or spectrum.port,
            symmetrized=spectrum.symmetrized if args.symmetrized is None else args.symmetrized,
            one_sided=spectrum.one_sided if args.one_sided is None else args.one_sided,
        )
        config = replace(config, spectrum=spectrum)
    if args.seed is not None:
        if config.oracle is not None:
            config = replace(config, oracle=replace(config.oracle, seed=args.seed))
        if config.fit is not None:
            config = replace(config, fit=replace(config.fit, seed=args.seed))
    return config


def build_arg_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="Output directory")
    common.add_argument(
        "--log_level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level",
    )

    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--config", required=True, help="Path to run config YAML")
    run.add_argument("--solver", choices=["full", "rwa"], help="Linear solver for the quantum Langevin system")
    run.add_argument("--seed", type=int, help="Seed for simulated trajectories and synthetic fit data")
    run.add_argument("--fmin", type=float, help="Lower grid edge in Hz")
    run.add_argument("--fmax", type=float, help="Upper grid edge in Hz")
    run.add_argument("--points", type=int, help="Uniform grid points before refinement")
    run.add_argument("--quadrature", choices=["x", "y"], help="Output quadrature")
    run.add_argument("--port", help="Output port: t2 or r1 (t1, r2 with generic_port)")
    run.add_argument("--one_sided", action=argparse.BooleanOptionalAction, default=None, help="Fold to a one-sided spectrum")
    run.add_argument(
        "--symmetrized", action=argparse.BooleanOptionalAction, default=None, help="Use symmetrized noise correlations"
    )

    parser = argparse.ArgumentParser(description="Noise spectra of a two-membrane optomechanical cavity")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("spectrum", parents=[run], help="Output quadrature spectrum")
    commands.add_parser("thermal", parents=[run], help="Thermal peaks with the pump off, against the noise floors")
    commands.add_parser("cancellation", parents=[run], help="Cancellation window per injected noise seed")
    commands.add_parser("dips", parents=[run], help="Interference dips near each membrane resonance")
    commands.add_parser("calibrate", parents=[run], help="Noise calibration from lock-in readings")
    commands.add_parser("fit", parents=[run], help="Coupling or Lorentzian fits")
    oracle = commands.add_parser("oracle", parents=[run], help="Time-domain cross-check of the analytic spectrum")
    oracle.add_argument("--progress", action=argparse.BooleanOptionalAction, default=True, help="Show batch progress")

    acceptance = commands.add_parser("acceptance", parents=[common], help="Run every acceptance criterion")
    acceptance.add_argument("--tolerance_scale", type=float, default=1.0, help="Multiply every tolerance")
    acceptance.add_argument("--only", type=int, action="append", help="Run only this criterion (repeatable)")
    acceptance.add_argument("--progress", action=argparse.BooleanOptionalAction, default=True, help="Show progress")
    return parser


def dispatch(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    if args.command == "acceptance":
        from acceptance import run_all_acceptance

        report = run_all_acceptance(
            out_dir, tolerance_scale=args.tolerance_scale, only=args.only, show_progress=args.progress
        )
        failed = report.loc[~report["passed"].astype(bool), "criterion"].unique()
        if len(failed):
            logging.error("Acceptance failed for criteria %s", ", ".join(str(c) for c in sorted(failed)))
            return EXIT_ACCEPTANCE
        logging.info("All acceptance criteria passed")
        return EXIT_OK

    config = apply_overrides(load_run_config(args.config), args)
    if args.command == "spectrum":
        run_spectrum(config, out_dir)
    elif args.command == "thermal":
        run_thermal(config, out_dir)
    elif args.command == "cancellation":
        run_cancellation(config, out_dir)
    elif args.command == "dips":
        run_dips(config, out_dir)
    elif args.command == "calibrate":
        run_calibrate(config, out_dir)
    elif args.command == "fit":
        run_fit(config, out_dir)
    elif args.command == "oracle":
        _, max_deviation = run_oracle(config, out_dir, show_progress=args.progress)
        tolerance = config.oracle.tolerance
        if max_deviation is not None and not max_deviation < tolerance:
            logging.error("Oracle deviation %.3f exceeds tolerance %.3f", max_deviation, tolerance)
            return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)

    setup_logging(args.log_level)
    try:
        return dispatch(args)
    except (ValidationError, FileNotFoundError) as exc:
        logging.error("%s", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        logging.error("%s", exc)
        return EXIT_NUMERICAL
    except Exception as exc:  # noqa: BLE001
        logging.exception("Run failed: %s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
