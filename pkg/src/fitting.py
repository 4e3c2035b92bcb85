"""Lorentzian peak fits and single-photon coupling fits."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
)

from constant import Constant
from exceptions import DegenerateWindow, IdentifiabilityWarning, NoConvergence, ValidationError
from model import TWO_PI, NoiseSpec, SystemParams, solve_steady_state
from spectra import QuadratureSelector, SpectrumResult, psd

LOGGER = logging.getLogger(__name__)

MIN_WINDOW_POINTS = 20
FLAT_TOLERANCE = 1e-12
SOLVER_TOLERANCE = 1e-12
MAX_EVALUATIONS = 2000
FIT_ATTEMPTS = 3
WIDTH_GROWTH = 2.0
COUPLING_UNIT = TWO_PI * 1.0
COUPLING_DIFF_STEP = 1e-6
IDENTIFIABILITY_LIMIT = 0.01
DEFAULT_FREE = ((0, 1), (1, 1))


@dataclass(frozen=True)
class LorentzianPeak:
    center: float
    fwhm: float
    area: float
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.fwhm > 0:
            raise ValidationError("Lorentzian width must be positive")
        if self.area < 0:
            raise ValidationError("Lorentzian area must be non-negative")


@dataclass(frozen=True)
class FitReport:
    estimates: Dict[str, float]
    uncertainties: Dict[str, float]
    residual_norm: float
    converged: bool
    iterations: int
    message: str = ""

    def __post_init__(self) -> None:
        if any(not value >= 0 for value in self.uncertainties.values()):
            raise ValidationError("uncertainties must be non-negative")

    def to_record(self) -> Dict[str, object]:
        record: Dict[str, object] = {}
        for name, value in self.estimates.items():
            record[name] = value
            record[f"{name}_sigma"] = self.uncertainties.get(name, float("nan"))
        record.update(
            residual_norm=self.residual_norm,
            converged=self.converged,
            iterations=self.iterations,
            message=self.message,
        )
        return record


def lorentzian_model(omega, peaks: Sequence[LorentzianPeak], offset: float = 0.0) -> np.ndarray:
    """Sum of area-normalized Lorentzians on a constant offset."""
    omega = np.asarray(omega, dtype=float)
    total = np.full_like(omega, offset)
    for peak in peaks:
        half = 0.5 * peak.fwhm
        total += peak.area / np.pi * half / ((omega - peak.center) ** 2 + half**2)
    return total


def _half_max_width(omega: np.ndarray, values: np.ndarray, floor: float) -> float:
    top = int(np.argmax(values))
    half = floor + 0.5 * (values[top] - floor)
    left = right = top
    while left > 0 and values[left - 1] >= half:
        left -= 1
    while right < values.size - 1 and values[right + 1] >= half:
        right += 1
    spacing = np.min(np.diff(omega)) if omega.size > 1 else 1.0
    return float(max(omega[right] - omega[left], 2.0 * spacing))


def _window_guesses(spectrum: SpectrumResult, windows):
    guesses = []
    union = np.zeros(spectrum.omega.shape, dtype=bool)
    for center, halfwidth in windows:
        mask = np.abs(spectrum.omega - center) <= halfwidth
        omega, values = spectrum.omega[mask], spectrum.values[mask]
        if omega.size < MIN_WINDOW_POINTS:
            raise DegenerateWindow(
                f"window around {center / TWO_PI:.6f} Hz holds {omega.size} points, "
                f"need {MIN_WINDOW_POINTS}"
            )
        span = float(np.max(values) - np.min(values))
        if span <= FLAT_TOLERANCE * max(float(np.max(np.abs(values))), np.finfo(float).tiny):
            raise DegenerateWindow(f"no peak resolved in the window around {center / TWO_PI:.6f} Hz")
        floor = float(np.min(values))
        top = int(np.argmax(values))
        guesses.append((float(omega[top]), float(values[top] - floor), _half_max_width(omega, values, floor)))
        union |= mask
    return guesses, union


def _solve_lorentzians(omega, values, guesses, width_scale: float):
    y_scale = float(np.max(np.abs(values)))
    floor = float(np.min(values))
    centers = np.array([g[0] for g in guesses])
    widths = np.array([g[2] for g in guesses]) * width_scale
    areas = np.array([0.5 * np.pi * g[1] * g[2] for g in guesses])
    n_peaks = len(guesses)
    reference = np.where(np.abs(values) > 0, np.abs(values), y_scale)

    def unpack(p):
        center = centers + widths * p[0:n_peaks]
        fwhm = widths * np.exp(p[n_peaks : 2 * n_peaks])
        area = areas * np.exp(p[2 * n_peaks : 3 * n_peaks])
        return center, fwhm, area, y_scale * p[-1]

    def residuals(p):
        center, fwhm, area, offset = unpack(p)
        half = 0.5 * fwhm[:, np.newaxis]
        model = offset + np.sum(
            area[:, np.newaxis] / np.pi * half / ((omega - center[:, np.newaxis]) ** 2 + half**2), axis=0
        )
        return (model - values) / reference

    p0 = np.concatenate([np.zeros(n_peaks), np.zeros(n_peaks), np.zeros(n_peaks), [floor / y_scale]])
    result = least_squares(
        residuals,
        p0,
        method="trf",
        xtol=SOLVER_TOLERANCE,
        ftol=SOLVER_TOLERANCE,
        gtol=SOLVER_TOLERANCE,
        max_nfev=MAX_EVALUATIONS,
    )
    center, fwhm, area, offset = unpack(result.x)
    if result.status <= 0 or not np.all(np.isfinite(result.x)) or np.any(area < 0):
        raise NoConvergence(
            f"Lorentzian fit stopped without converging: {result.message}",
            best=list(zip(center, fwhm, area)),
        )
    return result, (center, fwhm, area, offset), widths, areas, y_scale


def _covariance(result) -> np.ndarray:
    m, n = result.jac.shape
    dof = max(m - n, 1)
    return np.linalg.pinv(result.jac.T @ result.jac) * (2.0 * result.cost / dof)


def fit_lorentzians(
    spectrum: SpectrumResult,
    n_peaks: int,
    init_windows: Sequence[Tuple[float, float]],
) -> Tuple[List[LorentzianPeak], FitReport]:
    """Joint least-squares fit of n_peaks Lorentzians over the union of (center, halfwidth) windows.

    Widths and areas are fitted in log space and residuals are relative, so
    peaks spanning decades weigh evenly. A failed solve is retried with a wider
    initial width.
    """
    if len(init_windows) != n_peaks:
        raise ValidationError(f"need one window per peak: {n_peaks} peaks, {len(init_windows)} windows")
    guesses, union = _window_guesses(spectrum, init_windows)
    omega, values = spectrum.omega[union], spectrum.values[union]

    for attempt in Retrying(
        stop=stop_after_attempt(FIT_ATTEMPTS),
        retry=retry_if_exception_type(NoConvergence),
        before_sleep=before_sleep_log(LOGGER, logging.WARNING),
        reraise=True,
    ):
        with attempt:
            width_scale = WIDTH_GROWTH ** (attempt.retry_state.attempt_number - 1)
            result, (center, fwhm, area, offset), widths, _, y_scale = _solve_lorentzians(
                omega, values, guesses, width_scale
            )

    sigma = np.sqrt(np.clip(np.diag(_covariance(result)), 0.0, None))
    peaks = []
    estimates: Dict[str, float] = {}
    uncertainties: Dict[str, float] = {}
    for i in range(n_peaks):
        peaks.append(LorentzianPeak(center=float(center[i]), fwhm=float(fwhm[i]), area=float(area[i]), offset=float(offset)))
        estimates[f"center_{i + 1}"] = float(center[i])
        estimates[f"fwhm_{i + 1}"] = float(fwhm[i])
        estimates[f"area_{i + 1}"] = float(area[i])
        uncertainties[f"center_{i + 1}"] = float(widths[i] * sigma[i])
        uncertainties[f"fwhm_{i + 1}"] = float(fwhm[i] * sigma[n_peaks + i])
        uncertainties[f"area_{i + 1}"] = float(area[i] * sigma[2 * n_peaks + i])
    estimates["offset"] = float(offset)
    uncertainties["offset"] = float(y_scale * sigma[-1])
    report = FitReport(
        estimates=estimates,
        uncertainties=uncertainties,
        residual_norm=float(np.linalg.norm(result.fun)),
        converged=True,
        iterations=int(result.nfev),
        message=str(result.message),
    )
    return peaks, report


def coupling_name(j: int, k: int) -> str:
    return f"g0_{j + 1}{k + 1}_hz"


@dataclass(frozen=True)
class CouplingFitReport(FitReport):
    elasticity: Dict[str, float] = field(default_factory=dict)
    unidentifiable: Tuple[str, ...] = ()
    starts: int = 1
    best_start: int = 0

    def to_record(self) -> Dict[str, object]:
        record = super().to_record()
        for name, value in self.elasticity.items():
            record[f"{name}_elasticity"] = value
        record["unidentifiable"] = ",".join(self.unidentifiable)
        record["starts"] = self.starts
        record["best_start"] = self.best_start
        return record


def fit_couplings(
    measured: SpectrumResult,
    params: SystemParams,
    sel: QuadratureSelector,
    noise: Optional[NoiseSpec] = None,
    free: Sequence[Tuple[int, int]] = DEFAULT_FREE,
    fit_scale: bool = True,
    starts: int = 3,
    seed: int = 0,
    solver: str = Constant.SOLVER_FULL,
) -> CouplingFitReport:
    """Fit squared couplings (g0 / 2pi Hz)^2 and an optional log detection scale.

    Minimizes sum (log S_model + s - log S_meas)^2 over the measured grid.
    Auto-spectra do not see the sign of g0; fitted values keep the sign held in
    ``params``.
    """
    if noise is not None:
        params = params.with_noise(noise)
    if starts < 1:
        raise ValidationError("coupling fit needs at least one start")
    if np.any(measured.values <= 0):
        raise ValidationError("measured spectrum must be positive for a log-space fit")
    free = [tuple(pair) for pair in free]
    if not free:
        raise ValidationError("no couplings selected for fitting")
    base = params.couplings.array
    signs = np.where(base < 0, -1.0, 1.0)
    log_measured = np.log(measured.values)
    n_free = len(free)

    def model_log(weights: np.ndarray) -> np.ndarray:
        couplings = base.copy()
        for (j, k), w in zip(free, weights):
            couplings[j, k] = signs[j, k] * COUPLING_UNIT * np.sqrt(max(w, 0.0))
        trial = params.with_couplings(couplings)
        return np.log(psd(trial, sel, measured.omega, solver=solver, steady=solve_steady_state(trial)).values)

    def residuals(p: np.ndarray) -> np.ndarray:
        scale = p[n_free] if fit_scale else 0.0
        return model_log(p[:n_free]) + scale - log_measured

    rng = np.random.default_rng(seed)
    lower = np.concatenate([np.zeros(n_free), [-np.inf] if fit_scale else []])
    best = None
    for start in range(starts):
        weights0 = (10.0 ** rng.uniform(-1.0, 0.0, size=n_free)) ** 2
        p0 = weights0
        if fit_scale:
            p0 = np.concatenate([weights0, [float(np.median(log_measured - model_log(weights0)))]])
        result = least_squares(
            residuals,
            p0,
            jac="3-point",
            bounds=(lower, np.inf),
            method="trf",
            diff_step=COUPLING_DIFF_STEP,
            xtol=SOLVER_TOLERANCE,
            ftol=SOLVER_TOLERANCE,
            gtol=SOLVER_TOLERANCE,
            max_nfev=MAX_EVALUATIONS,
        )
        LOGGER.info("Coupling fit start %d: cost %.6g after %d evaluations", start + 1, result.cost, result.nfev)
        if result.status > 0 and (best is None or result.cost < best[1].cost):
            best = (start, result)
    if best is None:
        raise NoConvergence(f"coupling fit did not converge from {starts} starts")
    best_start, result = best

    m = measured.omega.size
    sigma = np.sqrt(np.clip(np.diag(_covariance(result)), 0.0, None))
    estimates: Dict[str, float] = {}
    uncertainties: Dict[str, float] = {}
    elasticity: Dict[str, float] = {}
    for i, (j, k) in enumerate(free):
        name = coupling_name(j, k)
        w = float(result.x[i])
        g_hz = float(np.sqrt(w))
        estimates[name] = float(signs[j, k] * g_hz)
        uncertainties[name] = float(sigma[i] / (2.0 * g_hz)) if g_hz > 0 else float(np.sqrt(sigma[i]))
        elasticity[name] = float(np.linalg.norm(result.jac[:, i]) * 2.0 * w / np.sqrt(m))
    if fit_scale:
        estimates["log_scale"] = float(result.x[n_free])
        uncertainties["log_scale"] = float(sigma[n_free])

    unidentifiable = tuple(name for name, value in elasticity.items() if value < IDENTIFIABILITY_LIMIT)
    for name in unidentifiable:
        warnings.warn(
            f"{name} barely moves the model spectrum (elasticity {elasticity[name]:.3g}); "
            "its estimate is not identifiable from these data",
            IdentifiabilityWarning,
            stacklevel=2,
        )
    return CouplingFitReport(
        estimates=estimates,
        uncertainties=uncertainties,
        residual_norm=float(np.linalg.norm(result.fun)),
        converged=True,
        iterations=int(result.nfev),
        message=str(result.message),
        elasticity=elasticity,
        unidentifiable=unidentifiable,
        starts=starts,
        best_start=best_start,
    )
