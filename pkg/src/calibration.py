"""Heterodyne beat model, lock-in demodulation and the noise calibration formulas.

Field amplitudes are in sqrt(photons/s); the photodiode signal is the
detection factor times the beat intensity.
"""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal as sps

from constant import Constant
from exceptions import CalibrationError, InsufficientSettling
from model import TWO_PI, laser_angular_frequency

LOGGER = logging.getLogger(__name__)

LOCKIN_BANDWIDTH_HZ = 19.0
LOCKIN_ORDER = 4
SETTLING_LINEWIDTHS = 10.0
AVERAGE_AFTER_LINEWIDTHS = 6.0
MODULATION_LIMIT = 0.3
MODULATION_WARNING = 0.1
READING_COLUMNS = ["v_car", "v_sb", "v_omega_m"]


def photon_flux(power: float, omega_L: float) -> float:
    return power / (Constant.HBAR * omega_L)


@dataclass(frozen=True)
class BeatConfig:
    eps_a: float
    eps_b: float
    eps_m: float
    Omega_m: float
    Delta: float
    duration: float
    sample_rate: float

    def __post_init__(self) -> None:
        if self.eps_a <= 0:
            raise CalibrationError("carrier amplitude eps_a must be positive")
        if self.eps_b < 0 or self.eps_m < 0:
            raise CalibrationError("probe and modulation amplitudes must be non-negative")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise CalibrationError("duration and sample rate must be positive")
        ratio = self.eps_m / self.eps_a
        if ratio >= MODULATION_LIMIT:
            raise CalibrationError(
                f"modulation eps_m/eps_a = {ratio:.3f} breaks the small-modulation "
                f"expansion (limit {MODULATION_LIMIT})"
            )
        if ratio > MODULATION_WARNING:
            LOGGER.warning(
                "Modulation eps_m/eps_a = %.3f exceeds %.1f; small-modulation formulas lose accuracy",
                ratio,
                MODULATION_WARNING,
            )

    @classmethod
    def from_powers(
        cls,
        pump_power: float,
        probe_power: float,
        wavelength: float,
        modulation_ratio: float,
        modulation_hz: float,
        offset_hz: float,
        sample_rate_hz: float,
        duration_s: float,
    ) -> "BeatConfig":
        omega_L = laser_angular_frequency(wavelength)
        eps_a = np.sqrt(photon_flux(pump_power, omega_L))
        return cls(
            eps_a=float(eps_a),
            eps_b=float(np.sqrt(photon_flux(probe_power, omega_L))),
            eps_m=float(modulation_ratio * eps_a),
            Omega_m=TWO_PI * modulation_hz,
            Delta=TWO_PI * offset_hz,
            duration=duration_s,
            sample_rate=sample_rate_hz,
        )

    @property
    def times(self) -> np.ndarray:
        return np.arange(int(round(self.duration * self.sample_rate))) / self.sample_rate

    def line_amplitudes(self) -> Tuple[float, float, float]:
        """Closed-form (carrier, sideband, modulation) line amplitudes of the small-modulation beat."""
        carrier = 2.0 * self.eps_a * self.eps_b
        sideband = self.eps_m**2 * self.eps_b / (2.0 * self.eps_a)
        return carrier, sideband, self.eps_m**2


def beat_intensity(cfg: BeatConfig, t, exact: bool = False) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    modulation = np.cos(cfg.Omega_m * t)
    beat = np.cos(cfg.Delta * t)
    if exact:
        pump_sq = cfg.eps_a**2 + cfg.eps_m**2 * modulation
        return pump_sq + cfg.eps_b**2 + 2.0 * cfg.eps_b * np.sqrt(pump_sq) * beat
    carrier, sideband, _ = cfg.line_amplitudes()
    return (
        cfg.eps_a**2
        + cfg.eps_b**2
        + cfg.eps_m**2 * modulation
        + carrier * beat
        + sideband * (np.cos((cfg.Omega_m + cfg.Delta) * t) + np.cos((cfg.Omega_m - cfg.Delta) * t))
    )


def synthesize_beat(
    cfg: BeatConfig, detection_factor: float = 1.0, exact: bool = True
) -> Tuple[np.ndarray, np.ndarray]:
    if detection_factor <= 0:
        raise CalibrationError("detection factor must be positive")
    t = cfg.times
    return t, detection_factor * beat_intensity(cfg, t, exact=exact)


def lock_in(
    samples,
    sample_rate: float,
    f_demod: float,
    bw: float = LOCKIN_BANDWIDTH_HZ,
    order: int = LOCKIN_ORDER,
) -> float:
    """Magnitude of the component at f_demod.

    The signal is mixed with cos/sin references and each channel is low-passed
    at bw/2, the baseband image of a band-pass of full width bw around f_demod.
    Only the samples after 6/bw are averaged.
    """
    samples = np.asarray(samples, dtype=float)
    if sample_rate <= 4.0 * f_demod:
        raise CalibrationError(
            f"sample rate {sample_rate:.6g} Hz must exceed 4 x demodulation frequency {f_demod:.6g} Hz"
        )
    duration = samples.size / sample_rate
    if duration < SETTLING_LINEWIDTHS / bw:
        raise InsufficientSettling(
            f"record of {duration:.4g} s is shorter than {SETTLING_LINEWIDTHS:g}/bw = "
            f"{SETTLING_LINEWIDTHS / bw:.4g} s"
        )
    t = np.arange(samples.size) / sample_rate
    phase = TWO_PI * f_demod * t
    sos = sps.butter(order, bw / 2.0, "low", fs=sample_rate, output="sos")
    in_phase = sps.sosfilt(sos, samples * np.cos(phase))
    quadrature = sps.sosfilt(sos, samples * np.sin(phase))
    settled = t >= AVERAGE_AFTER_LINEWIDTHS / bw
    return float(2.0 * np.abs(np.mean(in_phase[settled] + 1j * quadrature[settled])))


def demodulate_lines(
    samples,
    cfg: BeatConfig,
    bw: float = LOCKIN_BANDWIDTH_HZ,
    order: int = LOCKIN_ORDER,
) -> Tuple[float, float, float]:
    """(V_car, V_sb, V_Omega_m) read at Delta, Omega_m + Delta and Omega_m."""
    offset_hz = cfg.Delta / TWO_PI
    modulation_hz = cfg.Omega_m / TWO_PI
    v_car = lock_in(samples, cfg.sample_rate, offset_hz, bw, order)
    v_sb = lock_in(samples, cfg.sample_rate, modulation_hz + offset_hz, bw, order)
    v_omega = lock_in(samples, cfg.sample_rate, modulation_hz, bw, order)
    return v_car, v_sb, v_omega


def equivalent_amplitude_noise(eps_m_sq: float, bw: float) -> float:
    """Gamma_eps for a white injection eps_m^2 within bw; the flat level is twice this."""
    if bw <= 0:
        raise CalibrationError("measurement bandwidth must be positive")
    return eps_m_sq / (2.0 * bw)


def equivalent_phase_noise(phidot: float, bw: float) -> float:
    """Gamma_L from the phase-seed excursion phidot (rad/s, no 2*pi applied) and bw in Hz."""
    if bw <= 0:
        raise CalibrationError("measurement bandwidth must be positive")
    return phidot**2 / (2.0 * bw)


@dataclass(frozen=True)
class CalibrationResult:
    """Amplitude-chain fields are None when only the phase excursion was supplied."""

    V_car: Optional[float] = None
    V_sb: Optional[float] = None
    V_Omega_m: Optional[float] = None
    eps_a_sq: Optional[float] = None
    eps_m_sq: Optional[float] = None
    A_factor: Optional[float] = None
    Gamma_eps_equiv: Optional[float] = None
    Gamma_L_equiv: Optional[float] = None

    @property
    def eps_m(self) -> Optional[float]:
        return None if self.eps_m_sq is None else float(np.sqrt(self.eps_m_sq))

    def to_record(self) -> dict:
        record = {key: value for key, value in asdict(self).items() if value is not None}
        if self.eps_m_sq is not None:
            record["eps_m"] = self.eps_m
            record["two_gamma_eps"] = 2.0 * self.Gamma_eps_equiv
        if self.Gamma_L_equiv is not None:
            record["two_gamma_L"] = 2.0 * self.Gamma_L_equiv
        return record


def calibrate(
    V_car: Optional[float],
    V_sb: Optional[float],
    V_Omega_m: Optional[float],
    P_pu: float,
    omega_L: float,
    BW: float,
    phidot: Optional[float] = None,
) -> CalibrationResult:
    readings = (V_car, V_sb, V_Omega_m)
    if all(value is None for value in readings):
        if phidot is None:
            raise CalibrationError("give the lock-in readings, the phase excursion phidot, or both")
        return CalibrationResult(Gamma_L_equiv=equivalent_phase_noise(phidot, BW))
    if any(value is None for value in readings):
        raise CalibrationError("V_car, V_sb and V_Omega_m must be given together")
    if not V_car > 0:
        raise CalibrationError(f"carrier reading V_car must be positive, got {V_car}")
    if not V_sb > 0:
        raise CalibrationError(f"sideband reading V_sb must be positive, got {V_sb}")
    if not V_Omega_m > 0:
        raise CalibrationError(f"modulation reading V_Omega_m must be positive, got {V_Omega_m}")
    if P_pu <= 0 or omega_L <= 0:
        raise CalibrationError("pump power and laser frequency must be positive")
    eps_a_sq = photon_flux(P_pu, omega_L)
    eps_m_sq = 4.0 * eps_a_sq * V_sb / V_car
    A_factor = V_Omega_m * V_car / (4.0 * eps_a_sq * V_sb)
    return CalibrationResult(
        V_car=float(V_car),
        V_sb=float(V_sb),
        V_Omega_m=float(V_Omega_m),
        eps_a_sq=float(eps_a_sq),
        eps_m_sq=float(eps_m_sq),
        A_factor=float(A_factor),
        Gamma_eps_equiv=equivalent_amplitude_noise(eps_m_sq, BW),
        Gamma_L_equiv=None if phidot is None else equivalent_phase_noise(phidot, BW),
    )


@dataclass(frozen=True, eq=False)
class SweepReport:
    table: pd.DataFrame
    max_eps_m_error: float
    A_spread: float
    A_mean: float


def calibration_sweep(
    pump_power: float,
    probe_power: float,
    wavelength: float,
    ratios: Sequence[float],
    modulation_hz: float,
    offset_hz: float,
    sample_rate_hz: float,
    duration_s: float,
    detection_factor: float,
    measurement_bw: float,
    lockin_bw: float = LOCKIN_BANDWIDTH_HZ,
    order: int = LOCKIN_ORDER,
) -> SweepReport:
    """Synthesize, demodulate and calibrate once per modulation ratio."""
    if not ratios:
        raise CalibrationError("calibration sweep needs at least one modulation ratio")
    omega_L = laser_angular_frequency(wavelength)
    rows = []
    for ratio in ratios:
        cfg = BeatConfig.from_powers(
            pump_power, probe_power, wavelength, ratio, modulation_hz, offset_hz, sample_rate_hz, duration_s
        )
        _, samples = synthesize_beat(cfg, detection_factor)
        result = calibrate(*demodulate_lines(samples, cfg, lockin_bw, order), pump_power, omega_L, measurement_bw)
        rows.append(
            {
                "modulation_ratio": ratio,
                "eps_m_true": cfg.eps_m,
                "eps_m_recovered": result.eps_m,
                "eps_m_error": abs(result.eps_m / cfg.eps_m - 1.0),
                "A_factor": result.A_factor,
            }
        )
        LOGGER.info("ratio %.3f: eps_m recovered to %.3e relative", ratio, rows[-1]["eps_m_error"])
    table = pd.DataFrame(rows)
    mean = float(table["A_factor"].mean())
    table["A_deviation"] = table["A_factor"] / mean - 1.0
    return SweepReport(
        table=table,
        max_eps_m_error=float(table["eps_m_error"].max()),
        A_spread=float(table["A_deviation"].abs().max()),
        A_mean=mean,
    )


def load_readings(path: Path) -> pd.DataFrame:
    """Lock-in readings CSV with one (v_car, v_sb, v_omega_m) triple per row."""
    if not Path(path).exists():
        raise FileNotFoundError(f"Readings file not found: {path}")
    frame = pd.read_csv(path, comment="#")
    missing = [column for column in READING_COLUMNS if column not in frame.columns]
    if missing:
        raise CalibrationError(f"{path}: missing columns {missing}")
    if frame.empty:
        raise CalibrationError(f"{path}: no readings")
    if frame[READING_COLUMNS].isna().any().any():
        raise CalibrationError(f"{path}: readings contain empty values")
    return frame
