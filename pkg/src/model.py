"""Physical parameters, susceptibilities and the self-consistent steady state.

Internal units are rad/s, s, W, K. Python indices are zero-based: optical
index 0 is the probe (mode 1), index 1 the pump (mode 2); membrane index 0 is
membrane 1. Coupling entries are ``g0[j][k]`` for membrane j and optical mode k.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from constant import Constant
from exceptions import ConvergenceError, PoleError, ValidationError

LOGGER = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
PROBE = 0
PUMP = 1
DEFAULT_NOISE_BANDWIDTH = TWO_PI * 10e6
STEADY_STATE_TOLERANCE = 1e-12
STEADY_STATE_MAX_ITERATIONS = 5000
STEADY_STATE_DAMPING = 0.5
STEADY_STATE_SEEDS = (0.0, 0.2, -0.2)
BRANCH_SEPARATION = 1e-6
HIGH_Q_RATIO = 0.1
POLE_TOLERANCE = 64 * np.finfo(float).eps
PROBE_DETUNING_TOLERANCE = 1e-12


def hz_to_rad_s(value):
    return TWO_PI * np.asarray(value, dtype=float) if np.ndim(value) else TWO_PI * float(value)


def rad_s_to_hz(value):
    return np.asarray(value, dtype=float) / TWO_PI if np.ndim(value) else float(value) / TWO_PI


def laser_angular_frequency(wavelength: float) -> float:
    if wavelength <= 0:
        raise ValidationError("wavelength must be positive")
    return TWO_PI * Constant.C_LIGHT / wavelength


def high_temperature_occupancy(omega: float, temperature: float) -> float:
    return Constant.K_B * temperature / (Constant.HBAR * omega)


def bose_einstein_occupancy(omega: float, temperature: float) -> float:
    if temperature <= 0:
        return 0.0
    return float(1.0 / np.expm1(Constant.HBAR * omega / (Constant.K_B * temperature)))


@dataclass(frozen=True)
class OpticalMode:
    omega_L: float
    detuning0: float
    kappa1: float
    kappa2: float
    kappa_l: float = 0.0
    power: float = 0.0

    def __post_init__(self) -> None:
        if min(self.kappa1, self.kappa2, self.kappa_l) < 0:
            raise ValidationError("optical decay rates must be non-negative")
        if not self.kappa > 0:
            raise ValidationError("total optical decay rate must be positive")
        if self.power < 0:
            raise ValidationError("laser power must be non-negative")
        if self.omega_L <= 0:
            raise ValidationError("laser frequency must be positive")

    @classmethod
    def from_total(
        cls,
        kappa: float,
        omega_L: float,
        detuning0: float,
        power: float,
        kappa1: Optional[float] = None,
        kappa2: Optional[float] = None,
        kappa_l: Optional[float] = None,
    ) -> "OpticalMode":
        loss = 0.0 if kappa_l is None else kappa_l
        if kappa1 is None and kappa2 is None:
            kappa1 = kappa2 = 0.5 * (kappa - loss)
        elif kappa1 is None:
            kappa1 = kappa - kappa2 - loss
        elif kappa2 is None:
            kappa2 = kappa - kappa1 - loss
        mode = cls(
            omega_L=omega_L,
            detuning0=detuning0,
            kappa1=kappa1,
            kappa2=kappa2,
            kappa_l=loss,
            power=power,
        )
        if not np.isclose(mode.kappa, kappa, rtol=1e-12, atol=0.0):
            raise ValidationError(
                f"decay rates do not add up: {kappa1} + {kappa2} + {loss} != {kappa}"
            )
        return mode

    @property
    def kappa(self) -> float:
        return self.kappa1 + self.kappa2 + self.kappa_l

    @property
    def omega_c(self) -> float:
        return self.omega_L + self.detuning0

    @property
    def drive_mean(self) -> float:
        return float(np.sqrt(self.power * self.kappa1 / (Constant.HBAR * self.omega_L)))

    def port_rate(self, port: int) -> float:
        return {1: self.kappa1, 2: self.kappa2}[port]


@dataclass(frozen=True)
class MechanicalMode:
    omega_m: float
    gamma_m: float
    n_th: float = 0.0
    temperature: float = 0.0
    mass_eff: Optional[float] = None

    def __post_init__(self) -> None:
        if self.omega_m <= 0:
            raise ValidationError("mechanical frequency must be positive")
        if self.gamma_m <= 0:
            raise ValidationError("mechanical damping must be positive")
        if self.n_th < 0 or self.temperature < 0:
            raise ValidationError("thermal occupancy and temperature must be non-negative")
        if self.gamma_m > HIGH_Q_RATIO * self.omega_m:
            LOGGER.warning(
                "Mechanical damping %.4g rad/s exceeds omega_m/10 (%.4g rad/s); "
                "the high-Q static displacement formula degrades",
                self.gamma_m,
                self.omega_m / 10,
            )

    @classmethod
    def from_temperature(
        cls,
        omega_m: float,
        gamma_m: float,
        temperature: float,
        mass_eff: Optional[float] = None,
    ) -> "MechanicalMode":
        return cls(
            omega_m=omega_m,
            gamma_m=gamma_m,
            n_th=high_temperature_occupancy(omega_m, temperature),
            temperature=temperature,
            mass_eff=mass_eff,
        )


@dataclass(frozen=True)
class CouplingMatrix:
    g0: Tuple[Tuple[float, float], Tuple[float, float]]

    def __post_init__(self) -> None:
        values = np.asarray(self.g0, dtype=float)
        if values.shape != (2, 2):
            raise ValidationError(f"coupling matrix must be 2x2, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("coupling entries must be finite")
        object.__setattr__(self, "g0", tuple(tuple(float(v) for v in row) for row in values))

    @classmethod
    def from_array(cls, values) -> "CouplingMatrix":
        return cls(g0=tuple(map(tuple, np.asarray(values, dtype=float))))

    @classmethod
    def zeros(cls) -> "CouplingMatrix":
        return cls(g0=((0.0, 0.0), (0.0, 0.0)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.g0, dtype=float)

    def with_entry(self, j: int, k: int, value: float) -> "CouplingMatrix":
        values = self.array
        values[j, k] = value
        return CouplingMatrix.from_array(values)

    def __getitem__(self, index: int) -> Tuple[float, float]:
        return self.g0[index]


@dataclass(frozen=True)
class NoiseSpec:
    gamma_eps_strength: Tuple[float, float] = (0.0, 0.0)
    gamma_eps_bw: Tuple[float, float] = (DEFAULT_NOISE_BANDWIDTH, DEFAULT_NOISE_BANDWIDTH)
    gamma_L_strength: Tuple[float, float] = (0.0, 0.0)
    gamma_phi_bw: Tuple[float, float] = (DEFAULT_NOISE_BANDWIDTH, DEFAULT_NOISE_BANDWIDTH)

    def __post_init__(self) -> None:
        for name in ("gamma_eps_strength", "gamma_eps_bw", "gamma_L_strength", "gamma_phi_bw"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != 2:
                raise ValidationError(f"{name} needs one entry per laser")
            if min(values) < 0:
                raise ValidationError(f"{name} must be non-negative")
            object.__setattr__(self, name, values)
        for k in range(2):
            if self.gamma_eps_strength[k] > 0 and self.gamma_eps_bw[k] <= 0:
                raise ValidationError(f"laser {k + 1}: amplitude noise bandwidth must be positive")
            if self.gamma_L_strength[k] > 0 and self.gamma_phi_bw[k] <= 0:
                raise ValidationError(f"laser {k + 1}: phase noise bandwidth must be positive")

    def with_amplitude(
        self, k: int, strength: float, bandwidth: Optional[float] = None
    ) -> "NoiseSpec":
        strengths = list(self.gamma_eps_strength)
        bandwidths = list(self.gamma_eps_bw)
        strengths[k] = strength
        if bandwidth is not None:
            bandwidths[k] = bandwidth
        return replace(self, gamma_eps_strength=tuple(strengths), gamma_eps_bw=tuple(bandwidths))

    def with_phase(
        self, k: int, strength: float, bandwidth: Optional[float] = None
    ) -> "NoiseSpec":
        strengths = list(self.gamma_L_strength)
        bandwidths = list(self.gamma_phi_bw)
        strengths[k] = strength
        if bandwidth is not None:
            bandwidths[k] = bandwidth
        return replace(self, gamma_L_strength=tuple(strengths), gamma_phi_bw=tuple(bandwidths))

    def active_bandwidths(self) -> List[float]:
        active = [bw for s, bw in zip(self.gamma_eps_strength, self.gamma_eps_bw) if s > 0]
        active += [bw for s, bw in zip(self.gamma_L_strength, self.gamma_phi_bw) if s > 0]
        return active

    @property
    def is_quiet(self) -> bool:
        return not (any(self.gamma_eps_strength) or any(self.gamma_L_strength))


@dataclass(frozen=True)
class SystemParams:
    optical: Tuple[OpticalMode, OpticalMode]
    mechanical: Tuple[MechanicalMode, MechanicalMode]
    couplings: CouplingMatrix
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    lo_phase: float = 0.0
    include_loss_port: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "optical", tuple(self.optical))
        object.__setattr__(self, "mechanical", tuple(self.mechanical))
        if len(self.optical) != 2 or len(self.mechanical) != 2:
            raise ValidationError("the system has exactly two optical and two mechanical modes")

    def with_couplings(self, couplings) -> "SystemParams":
        if not isinstance(couplings, CouplingMatrix):
            couplings = CouplingMatrix.from_array(couplings)
        return replace(self, couplings=couplings)

    def with_noise(self, noise: NoiseSpec) -> "SystemParams":
        return replace(self, noise=noise)

    def with_power(self, k: int, power: float) -> "SystemParams":
        optical = list(self.optical)
        optical[k] = replace(optical[k], power=power)
        return replace(self, optical=tuple(optical))

    def to_record(self) -> Dict:
        return asdict(self)

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_record(), sort_keys=True, default=float)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class SteadyState:
    alpha: np.ndarray
    xbar: np.ndarray
    detuning: np.ndarray
    g_eff: np.ndarray
    iterations: int = 0


def chi_c(mode: OpticalMode, omega, detuning: Optional[float] = None):
    delta = mode.detuning0 if detuning is None else detuning
    return 1.0 / (0.5 * mode.kappa - 1j * (np.asarray(omega, dtype=float) - delta))


def chi_m(mode: MechanicalMode, omega):
    return 1.0 / (0.5 * mode.gamma_m - 1j * (np.asarray(omega, dtype=float) - mode.omega_m))


def sigma_k(steady: SteadyState, params: SystemParams, k: int, omega):
    """Optical self-energy kernel i|alpha_k|^2 [chi_c*(-w) - chi_c(w)] of mode k."""
    mode = params.optical[k]
    delta = float(steady.detuning[k])
    omega = np.asarray(omega, dtype=float)
    forward = chi_c(mode, omega, delta)
    mirrored = np.conj(chi_c(mode, -omega, delta))
    return 1j * abs(steady.alpha[k]) ** 2 * (mirrored - forward)


def _check_pole(inverse, scale, omega, label: str) -> None:
    inverse = np.atleast_1d(inverse)
    scale = np.broadcast_to(np.atleast_1d(scale), inverse.shape)
    bad = np.abs(inverse) <= POLE_TOLERANCE * scale
    if np.any(bad):
        where = np.broadcast_to(np.atleast_1d(omega), inverse.shape)[bad][0]
        raise PoleError(f"{label} inverse susceptibility vanishes at omega={where:.9g} rad/s", where)


def _dressed_inverse(j: int, steady: SteadyState, params: SystemParams, omega):
    g0 = params.couplings.array
    bare = 1.0 / chi_m(params.mechanical[j], omega)
    self_energy = sum(
        1j * g0[j, k] ** 2 * sigma_k(steady, params, k, omega) for k in range(2)
    )
    return bare + self_energy, np.abs(bare) + np.abs(self_energy)


def chi_m_dressed(j: int, steady: SteadyState, params: SystemParams, omega):
    inverse, scale = _dressed_inverse(j, steady, params, omega)
    _check_pole(inverse, scale, omega, f"dressed mechanical mode {j + 1}")
    return 1.0 / inverse


def cross_self_energy(steady: SteadyState, params: SystemParams, omega):
    """Sum over optical modes of g0[0,k] g0[1,k] sigma_k, the membrane-membrane kernel."""
    g0 = params.couplings.array
    return sum(g0[0, k] * g0[1, k] * sigma_k(steady, params, k, omega) for k in range(2))


def chi_m_rwa(
    j: int,
    steady: SteadyState,
    params: SystemParams,
    omega,
    dressed_partner: bool = True,
):
    other = 1 - j
    inverse, scale = _dressed_inverse(j, steady, params, omega)
    if dressed_partner:
        partner = chi_m_dressed(other, steady, params, omega)
    else:
        partner = chi_m(params.mechanical[other], omega)
    exchange = cross_self_energy(steady, params, omega) ** 2 * partner
    inverse = inverse + exchange
    _check_pole(inverse, scale + np.abs(exchange), omega, f"rwa mechanical mode {j + 1}")
    return 1.0 / inverse


def _fixed_point_maps(params: SystemParams):
    g0 = params.couplings.array
    drive = np.array([mode.drive_mean for mode in params.optical])
    half_kappa = 0.5 * np.array([mode.kappa for mode in params.optical])
    detuning0 = np.array([mode.detuning0 for mode in params.optical])
    omega_m = np.array([mode.omega_m for mode in params.mechanical])

    def detuning_of(xbar: np.ndarray) -> np.ndarray:
        return detuning0 - g0.T @ xbar

    def alpha_of(detuning: np.ndarray) -> np.ndarray:
        return drive / (half_kappa + 1j * detuning)

    def xbar_of(alpha: np.ndarray) -> np.ndarray:
        return 2.0 * (g0 @ np.abs(alpha) ** 2) / omega_m

    return detuning0, detuning_of, alpha_of, xbar_of


def _distinct_branches(branches: Sequence[np.ndarray]) -> List[np.ndarray]:
    distinct: List[np.ndarray] = []
    for xbar in branches:
        scale = max(np.max(np.abs(xbar)), np.finfo(float).tiny)
        if all(np.max(np.abs(xbar - seen)) > BRANCH_SEPARATION * scale for seen in distinct):
            distinct.append(xbar)
    return distinct


def solve_steady_state(
    params: SystemParams,
    tolerance: float = STEADY_STATE_TOLERANCE,
    max_iterations: int = STEADY_STATE_MAX_ITERATIONS,
    damping: float = STEADY_STATE_DAMPING,
) -> SteadyState:
    detuning0, detuning_of, alpha_of, xbar_of = _fixed_point_maps(params)
    converged: List[Tuple[np.ndarray, int]] = []
    candidates: List[np.ndarray] = []
    for perturbation in STEADY_STATE_SEEDS:
        xbar = xbar_of(alpha_of(detuning0 * (1.0 + perturbation)))
        for iteration in range(1, max_iterations + 1):
            target = xbar_of(alpha_of(detuning_of(xbar)))
            step = target - xbar
            if np.max(np.abs(step)) <= tolerance * np.max(np.abs(target)):
                converged.append((target, iteration))
                break
            xbar = xbar + damping * step
        candidates.append(xbar)

    if not converged:
        raise ConvergenceError(
            f"Steady state did not converge within {max_iterations} iterations "
            f"from {len(STEADY_STATE_SEEDS)} seeds",
            candidates,
        )
    branches = _distinct_branches([xbar for xbar, _ in converged])
    if len(branches) > 1:
        LOGGER.warning(
            "Found %d steady-state branches (bistable region); using the first: %s",
            len(branches),
            "; ".join(np.array2string(b, precision=6) for b in branches),
        )

    xbar, iterations = converged[0]
    detuning = detuning_of(xbar)
    alpha = alpha_of(detuning)
    g_eff = params.couplings.array * alpha[np.newaxis, :]
    probe = params.optical[PROBE]
    if abs(detuning[PROBE]) > PROBE_DETUNING_TOLERANCE * probe.kappa:
        LOGGER.warning(
            "Effective probe detuning is %.6g rad/s, not zero; readout assumes a locked probe",
            detuning[PROBE],
        )
    LOGGER.debug("Steady state after %d iterations: |alpha|^2=%s", iterations, np.abs(alpha) ** 2)
    return SteadyState(alpha=alpha, xbar=xbar, detuning=detuning, g_eff=g_eff, iterations=iterations)


def _relative(residual: np.ndarray, reference: np.ndarray) -> float:
    scale = np.maximum(np.abs(reference), np.finfo(float).tiny)
    mask = np.abs(residual) > 0
    return float(np.max(np.abs(residual[mask]) / scale[mask])) if np.any(mask) else 0.0


def steady_state_residuals(params: SystemParams, steady: SteadyState) -> Dict[str, float]:
    """Relative residuals of the field, displacement and detuning equations."""
    _, detuning_of, alpha_of, xbar_of = _fixed_point_maps(params)
    return {
        "alpha": _relative(steady.alpha - alpha_of(steady.detuning), steady.alpha),
        "xbar": _relative(steady.xbar - xbar_of(steady.alpha), steady.xbar),
        "detuning": _relative(steady.detuning - detuning_of(steady.xbar), steady.detuning),
    }
