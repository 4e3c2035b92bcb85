"""Frequency-domain solve of the linearized system and output quadrature spectra.

Fluctuation vector v = [a1, a1_dag, a2, a2_dag, b1, b1_dag, b2, b2_dag] obeys
dv/dt = -M0 v + N n(t), hence M(w) v(w) = N n(w) with M(w) = M0 - i w I.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from constant import Constant
from exceptions import (
    SingularSystemError,
    SpectrumError,
    UnsupportedPort,
    ValidationError,
    WindowTooCoarse,
)
from model import (
    PUMP,
    TWO_PI,
    NoiseSpec,
    SteadyState,
    SystemParams,
    chi_c,
    chi_m_dressed,
    chi_m_rwa,
    cross_self_energy,
    solve_steady_state,
)
from noise import (
    LOSS_PORT,
    NoiseBasis,
    amplitude_label,
    correlation_matrix,
    mechanical_label,
    noise_basis,
    optical_label,
    phase_label,
)

LOGGER = logging.getLogger(__name__)

STATE_SIZE = 8
CONDITION_LIMIT = 1e14
CLAMP_TOLERANCE = 1e-12
IMAG_RATIO_LIMIT = 1e-10
REFINE_HALF_SPAN = 20.0
REFINE_POINTS_PER_LINEWIDTH = 16
MIN_WINDOW_POINTS = 8
INTERFERENCE_TOLERANCE = 1e-9
PORTS = {
    Constant.PORT_TRANSMISSION_2: (PUMP, 2),
    Constant.PORT_REFLECTION_1: (0, 1),
    "t1": (0, 2),
    "r2": (PUMP, 1),
}


def optical_rows(k: int) -> Tuple[int, int]:
    return 2 * k, 2 * k + 1


def mechanical_rows(j: int) -> Tuple[int, int]:
    return 4 + 2 * j, 5 + 2 * j


@dataclass(frozen=True)
class QuadratureSelector:
    which: str = Constant.QUADRATURE_X
    mode: int = PUMP
    mirror: int = 2
    lo_phase: Optional[float] = None
    lo_reference: str = Constant.LO_REFERENCE_LASER
    generic: bool = False

    def __post_init__(self) -> None:
        if self.which not in Constant.QUADRATURES:
            raise ValidationError(f"quadrature must be one of {Constant.QUADRATURES}, got {self.which!r}")
        if self.lo_reference not in (Constant.LO_REFERENCE_LASER, Constant.LO_REFERENCE_FIELD):
            raise ValidationError(f"unknown LO phase reference {self.lo_reference!r}")
        if self.mode not in (0, 1) or self.mirror not in (1, 2):
            raise UnsupportedPort(f"no such port: mode {self.mode + 1}, mirror {self.mirror}")
        if not self.generic and self.port_name not in Constant.NATIVE_PORTS:
            raise UnsupportedPort(
                f"port {self.port_name} (mode {self.mode + 1}, mirror {self.mirror}) "
                f"needs generic_port; supported ports are {Constant.NATIVE_PORTS}"
            )

    @classmethod
    def from_port_name(cls, port: str, which: str = Constant.QUADRATURE_X, **kwargs) -> "QuadratureSelector":
        if port not in PORTS:
            raise UnsupportedPort(f"unknown port {port!r}; expected one of {sorted(PORTS)}")
        mode, mirror = PORTS[port]
        return cls(which=which, mode=mode, mirror=mirror, **kwargs)

    @property
    def port_name(self) -> str:
        return ("t" if self.mirror == 2 else "r") + str(self.mode + 1)

    def phase(self, params: SystemParams, steady: SteadyState) -> float:
        phi = params.lo_phase if self.lo_phase is None else self.lo_phase
        if self.lo_reference == Constant.LO_REFERENCE_FIELD:
            phi += float(np.angle(steady.alpha[self.mode]))
        return phi


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    omega: np.ndarray
    system: np.ndarray
    input_map: np.ndarray
    solution: np.ndarray
    rwa: bool = False


@dataclass(frozen=True)
class DetectionChain:
    factor: float = 1.0
    shot_floor: float = 0.0
    electronic_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.factor <= 0:
            raise ValidationError("detection factor must be positive")
        if self.shot_floor < 0 or self.electronic_floor < 0:
            raise ValidationError("detection floors must be non-negative")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.factor * values + self.shot_floor + self.electronic_floor


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    omega: np.ndarray
    values: np.ndarray
    metadata: Dict = field(default_factory=dict)

    @property
    def freq_hz(self) -> np.ndarray:
        return self.omega / TWO_PI

    def window(self, low: float, high: float) -> "SpectrumResult":
        mask = (self.omega >= low) & (self.omega <= high)
        return SpectrumResult(omega=self.omega[mask], values=self.values[mask], metadata=dict(self.metadata))


def system_matrices(
    params: SystemParams, steady: SteadyState, rwa: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """Drift matrix M0 and input map N. With rwa the b_dag columns of the optical rows are dropped."""
    basis = noise_basis(params.include_loss_port)
    idx = basis.index
    m0 = np.zeros((STATE_SIZE, STATE_SIZE), dtype=complex)
    n_map = np.zeros((STATE_SIZE, len(basis)), dtype=complex)
    g = steady.g_eff

    for k, mode in enumerate(params.optical):
        a, a_dag = optical_rows(k)
        delta = steady.detuning[k]
        m0[a, a] = 0.5 * mode.kappa + 1j * delta
        m0[a_dag, a_dag] = 0.5 * mode.kappa - 1j * delta
        for j in range(2):
            b, b_dag = mechanical_rows(j)
            m0[a, b] = -1j * g[j, k]
            m0[a_dag, b] = 1j * np.conj(g[j, k])
            if not rwa:
                m0[a, b_dag] = -1j * g[j, k]
                m0[a_dag, b_dag] = 1j * np.conj(g[j, k])

        root1, root2 = np.sqrt(mode.kappa1), np.sqrt(mode.kappa2)
        for row, dagger in ((a, False), (a_dag, True)):
            n_map[row, idx[optical_label(1, k, dagger)]] = root1
            n_map[row, idx[optical_label(2, k, dagger)]] = root2
            n_map[row, idx[amplitude_label(k)]] = root1
            if params.include_loss_port:
                n_map[row, idx[optical_label(LOSS_PORT, k, dagger)]] = np.sqrt(mode.kappa_l)
        n_map[a, idx[phase_label(k)]] = 1j * steady.alpha[k]
        n_map[a_dag, idx[phase_label(k)]] = -1j * np.conj(steady.alpha[k])

    for j, mode in enumerate(params.mechanical):
        b, b_dag = mechanical_rows(j)
        m0[b, b] = 0.5 * mode.gamma_m + 1j * mode.omega_m
        m0[b_dag, b_dag] = 0.5 * mode.gamma_m - 1j * mode.omega_m
        for k in range(2):
            a, a_dag = optical_rows(k)
            m0[b, a] = -1j * np.conj(g[j, k])
            m0[b, a_dag] = -1j * g[j, k]
            m0[b_dag, a] = 1j * np.conj(g[j, k])
            m0[b_dag, a_dag] = 1j * g[j, k]
        n_map[b, idx[mechanical_label(j)]] = np.sqrt(mode.gamma_m)
        n_map[b_dag, idx[mechanical_label(j, True)]] = np.sqrt(mode.gamma_m)
    return m0, n_map


def build_system(
    params: SystemParams, steady: SteadyState, omega, rwa: bool = False
) -> TransferMatrix:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    m0, n_map = system_matrices(params, steady, rwa=rwa)
    system = m0[np.newaxis, :, :] - 1j * omega[:, np.newaxis, np.newaxis] * np.eye(STATE_SIZE)

    condition = np.linalg.cond(system)
    bad = ~np.isfinite(condition) | (condition > CONDITION_LIMIT)
    if np.any(bad):
        first = int(np.argmax(bad))
        raise SingularSystemError(float(omega[first]), float(condition[first]))
    rhs = np.broadcast_to(n_map, (omega.size,) + n_map.shape)
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(float(omega[0]), float("inf")) from exc
    return TransferMatrix(omega=omega, system=system, input_map=n_map, solution=solution, rwa=rwa)


def mirror_rows(coefficients: np.ndarray, basis: NoiseBasis) -> np.ndarray:
    """Coefficients of the adjoint operator at +w from those of the operator at -w."""
    return np.conj(coefficients[..., list(basis.partner)])


def rwa_mechanical_rows(params: SystemParams, steady: SteadyState, omega) -> np.ndarray:
    """Closed-form rotating-wave solution; returns b_j coefficients with shape (len(omega), 2, n_inputs)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    _, n_map = system_matrices(params, steady, rwa=True)
    g = steady.g_eff
    forces = []
    for j in range(2):
        b, _ = mechanical_rows(j)
        force = np.broadcast_to(n_map[b], (omega.size, n_map.shape[1])).astype(complex)
        for k, mode in enumerate(params.optical):
            a, a_dag = optical_rows(k)
            chi = chi_c(mode, omega, steady.detuning[k])[:, np.newaxis]
            chi_mirror = np.conj(chi_c(mode, -omega, steady.detuning[k]))[:, np.newaxis]
            force = force + 1j * (np.conj(g[j, k]) * chi * n_map[a] + g[j, k] * chi_mirror * n_map[a_dag])
        forces.append(force)

    cross = cross_self_energy(steady, params, omega)[:, np.newaxis]
    rows = np.empty((omega.size, 2, n_map.shape[1]), dtype=complex)
    for j in range(2):
        other = 1 - j
        partner = chi_m_dressed(other, steady, params, omega)[:, np.newaxis]
        effective = chi_m_rwa(j, steady, params, omega)[:, np.newaxis]
        rows[:, j, :] = effective * (forces[j] - 1j * cross * partner * forces[other])
    return rows


def rwa_transfer(params: SystemParams, steady: SteadyState, omega) -> np.ndarray:
    """Full (len(omega), 8, n_inputs) solution map assembled from the closed form."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    basis = noise_basis(params.include_loss_port)
    _, n_map = system_matrices(params, steady, rwa=True)
    positive = rwa_mechanical_rows(params, steady, omega)
    negative = rwa_mechanical_rows(params, steady, -omega)
    g = steady.g_eff

    solution = np.empty((omega.size, STATE_SIZE, len(basis)), dtype=complex)
    for j in range(2):
        b, b_dag = mechanical_rows(j)
        solution[:, b] = positive[:, j]
        # b_dag(w) is the adjoint of b(-w)
        solution[:, b_dag] = mirror_rows(negative[:, j], basis)
    for k, mode in enumerate(params.optical):
        a, a_dag = optical_rows(k)
        chi = chi_c(mode, omega, steady.detuning[k])[:, np.newaxis]
        chi_mirror = np.conj(chi_c(mode, -omega, steady.detuning[k]))[:, np.newaxis]
        drive = sum(g[j, k] * positive[:, j] for j in range(2))
        drive_dag = sum(np.conj(g[j, k]) * positive[:, j] for j in range(2))
        solution[:, a] = chi * (n_map[a] + 1j * drive)
        solution[:, a_dag] = chi_mirror * (n_map[a_dag] - 1j * drive_dag)
    return solution


def quadrature_weights(
    params: SystemParams, steady: SteadyState, sel: QuadratureSelector
) -> Tuple[np.ndarray, np.ndarray]:
    """Weights q on the state and d on the inputs such that Q_out = q.v + d.n."""
    basis = noise_basis(params.include_loss_port)
    idx = basis.index
    mode = params.optical[sel.mode]
    phi = sel.phase(params, steady)
    rate = np.sqrt(mode.port_rate(sel.mirror))
    down, up = np.exp(-1j * phi), np.exp(1j * phi)
    if sel.which == Constant.QUADRATURE_X:
        field_weights = (down / np.sqrt(2), up / np.sqrt(2))
        eps_weight = -np.sqrt(2) * np.cos(phi)
    else:
        field_weights = (-1j * down / np.sqrt(2), 1j * up / np.sqrt(2))
        eps_weight = np.sqrt(2) * np.sin(phi)

    state = np.zeros(STATE_SIZE, dtype=complex)
    a, a_dag = optical_rows(sel.mode)
    state[a], state[a_dag] = rate * field_weights[0], rate * field_weights[1]
    direct = np.zeros(len(basis), dtype=complex)
    direct[idx[optical_label(sel.mirror, sel.mode)]] = -field_weights[0]
    direct[idx[optical_label(sel.mirror, sel.mode, True)]] = -field_weights[1]
    if sel.mirror == 1:
        direct[idx[amplitude_label(sel.mode)]] = eps_weight
    return state, direct


def _solution(params, steady, omega, solver: str) -> np.ndarray:
    if solver == Constant.SOLVER_FULL:
        return build_system(params, steady, omega).solution
    if solver == Constant.SOLVER_RWA:
        return rwa_transfer(params, steady, omega)
    raise ValidationError(f"solver must be one of {Constant.SOLVERS}, got {solver!r}")


def output_quadrature_row(
    params: SystemParams,
    steady: SteadyState,
    sel: QuadratureSelector,
    omega,
    solver: str = Constant.SOLVER_FULL,
) -> np.ndarray:
    state, direct = quadrature_weights(params, steady, sel)
    solution = _solution(params, steady, omega, solver)
    return np.einsum("s,nsi->ni", state, solution) + direct


def _validate_grid(omega: np.ndarray) -> None:
    if omega.ndim != 1 or omega.size == 0:
        raise ValidationError("frequency grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(omega)):
        raise ValidationError("frequency grid must be finite")
    if omega.size > 1 and np.any(np.diff(omega) <= 0):
        raise ValidationError("frequency grid must be strictly increasing")


def _contract(left: np.ndarray, corr: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nij,nj->n", left, corr, right)


def psd(
    params: SystemParams,
    sel: QuadratureSelector,
    omega_grid,
    solver: str = Constant.SOLVER_FULL,
    steady: Optional[SteadyState] = None,
    symmetrized: bool = False,
    one_sided: bool = False,
    detection: Optional[DetectionChain] = None,
) -> SpectrumResult:
    """Output quadrature spectrum S(w) = sum_ij c_i(w) C_ij(w) c_j(-w)."""
    omega = np.asarray(omega_grid, dtype=float)
    _validate_grid(omega)
    if one_sided and np.any(omega < 0):
        raise ValidationError("one-sided spectra need a non-negative grid")
    if steady is None:
        steady = solve_steady_state(params)

    positive = output_quadrature_row(params, steady, sel, omega, solver)
    negative = output_quadrature_row(params, steady, sel, -omega, solver)
    corr = correlation_matrix(params, omega, symmetrized=symmetrized).values
    raw = _contract(positive, corr, negative)
    if one_sided:
        # correlations are even in w, so S(-w) reuses C(w)
        raw = raw + _contract(negative, corr, positive)

    real = raw.real
    magnitude = np.abs(real)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(magnitude > 0, np.abs(raw.imag) / magnitude, 0.0)
    max_imag_ratio = float(np.max(ratios))
    if max_imag_ratio > IMAG_RATIO_LIMIT:
        LOGGER.warning("Spectrum imaginary part reaches %.3e of the real part", max_imag_ratio)

    floor = -CLAMP_TOLERANCE * float(np.max(magnitude))
    if np.any(real < floor):
        worst = int(np.argmin(real))
        raise SpectrumError(
            f"Spectrum is negative beyond roundoff at omega={omega[worst]:.9g} rad/s ({real[worst]:.6g})"
        )
    negative_mask = real < 0
    clamped = int(np.count_nonzero(negative_mask))
    if clamped:
        LOGGER.warning("Clamped %d roundoff-negative spectrum values to zero", clamped)
    values = np.where(negative_mask, 0.0, real)

    detection = detection or DetectionChain()
    values = detection.apply(values)
    metadata = {
        "convention": Constant.CONVENTION,
        "params_hash": params.fingerprint(),
        "solver": solver,
        "quadrature": sel.which,
        "port": sel.port_name,
        "lo_phase_rad": sel.phase(params, steady),
        "lo_reference": sel.lo_reference,
        "symmetrized": symmetrized,
        "one_sided": one_sided,
        "clamped": clamped,
        "max_imag_ratio": max_imag_ratio,
        "detection_factor": detection.factor,
        "shot_floor": detection.shot_floor,
        "electronic_floor": detection.electronic_floor,
        "points": int(omega.size),
    }
    return SpectrumResult(omega=omega.copy(), values=values, metadata=metadata)


def frequency_grid(
    fmin_hz: float,
    fmax_hz: float,
    points: int,
    params: Optional[SystemParams] = None,
    refine: bool = True,
) -> np.ndarray:
    """Uniform grid in rad/s, densified to gamma_m/16 spacing within 20 linewidths of each resonance."""
    if points < 2:
        raise ValidationError("frequency grid needs at least 2 points")
    if not fmax_hz > fmin_hz:
        raise ValidationError("frequency grid needs fmax_hz > fmin_hz")
    low, high = TWO_PI * fmin_hz, TWO_PI * fmax_hz
    pieces = [np.linspace(low, high, points)]
    if refine and params is not None:
        for mode in params.mechanical:
            if not low <= mode.omega_m <= high:
                continue
            step = mode.gamma_m / REFINE_POINTS_PER_LINEWIDTH
            half = REFINE_HALF_SPAN * mode.gamma_m
            patch = mode.omega_m + step * np.arange(-round(half / step), round(half / step) + 1)
            pieces.append(patch[(patch >= low) & (patch <= high)])
    return np.unique(np.concatenate(pieces))


@dataclass(frozen=True)
class Dip:
    omega: float
    depth_db: float
    value: float
    baseline: float
    center: float

    @property
    def freq_hz(self) -> float:
        return self.omega / TWO_PI


def dip_finder(
    spectrum: SpectrumResult,
    windows: Sequence[Tuple[float, float]],
    linewidth: Optional[float] = None,
) -> List[Dip]:
    """Interior minimum of each (center, halfwidth) window and its depth below the window-edge baseline."""
    dips = []
    for center, halfwidth in windows:
        mask = np.abs(spectrum.omega - center) <= halfwidth
        omega = spectrum.omega[mask]
        values = spectrum.values[mask]
        if omega.size < MIN_WINDOW_POINTS:
            raise WindowTooCoarse(
                f"window {center / TWO_PI:.6f} Hz +/- {halfwidth / TWO_PI:.3f} Hz holds "
                f"{omega.size} points, need {MIN_WINDOW_POINTS}"
            )
        lowest = int(np.argmin(values))
        if lowest in (0, omega.size - 1):
            continue
        if linewidth is not None:
            spacing = max(omega[lowest] - omega[lowest - 1], omega[lowest + 1] - omega[lowest])
            if spacing > linewidth / MIN_WINDOW_POINTS:
                raise WindowTooCoarse(
                    f"grid spacing {spacing:.4g} rad/s near {omega[lowest] / TWO_PI:.6f} Hz "
                    f"exceeds linewidth/{MIN_WINDOW_POINTS}"
                )
        baseline = 0.5 * (values[0] + values[-1])
        value = float(values[lowest])
        depth = np.inf if value <= 0 else 10.0 * np.log10(baseline / value)
        if depth <= 0:
            continue
        dips.append(Dip(omega=float(omega[lowest]), depth_db=float(depth), value=value,
                        baseline=float(baseline), center=float(center)))
    return dips


@dataclass(frozen=True)
class CancellationMetrics:
    omega_min: float
    value_min: float
    peak_omegas: Tuple[float, float]
    peak_values: Tuple[float, float]
    depth_db: float
    width: float
    thermal_level: float
    incoherent_value: float

    @property
    def suppression_db(self) -> float:
        """How far the window minimum sits below the incoherent reference."""
        if self.value_min <= 0:
            return float("inf")
        return float(10.0 * np.log10(self.incoherent_value / self.value_min))

    def to_record(self) -> Dict[str, float]:
        return {
            "window_min_hz": self.omega_min / TWO_PI,
            "window_min_value": self.value_min,
            "peak_low_hz": self.peak_omegas[0] / TWO_PI,
            "peak_high_hz": self.peak_omegas[1] / TWO_PI,
            "peak_low_value": self.peak_values[0],
            "peak_high_value": self.peak_values[1],
            "window_depth_db": self.depth_db,
            "window_width_hz": self.width / TWO_PI,
            "thermal_level": self.thermal_level,
            "incoherent_value": self.incoherent_value,
            "suppression_db": self.suppression_db,
        }


def _resonance_peaks(spectrum: SpectrumResult, params: SystemParams):
    centers = sorted(mode.omega_m for mode in params.mechanical)
    half = 0.5 * (centers[1] - centers[0])
    peaks = []
    for center in centers:
        indices = np.flatnonzero(np.abs(spectrum.omega - center) <= half)
        if indices.size < 3:
            return None
        top = indices[int(np.argmax(spectrum.values[indices]))]
        if top in (indices[0], indices[-1]):
            return None
        peaks.append(int(top))
    return peaks


def pump_off_params(params: SystemParams) -> SystemParams:
    """Pump switched off and quiet lasers: the membranes move under their thermal baths only."""
    return params.with_power(PUMP, 0.0).with_noise(NoiseSpec())


def shot_noise_params(params: SystemParams) -> SystemParams:
    """Membranes decoupled and quiet lasers, so only vacuum inputs reach the detector."""
    return params.with_couplings(np.zeros((2, 2))).with_noise(NoiseSpec())


def single_membrane_params(params: SystemParams, j: int) -> SystemParams:
    """Copy of params where only membrane j keeps its couplings."""
    g0 = params.couplings.array.copy()
    g0[1 - j] = 0.0
    return params.with_couplings(g0)


def incoherent_reference(
    evaluate: Callable[[SystemParams], SpectrumResult], params: SystemParams
) -> SpectrumResult:
    """S(membrane 1 alone) + S(membrane 2 alone) - S(no membrane).

    Everything except the coherent cross term between the two membrane paths survives,
    including any affine detection chain applied by evaluate.
    """
    first = evaluate(single_membrane_params(params, 0))
    second = evaluate(single_membrane_params(params, 1))
    bare = evaluate(params.with_couplings(np.zeros((2, 2))))
    return SpectrumResult(
        omega=first.omega,
        values=first.values + second.values - bare.values,
        metadata={**first.metadata, "reference": "incoherent"},
    )


def cancellation_metrics(
    spectrum: SpectrumResult,
    params: SystemParams,
    thermal: Optional[SpectrumResult] = None,
    reference: Optional[SpectrumResult] = None,
    sel: Optional[QuadratureSelector] = None,
    solver: str = Constant.SOLVER_FULL,
) -> Optional[CancellationMetrics]:
    """Window between the two resonance peaks, or None when there is no destructive interference.

    A window needs the minimum between the peaks to fall below the incoherent reference at the
    same frequency. Without a reference one is built with psd on the spectrum's grid, which needs
    sel. thermal only sets the level at which the window width is read.
    """
    peaks = _resonance_peaks(spectrum, params)
    if peaks is None:
        return None
    low, high = peaks
    if high - low < 2:
        return None
    between = np.arange(low + 1, high)
    lowest = int(between[int(np.argmin(spectrum.values[between]))])
    value = float(spectrum.values[lowest])
    peak_values = (float(spectrum.values[low]), float(spectrum.values[high]))
    if not value < min(peak_values):
        return None

    if reference is None:
        if sel is None:
            raise ValidationError("cancellation_metrics needs a reference spectrum or a quadrature selector")
        reference = incoherent_reference(lambda p: psd(p, sel, spectrum.omega, solver=solver), params)
    if reference.omega.shape != spectrum.omega.shape or not np.allclose(reference.omega, spectrum.omega):
        raise ValidationError("reference spectrum must share the spectrum's frequency grid")
    incoherent = float(reference.values[lowest])
    if not value < incoherent * (1.0 - INTERFERENCE_TOLERANCE):
        return None

    level = min(peak_values)
    if thermal is not None:
        thermal_peaks = _resonance_peaks(thermal, params)
        if thermal_peaks is not None:
            level = min(float(thermal.values[i]) for i in thermal_peaks)
    left = right = lowest
    if value <= level:
        while left > low and spectrum.values[left - 1] <= level:
            left -= 1
        while right < high and spectrum.values[right + 1] <= level:
            right += 1
    width = float(spectrum.omega[right] - spectrum.omega[left])
    depth = np.inf if value <= 0 else 10.0 * np.log10(min(peak_values) / value)
    return CancellationMetrics(
        omega_min=float(spectrum.omega[lowest]),
        value_min=value,
        peak_omegas=(float(spectrum.omega[low]), float(spectrum.omega[high])),
        peak_values=peak_values,
        depth_db=float(depth),
        width=width,
        thermal_level=float(level),
        incoherent_value=incoherent,
    )
