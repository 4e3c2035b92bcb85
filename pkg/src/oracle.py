"""Time-domain stochastic integration of the linearized system and Welch spectra.

Vacuum and thermal inputs are complex white noises with symmetrized variances
(1/2 optical, n_th + 1/2 mechanical). Laser noises are Ornstein-Uhlenbeck
paths. Inputs are held constant over each step; the state is propagated with
the exact step map of the drift (or plain Euler on request).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal as sps
from scipy.linalg import expm
from tqdm import tqdm

from constant import Constant
from exceptions import TooShortSeries, UnstableSystem, ValidationError
from model import TWO_PI, SteadyState, SystemParams, solve_steady_state
from noise import amplitude_label, noise_basis, phase_label
from spectra import QuadratureSelector, SpectrumResult, psd, quadrature_weights, system_matrices

LOGGER = logging.getLogger(__name__)

SCHEME_EXPONENTIAL = "exponential"
SCHEME_EULER = "euler"
SCHEMES = (SCHEME_EXPONENTIAL, SCHEME_EULER)
STEPS_PER_PERIOD = 20
BURN_IN_DECAYS = 5.0
SEGMENT_LINEWIDTHS = 8.0
CHUNK_STEPS = 4096
MODAL_CONDITION_LIMIT = 1e10


@dataclass(frozen=True)
class OuProcess:
    strength: float
    bandwidth: float
    x: float = 0.0

    def __post_init__(self) -> None:
        if self.strength < 0:
            raise ValidationError("OU strength must be non-negative")
        if not self.bandwidth > 0:
            raise ValidationError("OU bandwidth must be positive")

    @property
    def variance(self) -> float:
        return self.strength * self.bandwidth

    def decay(self, dt: float) -> float:
        return float(np.exp(-self.bandwidth * dt))

    def innovation(self, dt: float) -> float:
        return float(np.sqrt(self.variance * -np.expm1(-2.0 * self.bandwidth * dt)))


def step_ou(p: OuProcess, dt: float, gauss: float) -> OuProcess:
    return replace(p, x=p.x * p.decay(dt) + p.innovation(dt) * gauss)


def ou_series(p: OuProcess, dt: float, gauss) -> Tuple[np.ndarray, OuProcess]:
    """States after each step for a block of standard normal draws, same recursion as step_ou."""
    gauss = np.asarray(gauss, dtype=float)
    if gauss.size == 0:
        return np.empty(0), p
    decay = p.decay(dt)
    values, _ = sps.lfilter([p.innovation(dt)], [1.0, -decay], gauss, zi=[decay * p.x])
    return values, replace(p, x=float(values[-1]))


@dataclass(frozen=True)
class SimConfig:
    dt: Optional[float] = None
    burn_in: Optional[float] = None
    duration: Optional[float] = None
    seed: int = 0
    realizations: int = 128
    batch: int = 64
    segment_length: int = 32768
    segments_per_realization: int = 4
    overlap: float = 0.0
    scheme: str = SCHEME_EXPONENTIAL
    classical_mode: bool = True

    def __post_init__(self) -> None:
        if self.dt is not None and not self.dt > 0:
            raise ValidationError("oracle time step must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValidationError("burn-in must be non-negative")
        if self.duration is not None and not self.duration > 0:
            raise ValidationError("duration must be positive")
        if self.realizations < 1 or self.batch < 1:
            raise ValidationError("realizations and batch must be at least 1")
        if self.segment_length < 2 or self.segments_per_realization < 1:
            raise ValidationError("Welch segments need at least 2 samples and 1 segment per realization")
        if not 0.0 <= self.overlap < 1.0:
            raise ValidationError("Welch overlap must lie in [0, 1)")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.classical_mode:
            raise ValidationError("trajectories realize only symmetrized (classical) correlations")

    @property
    def noverlap(self) -> int:
        return int(self.overlap * self.segment_length)

    @property
    def burn_in_steps(self) -> int:
        return int(np.ceil(self._require("burn_in") / self._require("dt")))

    @property
    def record_steps(self) -> int:
        if self.duration is not None:
            return int(round(self.duration / self._require("dt")))
        hop = self.segment_length - self.noverlap
        return self.segment_length + (self.segments_per_realization - 1) * hop

    def _require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise ValidationError(f"oracle {name} is unresolved; call resolve_config first")
        return value


def drift_matrix(params: SystemParams, steady: SteadyState) -> Tuple[np.ndarray, np.ndarray]:
    m0, n_map = system_matrices(params, steady, rwa=False)
    return -m0, n_map


def check_stability(drift: np.ndarray) -> np.ndarray:
    eigenvalues = np.linalg.eigvals(drift)
    worst = eigenvalues[int(np.argmax(eigenvalues.real))]
    if worst.real >= 0:
        raise UnstableSystem("drift matrix has a non-decaying mode", complex(worst))
    return eigenvalues


def time_step_limit(params: SystemParams) -> float:
    rates = [mode.omega_m for mode in params.mechanical]
    rates += [mode.kappa for mode in params.optical]
    rates += params.noise.active_bandwidths()
    return 1.0 / (STEPS_PER_PERIOD * max(rates) / TWO_PI)


def resolve_config(cfg: SimConfig, params: SystemParams, steady: SteadyState) -> SimConfig:
    """Fill in the automatic time step and burn-in and enforce the time-step limit."""
    limit = time_step_limit(params)
    dt = limit if cfg.dt is None else cfg.dt
    if dt > limit * (1.0 + 1e-12):
        raise ValidationError(f"oracle dt={dt:.4g} s exceeds the limit {limit:.4g} s")
    eigenvalues = check_stability(drift_matrix(params, steady)[0])
    burn_in = cfg.burn_in
    if burn_in is None:
        burn_in = BURN_IN_DECAYS / float(np.min(-eigenvalues.real))
    return replace(cfg, dt=dt, burn_in=burn_in)


class InputStream:
    """Per-realization generator of step-held input records, shape (steps, n_inputs)."""

    def __init__(self, params: SystemParams, dt: float, rng: np.random.Generator):
        basis = noise_basis(params.include_loss_port)
        self.size = len(basis)
        self.dt = dt
        self.rng = rng
        self.pairs: List[Tuple[int, int, float]] = [(a, a_dag, 0.5) for a, a_dag in basis.optical_pairs()]
        self.pairs += [
            (b, b_dag, params.mechanical[j].n_th + 0.5) for j, b, b_dag in basis.mechanical_pairs()
        ]
        self.ou: List[Tuple[int, OuProcess]] = []
        noise = params.noise
        for k in range(2):
            if noise.gamma_eps_strength[k] > 0:
                self.ou.append((basis.index[amplitude_label(k)], OuProcess(noise.gamma_eps_strength[k], noise.gamma_eps_bw[k])))
            if noise.gamma_L_strength[k] > 0:
                self.ou.append((basis.index[phase_label(k)], OuProcess(noise.gamma_L_strength[k], noise.gamma_phi_bw[k])))
        if self.ou:
            start = rng.standard_normal(len(self.ou))
            self.ou = [(i, replace(p, x=float(np.sqrt(p.variance) * g))) for (i, p), g in zip(self.ou, start)]

    def draw(self, steps: int) -> np.ndarray:
        record = np.zeros((steps, self.size), dtype=complex)
        normals = self.rng.standard_normal((steps, 2 * len(self.pairs) + len(self.ou)))
        for column, (a, a_dag, variance) in enumerate(self.pairs):
            scale = np.sqrt(0.5 * variance / self.dt)
            values = scale * (normals[:, 2 * column] + 1j * normals[:, 2 * column + 1])
            record[:, a] = values
            record[:, a_dag] = np.conj(values)
        offset = 2 * len(self.pairs)
        for column, (index, process) in enumerate(self.ou):
            after, updated = ou_series(process, self.dt, normals[:, offset + column])
            # held value over step n is the state at its start
            record[:, index] = np.concatenate([[process.x], after[:-1]])
            self.ou[column] = (index, updated)
        return record


def generate_inputs(params: SystemParams, cfg: SimConfig, n_steps: Optional[int] = None, rng=None) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if n_steps is None:
        n_steps = cfg.burn_in_steps + cfg.record_steps
    return InputStream(params, cfg._require("dt"), rng).draw(n_steps)


def coarsen_inputs(inputs: np.ndarray) -> np.ndarray:
    """Pairwise step means: the same noise path held over steps of twice the length."""
    inputs = np.asarray(inputs)
    usable = inputs.shape[0] - inputs.shape[0] % 2
    return 0.5 * (inputs[0:usable:2] + inputs[1:usable:2])


class Propagator:
    """Step map v[n+1] = Phi v[n] + G u[n], applied in the eigenbasis of Phi."""

    def __init__(self, drift: np.ndarray, input_map: np.ndarray, dt: float, scheme: str):
        size = drift.shape[0]
        if scheme == SCHEME_EXPONENTIAL:
            self.phi = expm(drift * dt)
            self.gain = np.linalg.solve(drift, self.phi - np.eye(size)) @ input_map
        else:
            self.phi = np.eye(size) + drift * dt
            self.gain = dt * input_map
            rates = np.linalg.eigvals(drift)
            radius = np.abs(1.0 + rates * dt)
            worst = int(np.argmax(radius))
            if radius[worst] >= 1.0:
                raise UnstableSystem(
                    f"Euler step map is unstable at dt={dt:.4g} s (spectral radius {radius[worst]:.6f})",
                    complex(rates[worst]),
                )
        self.eigenvalues, self.modes = np.linalg.eig(self.phi)
        self.modal = np.linalg.cond(self.modes) < MODAL_CONDITION_LIMIT
        if self.modal:
            self.inverse = np.linalg.inv(self.modes)
            self.modal_gain = self.inverse @ self.gain
        else:
            LOGGER.warning("Step map is close to defective; propagating step by step")

    def advance(self, state: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """States at steps 0..T for a batch; state (B, 8), inputs (B, T, n) -> (B, T + 1, 8)."""
        batch, steps, _ = inputs.shape
        out = np.empty((batch, steps + 1, state.shape[1]), dtype=complex)
        out[:, 0] = state
        if not self.modal:
            for n in range(steps):
                out[:, n + 1] = out[:, n] @ self.phi.T + inputs[:, n] @ self.gain.T
            return out
        forcing = inputs @ self.modal_gain.T
        start = state @ self.inverse.T
        modal = np.empty((batch, steps + 1, state.shape[1]), dtype=complex)
        modal[:, 0] = start
        for m, lam in enumerate(self.eigenvalues):
            modal[:, 1:, m], _ = sps.lfilter(
                [1.0], [1.0, -lam], forcing[:, :, m], axis=1, zi=(lam * start[:, m])[:, np.newaxis]
            )
        return modal @ self.modes.T


def output_series(
    states: np.ndarray, inputs: np.ndarray, weights: Tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    """Step-averaged output quadrature, shape (..., T)."""
    state_weights, direct = weights
    projected = states @ state_weights
    return np.real(0.5 * (projected[..., :-1] + projected[..., 1:]) + inputs @ direct)


@dataclass(frozen=True, eq=False)
class SimResult:
    dt: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: Dict[str, np.ndarray] = field(default_factory=dict)
    burn_in_steps: int = 0

    def settled(self, name: str) -> np.ndarray:
        return self.outputs[name][self.burn_in_steps :]


def selector_name(sel: QuadratureSelector) -> str:
    return f"{sel.which}_{sel.port_name}"


def integrate(
    params: SystemParams,
    steady: SteadyState,
    cfg: SimConfig,
    selectors: Sequence[QuadratureSelector] = (),
    inputs: Optional[np.ndarray] = None,
    initial_state: Optional[np.ndarray] = None,
) -> SimResult:
    """Single trajectory from a given or freshly generated input record."""
    cfg = resolve_config(cfg, params, steady)
    drift, input_map = drift_matrix(params, steady)
    if inputs is None:
        inputs = generate_inputs(params, cfg)
        burn_in_steps = cfg.burn_in_steps
    else:
        burn_in_steps = min(cfg.burn_in_steps, inputs.shape[0])
    if inputs.ndim != 2 or inputs.shape[1] != input_map.shape[1]:
        raise ValidationError(f"input record must have shape (steps, {input_map.shape[1]})")
    state = np.zeros(drift.shape[0], dtype=complex) if initial_state is None else np.asarray(initial_state, dtype=complex)

    propagator = Propagator(drift, input_map, cfg.dt, cfg.scheme)
    states = propagator.advance(state[np.newaxis, :], inputs[np.newaxis, :, :])[0]
    outputs = {
        selector_name(sel): output_series(states, inputs, quadrature_weights(params, steady, sel))
        for sel in selectors
    }
    return SimResult(
        dt=cfg.dt,
        times=cfg.dt * np.arange(inputs.shape[0] + 1),
        states=states,
        inputs=inputs,
        outputs=outputs,
        burn_in_steps=burn_in_steps,
    )


def welch_psd(series, cfg: SimConfig, min_linewidth: Optional[float] = None) -> SpectrumResult:
    """Two-sided Hann-window Welch density averaged over realizations, on an ascending rad/s grid.

    The per-Hz two-sided density at f equals the repository spectrum at w = 2 pi f.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    dt = cfg._require("dt")
    length = cfg.segment_length
    if series.shape[-1] < length:
        raise TooShortSeries(f"series of {series.shape[-1]} samples is shorter than one segment ({length})")
    if min_linewidth is not None and length < SEGMENT_LINEWIDTHS / (min_linewidth * dt):
        raise TooShortSeries(
            f"segment of {length} samples does not resolve a linewidth of {min_linewidth:.4g} rad/s; "
            f"need {int(np.ceil(SEGMENT_LINEWIDTHS / (min_linewidth * dt)))}"
        )
    freqs, density = sps.welch(
        series,
        fs=1.0 / dt,
        window="hann",
        nperseg=length,
        noverlap=cfg.noverlap,
        return_onesided=False,
        scaling="density",
        detrend=False,
        axis=-1,
    )
    values = np.fft.fftshift(np.mean(density, axis=0))
    omega = TWO_PI * np.fft.fftshift(freqs)
    return SpectrumResult(
        omega=omega,
        values=values,
        metadata={
            "convention": Constant.CONVENTION,
            "estimator": "welch-hann",
            "segment_length": length,
            "segments": int(series.shape[0] * (1 + (series.shape[-1] - length) // (length - cfg.noverlap))),
            "dt_s": dt,
        },
    )


def oracle_psd(
    params: SystemParams,
    sel: QuadratureSelector,
    cfg: SimConfig,
    steady: Optional[SteadyState] = None,
    show_progress: bool = False,
) -> SpectrumResult:
    """Welch spectrum averaged over independent realizations run in batches."""
    if steady is None:
        steady = solve_steady_state(params)
    cfg = resolve_config(cfg, params, steady)
    drift, input_map = drift_matrix(params, steady)
    propagator = Propagator(drift, input_map, cfg.dt, cfg.scheme)
    weights = quadrature_weights(params, steady, sel)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.realizations)
    burn_in, record = cfg.burn_in_steps, cfg.record_steps
    total = burn_in + record
    min_linewidth = min(mode.gamma_m for mode in params.mechanical)
    LOGGER.info(
        "Oracle: %d realizations x %d steps (dt=%.4g s, burn-in %d steps, scheme %s)",
        cfg.realizations, total, cfg.dt, burn_in, cfg.scheme,
    )

    summed = None
    segments = 0
    starts = range(0, cfg.realizations, cfg.batch)
    for first in tqdm(starts, desc="oracle batches", disable=not show_progress):
        batch_seeds = seeds[first : first + cfg.batch]
        streams = [InputStream(params, cfg.dt, np.random.default_rng(s)) for s in batch_seeds]
        state = np.zeros((len(streams), drift.shape[0]), dtype=complex)
        pieces = []
        for offset in range(0, total, CHUNK_STEPS):
            steps = min(CHUNK_STEPS, total - offset)
            inputs = np.stack([stream.draw(steps) for stream in streams])
            states = propagator.advance(state, inputs)
            pieces.append(output_series(states, inputs, weights))
            state = states[:, -1]
        series = np.concatenate(pieces, axis=1)[:, burn_in:]
        estimate = welch_psd(series, cfg, min_linewidth=min_linewidth)
        weight = series.shape[0]
        summed = estimate.values * weight if summed is None else summed + estimate.values * weight
        segments += estimate.metadata["segments"]
        omega = estimate.omega

    values = summed / cfg.realizations
    return SpectrumResult(
        omega=omega,
        values=values,
        metadata={
            "convention": Constant.CONVENTION,
            "estimator": "welch-hann",
            "params_hash": params.fingerprint(),
            "quadrature": sel.which,
            "port": sel.port_name,
            "realizations": cfg.realizations,
            "segments": segments,
            "segment_length": cfg.segment_length,
            "dt_s": cfg.dt,
            "burn_in_s": cfg.burn_in,
            "scheme": cfg.scheme,
            "seed": cfg.seed,
        },
    )


@dataclass(frozen=True, eq=False)
class Comparison:
    table: pd.DataFrame
    max_deviation: float
    mean_deviation: float


def compare_spectra(
    empirical: SpectrumResult, analytic: SpectrumResult, band: Tuple[float, float]
) -> Comparison:
    """Pointwise relative deviation |empirical / analytic - 1| over a rad/s band."""
    low, high = band
    mask = (empirical.omega >= low) & (empirical.omega <= high)
    if not np.any(mask):
        raise ValidationError("comparison band holds no empirical frequencies")
    omega = empirical.omega[mask]
    slack = 1e-9 * max(abs(omega[0]), abs(omega[-1]))
    if analytic.omega[0] > omega[0] + slack or analytic.omega[-1] < omega[-1] - slack:
        raise ValidationError("analytic spectrum does not cover the comparison band")
    reference = np.interp(omega, analytic.omega, analytic.values)
    deviation = np.abs(empirical.values[mask] / reference - 1.0)
    table = pd.DataFrame(
        {
            Constant.FREQ_HZ: omega / TWO_PI,
            "empirical": empirical.values[mask],
            "analytic": reference,
            "deviation": deviation,
        }
    )
    return Comparison(table=table, max_deviation=float(deviation.max()), mean_deviation=float(deviation.mean()))


def analytic_reference(
    params: SystemParams,
    sel: QuadratureSelector,
    empirical: SpectrumResult,
    band: Tuple[float, float],
    steady: Optional[SteadyState] = None,
) -> SpectrumResult:
    """Symmetrized analytic spectrum on the empirical frequencies of a band."""
    low, high = band
    omega = empirical.omega[(empirical.omega >= low) & (empirical.omega <= high)]
    return psd(params, sel, omega, steady=steady, symmetrized=True)


def dt_halving_deviation(
    params: SystemParams,
    sel: QuadratureSelector,
    cfg: SimConfig,
    band: Tuple[float, float],
    steady: Optional[SteadyState] = None,
    realizations: int = 4,
) -> Comparison:
    """In-band change of the Welch spectrum when dt is halved on the same noise paths.

    The coarse record is the pairwise mean of the fine one, so both runs see one
    realization of every input and only the integration error differs.
    """
    if steady is None:
        steady = solve_steady_state(params)
    cfg = resolve_config(cfg, params, steady)
    fine_cfg = replace(
        cfg, dt=0.5 * cfg.dt, burn_in=cfg.burn_in, segment_length=2 * cfg.segment_length
    )
    steps = 2 * (cfg.burn_in_steps + cfg.record_steps)
    coarse_series, fine_series = [], []
    for seed in np.random.SeedSequence(cfg.seed).spawn(realizations):
        fine_inputs = generate_inputs(params, fine_cfg, n_steps=steps, rng=np.random.default_rng(seed))
        fine = integrate(params, steady, fine_cfg, selectors=[sel], inputs=fine_inputs)
        coarse = integrate(params, steady, cfg, selectors=[sel], inputs=coarsen_inputs(fine_inputs))
        fine_series.append(fine.settled(selector_name(sel)))
        coarse_series.append(coarse.settled(selector_name(sel)))
    fine_psd = welch_psd(np.stack(fine_series), fine_cfg)
    coarse_psd = welch_psd(np.stack(coarse_series), cfg)
    comparison = compare_spectra(coarse_psd, fine_psd, band)
    LOGGER.info("dt halving: max in-band change %.4f over %d realizations", comparison.max_deviation, realizations)
    return comparison
