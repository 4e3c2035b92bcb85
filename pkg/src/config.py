"""Run configuration: YAML schema version 1.

Every physical quantity carries its unit in the key name. Unknown keys,
missing keys and wrong types are reported with the dotted path to the key.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from constant import Constant
from exceptions import ConfigError
from model import (
    DEFAULT_NOISE_BANDWIDTH,
    TWO_PI,
    CouplingMatrix,
    MechanicalMode,
    NoiseSpec,
    OpticalMode,
    SystemParams,
    high_temperature_occupancy,
    laser_angular_frequency,
)
from noise import ou_strength_from_injection

LOGGER = logging.getLogger(__name__)

_REQUIRED = object()
LASERS = ("probe", "pump")
FIT_MODELS = ("couplings", "lorentzians")


class _Section:
    """Mapping reader that remembers which keys were consumed."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.seen = set()

    def key_path(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str, default: Any = _REQUIRED) -> Any:
        self.seen.add(key)
        if key not in self.data or self.data[key] is None:
            if default is _REQUIRED:
                raise ConfigError(self.key_path(key), "missing required key")
            return default
        return self.data[key]

    def number(
        self,
        key: str,
        default: Any = _REQUIRED,
        positive: bool = False,
        non_negative: bool = False,
    ) -> Optional[float]:
        value = self.raw(key, default)
        if value is None:
            return None
        return _as_number(value, self.key_path(key), positive, non_negative)

    def integer(self, key: str, default: Any = _REQUIRED, minimum: Optional[int] = None) -> int:
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(self.key_path(key), f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise ConfigError(self.key_path(key), f"must be at least {minimum}")
        return value

    def flag(self, key: str, default: Any = _REQUIRED) -> bool:
        value = self.raw(key, default)
        if not isinstance(value, bool):
            raise ConfigError(self.key_path(key), f"expected true or false, got {value!r}")
        return value

    def choice(self, key: str, options: Sequence, default: Any = _REQUIRED):
        value = self.raw(key, default)
        if value not in options:
            raise ConfigError(self.key_path(key), f"expected one of {list(options)}, got {value!r}")
        return value

    def text(self, key: str, default: Any = _REQUIRED) -> Optional[str]:
        value = self.raw(key, default)
        if value is not None and not isinstance(value, str):
            raise ConfigError(self.key_path(key), f"expected a string, got {value!r}")
        return value

    def numbers(self, key: str, default: Any = _REQUIRED, length: Optional[int] = None) -> Optional[List[float]]:
        value = self.raw(key, default)
        if value is None:
            return None
        if not isinstance(value, list):
            raise ConfigError(self.key_path(key), "expected a list of numbers")
        if length is not None and len(value) != length:
            raise ConfigError(self.key_path(key), f"expected {length} entries, got {len(value)}")
        return [_as_number(item, f"{self.key_path(key)}[{i}]") for i, item in enumerate(value)]

    def section(self, key: str, required: bool = False) -> Optional["_Section"]:
        value = self.raw(key, _REQUIRED if required else None)
        if value is None:
            return None
        return _Section(value, self.key_path(key))

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(self.key_path(str(unknown[0])), "unknown key")


def _as_number(value: Any, path: str, positive: bool = False, non_negative: bool = False) -> float:
    # YAML 1.1 reads 1.0e7 (unsigned exponent) as a string
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value}")
    if non_negative and value < 0:
        raise ConfigError(path, f"must be non-negative, got {value}")
    return value


@dataclass
class GridSettings:
    fmin_hz: float
    fmax_hz: float
    points: int = 4001
    refine: bool = True


@dataclass
class DetectionSettings:
    factor: float = 1.0
    shot_floor: float = 0.0
    electronic_floor: float = 0.0


@dataclass
class SpectrumSettings:
    grid: GridSettings
    quadrature: str = Constant.QUADRATURE_X
    port: str = Constant.PORT_TRANSMISSION_2
    generic_port: bool = False
    lo_phase_rad: float = 0.0
    lo_phase_reference: str = Constant.LO_REFERENCE_LASER
    solver: str = Constant.SOLVER_FULL
    symmetrized: bool = False
    one_sided: bool = False
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    dip_halfwidth_hz: Optional[float] = None


@dataclass
class CancellationSettings:
    injected_sq: List[float]
    measurement_bw_hz: float
    noise_bandwidth_hz: Optional[float] = None
    laser: int = 1


@dataclass
class SyntheticBeatSettings:
    probe_power_w: float
    modulation_hz: float
    offset_hz: float
    sample_rate_hz: float
    duration_s: float
    detection_factor: float = 1.0
    modulation_ratios: List[float] = field(default_factory=lambda: [0.1])


@dataclass
class CalibrationSettings:
    pump_power_w: float
    wavelength_m: float
    measurement_bw_hz: float
    lockin_bw_hz: float = 19.0
    lockin_order: int = 4
    phase_modulation_rad_s: Optional[float] = None
    synthetic: Optional[SyntheticBeatSettings] = None
    readings_csv: Optional[Path] = None


@dataclass
class FitSettings:
    model: str = "couplings"
    measured_csv: Optional[Path] = None
    free: List[Tuple[int, int]] = field(default_factory=lambda: [(0, 1), (1, 1)])
    fit_scale: bool = True
    starts: int = 3
    seed: int = 0
    windows_hz: List[Tuple[float, float]] = field(default_factory=list)
    synthetic_noise: float = 0.01


@dataclass
class OracleSettings:
    dt_s: Optional[float] = None
    burn_in_s: Optional[float] = None
    duration_s: Optional[float] = None
    realizations: int = 128
    batch: int = 64
    seed: int = 0
    segment_length: int = 32768
    segments_per_realization: int = 4
    overlap: float = 0.0
    scheme: str = "exponential"
    band_hz: Optional[Tuple[float, float]] = None
    tolerance: float = 0.2
    record_series: bool = False
    decimate: int = 1


@dataclass
class RunConfig:
    path: Path
    schema_version: int
    params: SystemParams
    wavelength_m: float
    spectrum: Optional[SpectrumSettings] = None
    cancellation: Optional[CancellationSettings] = None
    calibration: Optional[CalibrationSettings] = None
    fit: Optional[FitSettings] = None
    oracle: Optional[OracleSettings] = None
    document: Dict[str, Any] = field(default_factory=dict)

    def require(self, name: str):
        block = getattr(self, name)
        if block is None:
            raise ConfigError(name, "section required for this command")
        return block


def _optical_mode(section: _Section, omega_L: float) -> OpticalMode:
    kappa = TWO_PI * section.number("kappa_hz", positive=True)
    overrides = {
        name: None if value is None else TWO_PI * value
        for name, value in (
            ("kappa1", section.number("kappa1_hz", None, non_negative=True)),
            ("kappa2", section.number("kappa2_hz", None, non_negative=True)),
            ("kappa_l", section.number("kappa_loss_hz", None, non_negative=True)),
        )
    }
    power = section.number("power_w", non_negative=True)
    detuning = TWO_PI * section.number("detuning_hz")
    section.finish()
    try:
        return OpticalMode.from_total(kappa, omega_L, detuning, power, **overrides)
    except ValueError as exc:
        raise ConfigError(section.path, str(exc)) from exc


def _mechanical_mode(section: _Section, temperature: Optional[float]) -> MechanicalMode:
    omega_m = TWO_PI * section.number("frequency_hz", positive=True)
    gamma_m = TWO_PI * section.number("damping_hz", positive=True)
    mass = section.number("mass_kg", None, positive=True)
    own_temperature = section.number("temperature_k", None, non_negative=True)
    n_th = section.number("n_th", None, non_negative=True)
    section.finish()
    if n_th is not None and own_temperature is not None:
        raise ConfigError(section.path, "give either n_th or temperature_k, not both")
    bath = own_temperature if own_temperature is not None else temperature
    if n_th is None:
        n_th = 0.0 if bath is None else high_temperature_occupancy(omega_m, bath)
    try:
        return MechanicalMode(
            omega_m=omega_m, gamma_m=gamma_m, n_th=n_th, temperature=bath or 0.0, mass_eff=mass
        )
    except ValueError as exc:
        raise ConfigError(section.path, str(exc)) from exc


def _laser_noise(section: Optional[_Section]) -> Tuple[float, float, float, float]:
    """(Gamma_eps, gamma_eps, Gamma_L, gamma_phi) of one laser."""
    amplitude = (0.0, DEFAULT_NOISE_BANDWIDTH)
    phase = (0.0, DEFAULT_NOISE_BANDWIDTH)
    if section is None:
        return amplitude + phase
    block = section.section("amplitude")
    if block is not None:
        amplitude = _noise_strength(block, "strength", "injected_sq")
    block = section.section("phase")
    if block is not None:
        phase = _noise_strength(block, "strength_rad_s", "modulation_rad_s", squared=True)
    section.finish()
    return amplitude + phase


def _noise_strength(block: _Section, direct: str, injected: str, squared: bool = False) -> Tuple[float, float]:
    bandwidth = block.number("bandwidth_hz", None, positive=True)
    bandwidth = DEFAULT_NOISE_BANDWIDTH if bandwidth is None else TWO_PI * bandwidth
    if block.has(direct) == block.has(injected):
        raise ConfigError(block.path, f"give exactly one of {direct} or {injected}")
    if block.has(direct):
        strength = block.number(direct, non_negative=True)
    else:
        amount = block.number(injected, non_negative=True)
        measurement_bw = block.number("measurement_bw_hz", positive=True)
        strength = ou_strength_from_injection(amount**2 if squared else amount, measurement_bw)
    block.finish()
    return strength, bandwidth


def _system(section: _Section, lo_phase: float) -> Tuple[SystemParams, float]:
    wavelength = section.number("wavelength_m", positive=True)
    temperature = section.number("temperature_k", None, non_negative=True)
    include_loss_port = section.flag("include_loss_port", False)
    omega_L = laser_angular_frequency(wavelength)

    optical_section = section.section("optical", required=True)
    optical = tuple(_optical_mode(optical_section.section(name, required=True), omega_L) for name in LASERS)
    optical_section.finish()

    mechanical_raw = section.raw("mechanical")
    if not isinstance(mechanical_raw, list) or len(mechanical_raw) != 2:
        raise ConfigError(section.key_path("mechanical"), "expected a list of exactly 2 mechanical modes")
    mechanical = tuple(
        _mechanical_mode(_Section(entry, f"{section.key_path('mechanical')}[{j}]"), temperature)
        for j, entry in enumerate(mechanical_raw)
    )

    coupling_raw = section.raw("coupling_hz")
    if not isinstance(coupling_raw, list) or len(coupling_raw) != 2:
        raise ConfigError(section.key_path("coupling_hz"), "expected 2 rows (one per membrane)")
    rows = [
        [_as_number(value, f"{section.key_path('coupling_hz')}[{j}][{k}]") for k, value in enumerate(row)]
        if isinstance(row, list) and len(row) == 2
        else _bad_row(section.key_path("coupling_hz"), j)
        for j, row in enumerate(coupling_raw)
    ]
    couplings = CouplingMatrix.from_array(TWO_PI * np.array(rows))

    noise_section = section.section("noise")
    per_laser = [_laser_noise(None), _laser_noise(None)]
    if noise_section is not None:
        per_laser = [_laser_noise(noise_section.section(name)) for name in LASERS]
        noise_section.finish()
    section.finish()
    try:
        noise = NoiseSpec(
            gamma_eps_strength=tuple(entry[0] for entry in per_laser),
            gamma_eps_bw=tuple(entry[1] for entry in per_laser),
            gamma_L_strength=tuple(entry[2] for entry in per_laser),
            gamma_phi_bw=tuple(entry[3] for entry in per_laser),
        )
    except ValueError as exc:
        raise ConfigError(section.key_path("noise"), str(exc)) from exc
    params = SystemParams(
        optical=optical,
        mechanical=mechanical,
        couplings=couplings,
        noise=noise,
        lo_phase=lo_phase,
        include_loss_port=include_loss_port,
    )
    return params, wavelength


def _bad_row(path: str, j: int):
    raise ConfigError(f"{path}[{j}]", "expected 2 entries (one per optical mode)")


def _spectrum(section: _Section) -> SpectrumSettings:
    grid_section = section.section("grid", required=True)
    grid = GridSettings(
        fmin_hz=grid_section.number("fmin_hz", non_negative=True),
        fmax_hz=grid_section.number("fmax_hz", positive=True),
        points=grid_section.integer("points", 4001, minimum=2),
        refine=grid_section.flag("refine", True),
    )
    grid_section.finish()
    if not grid.fmax_hz > grid.fmin_hz:
        raise ConfigError(grid_section.key_path("fmax_hz"), "must exceed fmin_hz")

    detection = DetectionSettings()
    detection_section = section.section("detection")
    if detection_section is not None:
        detection = DetectionSettings(
            factor=detection_section.number("factor", 1.0, positive=True),
            shot_floor=detection_section.number("shot_floor", 0.0, non_negative=True),
            electronic_floor=detection_section.number("electronic_floor", 0.0, non_negative=True),
        )
        detection_section.finish()

    dip_halfwidth = None
    dips_section = section.section("dips")
    if dips_section is not None:
        dip_halfwidth = dips_section.number("halfwidth_hz", positive=True)
        dips_section.finish()

    settings = SpectrumSettings(
        grid=grid,
        quadrature=section.choice("quadrature", Constant.QUADRATURES, Constant.QUADRATURE_X),
        port=section.choice("port", Constant.NATIVE_PORTS + Constant.GENERIC_PORTS, Constant.PORT_TRANSMISSION_2),
        generic_port=section.flag("generic_port", False),
        lo_phase_rad=section.number("lo_phase_rad", 0.0),
        lo_phase_reference=section.choice(
            "lo_phase_reference",
            (Constant.LO_REFERENCE_LASER, Constant.LO_REFERENCE_FIELD),
            Constant.LO_REFERENCE_LASER,
        ),
        solver=section.choice("solver", Constant.SOLVERS, Constant.SOLVER_FULL),
        symmetrized=section.flag("symmetrized", False),
        one_sided=section.flag("one_sided", False),
        detection=detection,
        dip_halfwidth_hz=dip_halfwidth,
    )
    section.finish()
    if settings.port in Constant.GENERIC_PORTS and not settings.generic_port:
        raise ConfigError(section.key_path("port"), f"port {settings.port} needs generic_port: true")
    return settings


def _cancellation(section: _Section) -> CancellationSettings:
    injected = section.numbers("injected_sq")
    if not injected or min(injected) < 0:
        raise ConfigError(section.key_path("injected_sq"), "expected a non-empty list of non-negative values")
    settings = CancellationSettings(
        injected_sq=injected,
        measurement_bw_hz=section.number("measurement_bw_hz", positive=True),
        noise_bandwidth_hz=section.number("noise_bandwidth_hz", None, positive=True),
        laser=LASERS.index(section.choice("laser", LASERS, "pump")),
    )
    section.finish()
    return settings


def _calibration(section: _Section, base: Path) -> CalibrationSettings:
    synthetic = None
    synthetic_section = section.section("synthetic")
    if synthetic_section is not None:
        ratios = synthetic_section.numbers("modulation_ratios", [0.1])
        if not ratios or min(ratios) <= 0:
            raise ConfigError(synthetic_section.key_path("modulation_ratios"), "expected positive ratios")
        synthetic = SyntheticBeatSettings(
            probe_power_w=synthetic_section.number("probe_power_w", positive=True),
            modulation_hz=synthetic_section.number("modulation_hz", positive=True),
            offset_hz=synthetic_section.number("offset_hz", positive=True),
            sample_rate_hz=synthetic_section.number("sample_rate_hz", positive=True),
            duration_s=synthetic_section.number("duration_s", positive=True),
            detection_factor=synthetic_section.number("detection_factor", 1.0, positive=True),
            modulation_ratios=ratios,
        )
        synthetic_section.finish()
    readings = section.text("readings_csv", None)
    settings = CalibrationSettings(
        pump_power_w=section.number("pump_power_w", positive=True),
        wavelength_m=section.number("wavelength_m", positive=True),
        measurement_bw_hz=section.number("measurement_bw_hz", positive=True),
        lockin_bw_hz=section.number("lockin_bw_hz", 19.0, positive=True),
        lockin_order=section.integer("lockin_order", 4, minimum=1),
        phase_modulation_rad_s=section.number("phase_modulation_rad_s", None, non_negative=True),
        synthetic=synthetic,
        readings_csv=None if readings is None else (base / readings),
    )
    section.finish()
    if settings.synthetic is not None and settings.readings_csv is not None:
        raise ConfigError(section.path, "give exactly one of synthetic or readings_csv")
    if settings.synthetic is None and settings.readings_csv is None and settings.phase_modulation_rad_s is None:
        raise ConfigError(section.path, "give one of synthetic, readings_csv or phase_modulation_rad_s")
    return settings


def _pairs(section: _Section, key: str, default) -> List[Tuple[float, float]]:
    value = section.raw(key, default)
    if not isinstance(value, list):
        raise ConfigError(section.key_path(key), "expected a list of pairs")
    pairs = []
    for i, pair in enumerate(value):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"{section.key_path(key)}[{i}]", "expected a pair")
        pairs.append(tuple(_as_number(item, f"{section.key_path(key)}[{i}]") for item in pair))
    return pairs


def _fit(section: _Section, base: Path) -> FitSettings:
    measured = section.text("measured_csv", None)
    free = []
    for i, (j, k) in enumerate(_pairs(section, "free", [[1, 2], [2, 2]])):
        if j not in (1, 2) or k not in (1, 2):
            raise ConfigError(f"{section.key_path('free')}[{i}]", "membrane and mode indices are 1 or 2")
        free.append((int(j) - 1, int(k) - 1))
    settings = FitSettings(
        model=section.choice("model", FIT_MODELS, "couplings"),
        measured_csv=None if measured is None else (base / measured),
        free=free,
        fit_scale=section.flag("fit_scale", True),
        starts=section.integer("starts", 3, minimum=1),
        seed=section.integer("seed", 0, minimum=0),
        windows_hz=_pairs(section, "windows_hz", []),
        synthetic_noise=section.number("synthetic_noise", 0.01, non_negative=True),
    )
    section.finish()
    if settings.model == "lorentzians" and not settings.windows_hz:
        raise ConfigError(section.key_path("windows_hz"), "Lorentzian fits need at least one window")
    return settings


def _oracle(section: _Section) -> OracleSettings:
    band = section.numbers("band_hz", None, length=2)
    if band is not None and not band[1] > band[0]:
        raise ConfigError(section.key_path("band_hz"), "upper edge must exceed lower edge")
    settings = OracleSettings(
        dt_s=section.number("dt_s", None, positive=True),
        burn_in_s=section.number("burn_in_s", None, non_negative=True),
        duration_s=section.number("duration_s", None, positive=True),
        realizations=section.integer("realizations", 128, minimum=1),
        batch=section.integer("batch", 64, minimum=1),
        seed=section.integer("seed", 0, minimum=0),
        segment_length=section.integer("segment_length", 32768, minimum=2),
        segments_per_realization=section.integer("segments_per_realization", 4, minimum=1),
        overlap=section.number("overlap", 0.0, non_negative=True),
        scheme=section.choice("scheme", ("exponential", "euler"), "exponential"),
        band_hz=None if band is None else (band[0], band[1]),
        tolerance=section.number("tolerance", 0.2, positive=True),
        record_series=section.flag("record_series", False),
        decimate=section.integer("decimate", 1, minimum=1),
    )
    section.finish()
    if settings.overlap >= 1.0:
        raise ConfigError(section.key_path("overlap"), "must be below 1")
    return settings


def parse_run_config(document: Any, path: Path) -> RunConfig:
    root = _Section(document or {}, "")
    version = root.integer("schema_version")
    if version != Constant.SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}, expected {Constant.SCHEMA_VERSION}")
    base = path.parent
    spectrum_section = root.section("spectrum")
    spectrum = None if spectrum_section is None else _spectrum(spectrum_section)
    lo_phase = 0.0 if spectrum is None else spectrum.lo_phase_rad
    params, wavelength = _system(root.section("system", required=True), lo_phase)

    blocks = {}
    for name, parser in (
        ("cancellation", _cancellation),
        ("calibration", lambda s: _calibration(s, base)),
        ("fit", lambda s: _fit(s, base)),
        ("oracle", _oracle),
    ):
        section = root.section(name)
        blocks[name] = None if section is None else parser(section)
    root.finish()
    return RunConfig(
        path=path,
        schema_version=version,
        params=params,
        wavelength_m=wavelength,
        spectrum=spectrum,
        document=document,
        **blocks,
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    config = parse_run_config(document, path)
    LOGGER.debug("Loaded %s (params %s)", path, config.params.fingerprint()[:12])
    return config
