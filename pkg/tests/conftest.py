from pathlib import Path

import numpy as np
import pytest

from config import load_run_config
from model import (
    TWO_PI,
    CouplingMatrix,
    MechanicalMode,
    NoiseSpec,
    OpticalMode,
    SystemParams,
    laser_angular_frequency,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
BUNDLED_CONFIGS = sorted(CONFIG_DIR.glob("*.yaml"))


def build_params(
    couplings_hz=((0.0, 0.13), (0.0, 0.39)),
    noise=None,
    mechanical_hz=((226764.581, 1.44), (231887.32, 8.8)),
    pump_power=67e-6,
    probe_power=3.8e-6,
    n_th=0.0,
    include_loss_port=False,
) -> SystemParams:
    omega_L = laser_angular_frequency(1.064e-6)
    kappa = TWO_PI * 119e3
    optical = (
        OpticalMode.from_total(kappa, omega_L, 0.0, probe_power),
        OpticalMode.from_total(kappa, omega_L, TWO_PI * 240e3, pump_power),
    )
    mechanical = tuple(
        MechanicalMode(omega_m=TWO_PI * f, gamma_m=TWO_PI * g, n_th=n_th) for f, g in mechanical_hz
    )
    return SystemParams(
        optical=optical,
        mechanical=mechanical,
        couplings=CouplingMatrix.from_array(TWO_PI * np.array(couplings_hz)),
        noise=noise or NoiseSpec(),
        include_loss_port=include_loss_port,
    )


@pytest.fixture
def make_params():
    return build_params


@pytest.fixture
def bench_params():
    return build_params()


@pytest.fixture
def config_dir():
    return CONFIG_DIR


@pytest.fixture
def amplitude_dips_config():
    return load_run_config(CONFIG_DIR / "amplitude_dips.yaml")


@pytest.fixture
def cancellation_config():
    return load_run_config(CONFIG_DIR / "cancellation.yaml")
