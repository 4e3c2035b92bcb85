"""Noise input basis and its correlation matrix.

Convention: f(w) = int f(t) exp(i w t) dt and
<n_i(w) n_j(w')> = 2 pi C_ij(w) delta(w + w').
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple, Union

import numpy as np

from exceptions import ValidationError
from model import NoiseSpec, SystemParams

LOGGER = logging.getLogger(__name__)

LOSS_PORT = "l"
Port = Union[int, str]


def optical_label(port: Port, k: int, dagger: bool = False) -> str:
    return f"a_in_{port}{k + 1}" + ("_dag" if dagger else "")


def mechanical_label(j: int, dagger: bool = False) -> str:
    return f"b_in_{j + 1}" + ("_dag" if dagger else "")


def amplitude_label(k: int) -> str:
    return f"eps_{k + 1}"


def phase_label(k: int) -> str:
    return f"phidot_{k + 1}"


@dataclass(frozen=True)
class NoiseBasis:
    """Ordered noise inputs. The index map is part of the public contract."""

    labels: Tuple[str, ...]
    index: Dict[str, int]
    partner: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    @property
    def include_loss_port(self) -> bool:
        return optical_label(LOSS_PORT, 0) in self.index

    def optical_pairs(self):
        """(annihilation, creation) index pairs of every vacuum optical input."""
        ports = (1, 2, LOSS_PORT) if self.include_loss_port else (1, 2)
        for port in ports:
            for k in range(2):
                yield self.index[optical_label(port, k)], self.index[optical_label(port, k, True)]

    def mechanical_pairs(self):
        for j in range(2):
            yield j, self.index[mechanical_label(j)], self.index[mechanical_label(j, True)]


@lru_cache(maxsize=2)
def noise_basis(include_loss_port: bool = False) -> NoiseBasis:
    labels = []
    for k in range(2):
        for port in (1, 2):
            labels += [optical_label(port, k), optical_label(port, k, True)]
    for j in range(2):
        labels += [mechanical_label(j), mechanical_label(j, True)]
    labels += [amplitude_label(k) for k in range(2)]
    labels += [phase_label(k) for k in range(2)]
    if include_loss_port:
        for k in range(2):
            labels += [optical_label(LOSS_PORT, k), optical_label(LOSS_PORT, k, True)]

    index = {label: i for i, label in enumerate(labels)}
    if len(index) != len(labels):
        raise ValidationError("noise basis labels must be unique")

    def partner_of(label: str) -> int:
        if label.endswith("_dag"):
            return index[label[: -len("_dag")]]
        if label + "_dag" in index:
            return index[label + "_dag"]
        return index[label]

    return NoiseBasis(
        labels=tuple(labels),
        index=index,
        partner=tuple(partner_of(label) for label in labels),
    )


def _lorentzian(strength: float, bandwidth: float, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if strength == 0:
        return np.zeros_like(omega)
    return strength * 2.0 * bandwidth**2 / (bandwidth**2 + omega**2)


def amplitude_noise_psd(spec: NoiseSpec, k: int, omega) -> np.ndarray:
    return _lorentzian(spec.gamma_eps_strength[k], spec.gamma_eps_bw[k], omega)


def phase_noise_psd(spec: NoiseSpec, k: int, omega) -> np.ndarray:
    return _lorentzian(spec.gamma_L_strength[k], spec.gamma_phi_bw[k], omega)


def ou_strength_from_injection(amplitude_sq: float, bandwidth_hz: float) -> float:
    """Strength Gamma whose flat level 2*Gamma equals amplitude_sq / bandwidth_hz."""
    if bandwidth_hz <= 0:
        raise ValidationError("measurement bandwidth must be positive")
    if amplitude_sq < 0:
        raise ValidationError("injected amplitude must be non-negative")
    return amplitude_sq / (2.0 * bandwidth_hz)


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    omega: np.ndarray
    values: np.ndarray
    basis: NoiseBasis
    symmetrized: bool = False

    def entry(self, row: str, column: str) -> np.ndarray:
        return self.values[:, self.basis.index[row], self.basis.index[column]]


def correlation_matrix(
    params: SystemParams, omega, symmetrized: bool = False
) -> CorrelationMatrix:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    basis = noise_basis(params.include_loss_port)
    values = np.zeros((omega.size, len(basis), len(basis)), dtype=complex)

    vacuum = (0.5, 0.5) if symmetrized else (1.0, 0.0)
    for a, a_dag in basis.optical_pairs():
        values[:, a, a_dag], values[:, a_dag, a] = vacuum
    for j, b, b_dag in basis.mechanical_pairs():
        n_th = params.mechanical[j].n_th
        if symmetrized:
            values[:, b, b_dag] = values[:, b_dag, b] = n_th + 0.5
        else:
            values[:, b, b_dag] = n_th + 1.0
            values[:, b_dag, b] = n_th
    for k in range(2):
        eps = basis.index[amplitude_label(k)]
        phi = basis.index[phase_label(k)]
        values[:, eps, eps] = amplitude_noise_psd(params.noise, k, omega)
        values[:, phi, phi] = phase_noise_psd(params.noise, k, omega)
    return CorrelationMatrix(omega=omega, values=values, basis=basis, symmetrized=symmetrized)
