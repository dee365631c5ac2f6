"""
phase.py — CFO and Wiener phase-noise process

The phase error seen by sample n = 1..Np of a training block is

    d_n = exp(j (eps * n + phi_n)),   phi_0 = 0,  phi_n = phi_{n-1} + w_n

with w_n ~ N(0, beta^2). TX and RX phase noise are folded into one process
(beta^2 = beta_tx^2 + beta_rx^2). The solver works on the spectrum
b = U_Np d, which is compressible when eps is small compared to the band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import AliasingError, InvalidArgumentError, InvalidDimensionError


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseParams:
    epsilon: float   # digital CFO, radians per sample
    beta: float      # Wiener increment std-dev, radians
    Np: int

    def __post_init__(self) -> None:
        if abs(self.epsilon) >= math.pi:
            raise AliasingError(self.epsilon)
        if self.beta < 0:
            raise InvalidArgumentError("beta", self.beta, "must be >= 0")
        if int(self.Np) != self.Np or self.Np < 1:
            raise InvalidDimensionError("Np", self.Np)

    @property
    def cfo_bins(self) -> float:
        """CFO expressed in DFT bins of the training block."""
        return self.epsilon * self.Np / (2.0 * math.pi)

    @classmethod
    def from_bins(cls, bins: float, Np: int, beta: float = 0.0) -> PhaseParams:
        return cls(epsilon=2.0 * math.pi * bins / Np, beta=beta, Np=Np)


@dataclass(frozen=True)
class PhaseErrorVector:
    d: np.ndarray

    @property
    def Np(self) -> int:
        return self.d.size


@dataclass(frozen=True)
class PhaseSpectrum:
    b: np.ndarray

    @property
    def Np(self) -> int:
        return self.b.size


# ---------------------------------------------------------------------------
# Generation and transforms
# ---------------------------------------------------------------------------

def gen_phase_errors(p: PhaseParams, rng: np.random.Generator) -> PhaseErrorVector:
    n = np.arange(1, p.Np + 1)
    if p.beta > 0:
        walk = np.cumsum(rng.normal(0.0, p.beta, p.Np))
    else:
        walk = np.zeros(p.Np)
    return PhaseErrorVector(d=np.exp(1j * (p.epsilon * n + walk)))


def to_spectrum(d: PhaseErrorVector) -> PhaseSpectrum:
    return PhaseSpectrum(b=np.fft.fft(d.d, norm="ortho"))


def from_spectrum(b: PhaseSpectrum) -> PhaseErrorVector:
    return PhaseErrorVector(d=np.fft.ifft(b.b, norm="ortho"))


def ppm_to_digital(ppm: float, f1: float, T: float) -> float:
    """eps = 2 pi (ppm * 1e-6 * f1) T; raises AliasingError when |eps| >= pi."""
    epsilon = 2.0 * math.pi * (ppm * 1e-6 * f1) * T
    if abs(epsilon) >= math.pi:
        raise AliasingError(epsilon)
    return epsilon


def top_bin_energy_fraction(b: PhaseSpectrum, k: int = 2) -> float:
    """Share of ||b||^2 held by the k largest bins."""
    power = np.sort(np.abs(b.b) ** 2)[::-1]
    return float(power[:k].sum() / power.sum())
