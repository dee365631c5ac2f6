"""
measurement.py — Forward model, noise and quantization

The noiseless received block after CP removal is computed two independent
ways so each can check the other:

    tapwise:   Z = sum_l H[l] T J_l diag(d)
    factored:  Z = U_Nrx C F diag(U_Np^H b)

Noise is circular complex Gaussian with per-entry variance sigma2 (sigma2/2
on each real dimension), followed by either no quantization (q = inf) or a
one-bit ADC on each of the real and imaginary parts (q = 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from channel import AngleDelayChannel, WidebandChannel
from errors import DegenerateInputError, InvalidArgumentError, InvalidDimensionError
from kernels import circ_shift_columns
from phase import PhaseErrorVector, PhaseSpectrum
from training import EffectiveTraining, TrainingBlock


class Quantizer(enum.Enum):
    ONE_BIT = "1"
    FULL = "inf"

    @property
    def bits(self) -> float:
        return 1.0 if self is Quantizer.ONE_BIT else math.inf

    @classmethod
    def parse(cls, value: object) -> Quantizer:
        if isinstance(value, Quantizer):
            return value
        text = str(value).strip().lower()
        if text in ("1", "1.0", "one_bit", "onebit"):
            return cls.ONE_BIT
        if text in ("inf", "infinity", "full", "none"):
            return cls.FULL
        raise InvalidArgumentError("q", value, "quantizer must be 1 or inf")


@dataclass(frozen=True)
class NoiselessBlock:
    Z: np.ndarray


@dataclass(frozen=True)
class ReceivedBlock:
    Y: np.ndarray
    q: Quantizer
    sigma2: float

    @property
    def Nrx(self) -> int:
        return self.Y.shape[0]

    @property
    def Np(self) -> int:
        return self.Y.shape[1]

    @property
    def y(self) -> np.ndarray:
        """vec(Y), column-major."""
        return self.Y.reshape(-1, order="F")


# ---------------------------------------------------------------------------
# Noiseless forward models
# ---------------------------------------------------------------------------

def forward_factored(C: AngleDelayChannel, F: EffectiveTraining, b: PhaseSpectrum) -> NoiselessBlock:
    if C.C.shape[1] != F.F.shape[0]:
        raise InvalidDimensionError("C.columns vs F.rows", (C.C.shape[1], F.F.shape[0]))
    if F.Np != b.Np:
        raise InvalidDimensionError("F.columns vs len(b)", (F.Np, b.Np))
    W = np.fft.fft(C.C @ F.F, axis=0, norm="ortho")
    d = np.fft.ifft(b.b, norm="ortho")
    return NoiselessBlock(Z=W * d[None, :])


def forward_tapwise(h: WidebandChannel, T: TrainingBlock, d: PhaseErrorVector) -> NoiselessBlock:
    if h.Ntx != T.Ntx:
        raise InvalidDimensionError("H.Ntx vs T.Ntx", (h.Ntx, T.Ntx))
    if T.Np != d.Np:
        raise InvalidDimensionError("T.Np vs len(d)", (T.Np, d.Np))
    Z = np.zeros((h.Nrx, T.Np), dtype=complex)
    for ell in range(h.L):
        Z += h.taps[ell] @ circ_shift_columns(T.T, ell)
    return NoiselessBlock(Z=Z * d.d[None, :])


# ---------------------------------------------------------------------------
# Noise and quantization
# ---------------------------------------------------------------------------

def quantize(X: np.ndarray, q: Quantizer | str | float) -> np.ndarray:
    q = Quantizer.parse(q)
    X = np.asarray(X)
    if q is Quantizer.FULL:
        return X
    re = np.where(X.real >= 0, 1.0, -1.0)
    im = np.where(X.imag >= 0, 1.0, -1.0)
    return re + 1j * im


def snr_to_sigma2(T: TrainingBlock, snr_db: float) -> float:
    """sigma2 = ||T||_F^2 / (Np 10^(snr/10)); +inf dB gives 0."""
    energy = T.energy
    if energy <= 0.0:
        raise DegenerateInputError("zero training block")
    return energy / (T.Np * 10.0 ** (snr_db / 10.0))


def observe(Z: NoiselessBlock, sigma2: float, q: Quantizer | str | float,
            rng: np.random.Generator) -> ReceivedBlock:
    if sigma2 < 0:
        raise InvalidArgumentError("sigma2", sigma2, "noise variance must be >= 0")
    q = Quantizer.parse(q)
    shape = Z.Z.shape
    noise = math.sqrt(sigma2 / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ReceivedBlock(Y=quantize(Z.Z + noise, q), q=q, sigma2=sigma2)
