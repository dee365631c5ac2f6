"""
training.py — Training blocks and the effective training operator

A training block T (Ntx x Np) is sent after a cyclic prefix, so after CP
removal tap l of the channel sees the circularly delayed block T J_l. The
solver only needs the stacked operator

    F = [U_Ntx^H T J_0; U_Ntx^H T J_1; ...; U_Ntx^H T J_{L-1}]   ((Ntx*L) x Np)

Three block families are supported: IID QPSK, IID Gaussian and rows built
from circular shifts of one Zadoff-Chu sequence. The last one is circulant
when Np == Ntx and is the case where an on-grid CFO becomes unidentifiable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from errors import InvalidArgumentError, InvalidDimensionError, NonCirculantTrainingError
from kernels import circ_shift_columns


class TrainingKind(enum.Enum):
    IID_QPSK = "iid_qpsk"
    IID_GAUSSIAN = "iid_gaussian"
    SHIFTED_ZC = "shifted_zc"


@dataclass(frozen=True)
class TrainingBlock:
    T: np.ndarray
    power: float = 1.0

    @property
    def Ntx(self) -> int:
        return self.T.shape[0]

    @property
    def Np(self) -> int:
        return self.T.shape[1]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.T) ** 2))

    @property
    def mean_column_energy(self) -> float:
        return self.energy / self.Np


@dataclass(frozen=True)
class EffectiveTraining:
    F: np.ndarray
    Ntx: int
    L: int

    @property
    def Np(self) -> int:
        return self.F.shape[1]

    def block(self, ell: int) -> np.ndarray:
        return self.F[ell * self.Ntx:(ell + 1) * self.Ntx]


# ---------------------------------------------------------------------------
# Zadoff-Chu
# ---------------------------------------------------------------------------

def zc_sequence(Np: int, root: int = 1) -> np.ndarray:
    if Np < 1:
        raise InvalidDimensionError("Np", Np)
    if math.gcd(root, Np) != 1:
        raise InvalidArgumentError("root", root, f"must be coprime to Np={Np}")
    n = np.arange(Np)
    if Np % 2:
        return np.exp(-1j * np.pi * root * n * (n + 1) / Np)
    return np.exp(-1j * np.pi * root * n * n / Np)


def circular_autocorrelation(x: np.ndarray) -> np.ndarray:
    """r[k] = sum_n x[n + k] conj(x[n]) (indices mod N)."""
    spectrum = np.fft.fft(x)
    return np.fft.ifft(np.abs(spectrum) ** 2)


# ---------------------------------------------------------------------------
# Block generation
# ---------------------------------------------------------------------------

def gen_training(kind: TrainingKind | str, Ntx: int, Np: int, P: float,
                 rng: np.random.Generator, root: int = 1) -> TrainingBlock:
    kind = TrainingKind(kind)
    if Ntx < 1:
        raise InvalidDimensionError("Ntx", Ntx)
    if Np < 1:
        raise InvalidDimensionError("Np", Np)
    amp = math.sqrt(P)

    if kind is TrainingKind.IID_QPSK:
        re = rng.choice([-1.0, 1.0], size=(Ntx, Np))
        im = rng.choice([-1.0, 1.0], size=(Ntx, Np))
        T = amp * (re + 1j * im) / math.sqrt(2.0)
    elif kind is TrainingKind.IID_GAUSSIAN:
        T = amp * (rng.standard_normal((Ntx, Np)) + 1j * rng.standard_normal((Ntx, Np))) / math.sqrt(2.0)
    else:
        if Ntx > Np:
            raise InvalidArgumentError("Ntx", Ntx, f"shifted ZC needs Ntx <= Np={Np}")
        base = zc_sequence(Np, root)
        spacing = Np // Ntx
        T = amp * np.stack([np.roll(base, i * spacing) for i in range(Ntx)])
    return TrainingBlock(T=T, power=P)


def assemble_F(T: TrainingBlock, L: int) -> EffectiveTraining:
    if L < 1:
        raise InvalidDimensionError("L", L)
    angle = np.fft.ifft(T.T, axis=0, norm="ortho")
    F = np.concatenate([circ_shift_columns(angle, ell) for ell in range(L)], axis=0)
    return EffectiveTraining(F=F, Ntx=T.Ntx, L=L)


# ---------------------------------------------------------------------------
# Circulant structure
# ---------------------------------------------------------------------------

def circulant_residual(T: np.ndarray) -> float:
    """Relative distance of T from the circulant matrix built on its first row."""
    T = np.asarray(T)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        return math.inf
    reference = np.stack([np.roll(T[0], i) for i in range(T.shape[0])])
    return float(np.linalg.norm(T - reference) / max(np.linalg.norm(T), 1e-300))


def is_circulant(T: np.ndarray, tol: float = 1e-10) -> bool:
    return circulant_residual(T) <= tol


def circulant_eigenvalues(T: np.ndarray) -> np.ndarray:
    """diag(U^H T U) for circulant T (rows shifted right by one each)."""
    residual = circulant_residual(T)
    if residual > 1e-10:
        raise NonCirculantTrainingError(residual)
    return np.fft.fft(np.asarray(T)[0])
