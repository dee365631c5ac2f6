"""
kernels.py — Shared numeric primitives

One unitary DFT convention for the whole toolkit:

    U_N[m, n] = exp(-j 2 pi m n / N) / sqrt(N)      (0-based m, n)

so U_N x is ``numpy.fft.fft(x, norm="ortho")`` and U_N^H x is
``numpy.fft.ifft(x, norm="ortho")``. Every module goes through these helpers
(or the equivalent numpy calls with ``norm="ortho"``); mixing conventions
flips the sign of the CFO bin mapping.

Also provides array-response (Vandermonde) vectors, the normalized sinc,
column circulant shifts and numerically stable standard-normal helpers
used by the one-bit likelihood.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from errors import InvalidArgumentError, InvalidDimensionError


# ---------------------------------------------------------------------------
# Unitary DFT
# ---------------------------------------------------------------------------

class DftDirection(enum.Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class DftConvention:
    """The unitary DFT of a fixed size N."""
    size: int

    def __post_init__(self) -> None:
        _check_size("N", self.size)

    @property
    def matrix(self) -> np.ndarray:
        return dft_matrix(self.size)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return dft(x, DftDirection.FORWARD)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return dft(x, DftDirection.INVERSE)


def _check_size(name: str, n: int) -> None:
    if int(n) != n or n < 1:
        raise InvalidDimensionError(name, n)


def dft_matrix(n: int) -> np.ndarray:
    """Explicit U_N. Only oracles and tests should need the dense matrix."""
    _check_size("N", n)
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def dft(x: np.ndarray, direction: DftDirection | str = DftDirection.FORWARD) -> np.ndarray:
    """U_N x (forward) or U_N^H x (inverse) for a length-N vector."""
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1:
        raise InvalidDimensionError("x.ndim", x.ndim)
    _check_size("N", x.size)
    direction = DftDirection(direction)
    if direction is DftDirection.FORWARD:
        return np.fft.fft(x, norm="ortho")
    return np.fft.ifft(x, norm="ortho")


# ---------------------------------------------------------------------------
# Array response and pulse shape
# ---------------------------------------------------------------------------

def vandermonde(n: int, delta: float) -> np.ndarray:
    """[1, e^{j delta}, ..., e^{j (n-1) delta}]."""
    _check_size("N", n)
    return np.exp(1j * delta * np.arange(n))


def sinc(x):
    """Normalized sinc, sin(pi x) / (pi x) with sinc(0) = 1."""
    return np.sinc(x)


# ---------------------------------------------------------------------------
# Circulant delays
# ---------------------------------------------------------------------------

def circ_shift_columns(x: np.ndarray, ell: int) -> np.ndarray:
    """X J_ell: output column c is column (c + ell) mod Np of X."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidDimensionError("X.ndim", x.ndim)
    n_cols = x.shape[1]
    if int(ell) != ell or not 0 <= ell < n_cols:
        raise InvalidArgumentError("ell", ell, f"must lie in [0, {n_cols})")
    return np.roll(x, -int(ell), axis=1)


# ---------------------------------------------------------------------------
# Standard normal helpers
# ---------------------------------------------------------------------------

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def std_normal_pdf(u):
    return np.exp(-0.5 * np.square(u) - _LOG_SQRT_2PI)


def std_normal_cdf(u):
    return special.ndtr(u)


def pdf_cdf_ratio(u):
    """phi(u) / Phi(u), evaluated in the log domain so it stays finite for
    very negative u where Phi underflows (ratio ~ -u there)."""
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * np.square(u) - _LOG_SQRT_2PI - special.log_ndtr(u))
