"""
estimators.py — Post-processing of the solver output

Turns the angle-delay estimate c_hat back into antenna-domain taps and
reduces the phase-spectrum estimate b_hat to one scalar CFO.

The CFO is a single-tone frequency estimate on the time samples
m = U_Np^H b_hat. A lag-1 autocorrelation gives the coarse value, then a
two-state extended Kalman filter (phase, frequency) tracks through the
Wiener phase noise sample by sample. Samples are amplitude-normalized so
the bilinear scale ambiguity of b_hat does not reach the filter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from channel import AngleDelayChannel, WidebandChannel, from_angle_delay
from errors import EstimationFailedError, InvalidDimensionError

logger = logging.getLogger(__name__)


def wrap_angle(x: float) -> float:
    """Wrap to (-pi, pi]."""
    y = math.remainder(x, 2.0 * math.pi)
    return math.pi if y <= -math.pi else y


# ---------------------------------------------------------------------------
# Channel
# ---------------------------------------------------------------------------

def reconstruct_taps(c_hat: np.ndarray | AngleDelayChannel, Nrx: int | None = None,
                     L: int | None = None, T: float = 10e-9) -> WidebandChannel:
    """H_hat[l] = U_Nrx C_hat_l U_Ntx^H from vec(C_hat) or an AngleDelayChannel."""
    if isinstance(c_hat, AngleDelayChannel):
        return from_angle_delay(c_hat, T)
    if Nrx is None or L is None:
        raise InvalidDimensionError("(Nrx, L)", (Nrx, L))
    c_hat = np.asarray(c_hat)
    if c_hat.ndim != 1 or c_hat.size % (Nrx * L):
        raise InvalidDimensionError("len(c_hat)", c_hat.size)
    return from_angle_delay(AngleDelayChannel.from_vec(c_hat, Nrx, L), T)


# ---------------------------------------------------------------------------
# Extended Kalman filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EkfState:
    theta: float
    eps: float
    covariance: np.ndarray
    process_noise: tuple[float, float]
    measurement_noise: float


class ExtendedKalmanFilter:
    """Phase/frequency tracker for a unit-modulus tone.

    State x = [theta, eps]; theta_{n+1} = theta_n + eps + w, w ~ N(0, beta^2);
    eps drifts with a small variance. Measurement [cos theta, sin theta] + noise.
    """

    def __init__(self, theta0: float, eps0: float, P0: np.ndarray,
                 beta2: float, drift_var: float, meas_var: float) -> None:
        self.x = np.array([theta0, eps0], dtype=float)
        self.P = np.array(P0, dtype=float)
        self.Q = np.diag([beta2, drift_var])
        self.R = meas_var * np.eye(2)
        self._F = np.array([[1.0, 1.0], [0.0, 1.0]])

    def predict(self) -> None:
        self.x = self._F @ self.x
        self.P = self._F @ self.P @ self._F.T + self.Q

    def update(self, z: np.ndarray) -> None:
        theta = self.x[0]
        predicted = np.array([math.cos(theta), math.sin(theta)])
        H = np.array([[-math.sin(theta), 0.0], [math.cos(theta), 0.0]])
        S = H @ self.P @ H.T + self.R
        K = self.P @ H.T @ np.linalg.inv(S)
        self.x = self.x + K @ (z - predicted)
        self.x[0] = wrap_angle(self.x[0])
        # Joseph form keeps P symmetric positive-definite
        I_KH = np.eye(2) - K @ H
        self.P = I_KH @ self.P @ I_KH.T + K @ self.R @ K.T

    @property
    def state(self) -> EkfState:
        return EkfState(
            theta=float(self.x[0]),
            eps=float(self.x[1]),
            covariance=self.P.copy(),
            process_noise=(float(self.Q[0, 0]), float(self.Q[1, 1])),
            measurement_noise=float(self.R[0, 0]),
        )


# ---------------------------------------------------------------------------
# CFO
# ---------------------------------------------------------------------------

DRIFT_VARIANCE = 1e-10
MEAS_VARIANCE_FLOOR = 1e-6


def coarse_cfo(samples: np.ndarray) -> float:
    """Lag-1 autocorrelation phase, or the dominant DFT bin when it is weak."""
    total = float(np.sum(np.abs(samples) ** 2))
    acorr = complex(np.sum(samples[1:] * samples[:-1].conj()))
    if abs(acorr) >= 0.1 * total:
        return float(np.angle(acorr))
    n = samples.size
    k = int(np.argmax(np.abs(np.fft.fft(samples))))
    logger.warning("weak lag-1 autocorrelation, using dominant bin %d", k)
    return wrap_angle(2.0 * math.pi * k / n)


def cfo_estimate(b_hat: np.ndarray, beta: float, sigma2_eff: float) -> float:
    """Digital CFO (rad/sample, wrapped to (-pi, pi]) from a phase-spectrum estimate."""
    b_hat = np.asarray(b_hat, dtype=complex)
    samples = np.fft.ifft(b_hat, norm="ortho")
    magnitude = np.abs(samples)
    power = float(np.mean(magnitude ** 2))
    if not np.isfinite(power) or power <= 1e-300:
        raise EstimationFailedError("phase samples are all (near) zero")

    eps0 = coarse_cfo(samples)
    floor = 1e-6 * math.sqrt(power)
    unit = samples / np.maximum(magnitude, floor)
    meas_var = max(sigma2_eff / (2.0 * power), MEAS_VARIANCE_FLOOR)
    n = samples.size

    ekf = ExtendedKalmanFilter(
        theta0=float(np.angle(samples[0])),
        eps0=eps0,
        P0=np.diag([meas_var, (math.pi / n) ** 2]),
        beta2=max(beta * beta, 1e-12),
        drift_var=DRIFT_VARIANCE,
        meas_var=meas_var,
    )
    for idx in range(1, n):
        ekf.predict()
        if magnitude[idx] < floor:
            continue
        ekf.update(np.array([unit[idx].real, unit[idx].imag]))
    return wrap_angle(ekf.state.eps)
