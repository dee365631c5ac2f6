"""
pbigamp.py — Parametric bilinear GAMP for joint CFO / channel estimation

Estimates the phase spectrum b (length Np) and the angle-delay channel
c = vec(C) (length Nrx*Ntx*L) from

    y = Q(z + v),   z_m = sum_{i,k} b_i G[m,i] A[m,k] c_k,
    G = U_Np^H kron 1_Nrx,   A = F^T kron U_Nrx,

with Bernoulli-Gaussian priors on both unknowns. The tensor is never built:
every sum over it collapses to products with the Nrx x Np matrix

    W = U_Nrx C F        (computed as an FFT down the columns of C F)

the time-domain phase d = U_Np^H b and F_hat = F diag(d), because
|G[m,i]| = 1/sqrt(Np) and |A[m,k]| only depends on (column of k, sample of m).
Each iteration therefore costs O(Nrx Ntx L Np).

Vector layout is column-major throughout: entry m = n*Nrx + r of a length
Nrx*Np vector is (receive antenna r, sample n), entry k = col*Nrx + row of c
is C[row, col].

The hyperparameters (activity probabilities and active variances) are
refined by EM between warm-started GAMP passes; the noise variance stays
fixed at the value implied by the configured SNR, floored under full
resolution at a fraction of the received power.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from errors import InvalidArgumentError, InvalidDimensionError, SolverDivergenceError
from kernels import pdf_cdf_ratio
from measurement import Quantizer, ReceivedBlock
from training import EffectiveTraining

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hyperparams:
    """Bernoulli-Gaussian prior parameters and the noise level.

    lambda_* is the probability that an entry is exactly zero.
    """
    lambda_b: float
    lambda_c: float
    sigma_b2: float
    sigma_c2: float
    sigma2: float

    def __post_init__(self) -> None:
        for name in ("lambda_b", "lambda_c"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise InvalidArgumentError(name, value, "must lie in [0, 1)")
        for name in ("sigma_b2", "sigma_c2", "sigma2"):
            value = getattr(self, name)
            if not value > 0.0:
                raise InvalidArgumentError(name, value, "must be > 0")

    @classmethod
    def default_for(cls, Np: int, L: int, sigma2: float,
                    lambda_b: float = 0.99, lambda_c: float = 0.95,
                    sigma_b2: float | None = None,
                    sigma_c2: float | None = None) -> Hyperparams:
        """Priors matched to E||b||^2 = Np and E||C||_F^2 = Nrx*Ntx."""
        if sigma_b2 is None:
            sigma_b2 = 1.0 / (1.0 - lambda_b)
        if sigma_c2 is None:
            sigma_c2 = 1.0 / ((1.0 - lambda_c) * L)
        return cls(lambda_b=lambda_b, lambda_c=lambda_c,
                   sigma_b2=sigma_b2, sigma_c2=sigma_c2,
                   sigma2=max(sigma2, VARIANCE_FLOOR))

    def relative_change(self, other: Hyperparams) -> float:
        pairs = [
            (self.lambda_b, other.lambda_b),
            (self.lambda_c, other.lambda_c),
            (self.sigma_b2, other.sigma_b2),
            (self.sigma_c2, other.sigma_c2),
        ]
        return max(abs(a - b) / max(abs(a), 1e-12) for a, b in pairs)


@dataclass(frozen=True)
class GampConfig:
    """Iteration control.

    relative_noise_floor bounds the assumed noise variance from below by a
    fraction of the mean received power under full resolution (an assumed
    SNR ceiling); noiseless data is otherwise fitted exactly and the
    iteration grows without bound. blowup_factor caps the energy of b, c and
    the plug-in z relative to their prior/data references; crossing it
    restarts like a non-finite state. A finished attempt whose plug-in z
    agrees with fewer than min_sign_agreement of the one-bit signs (or, at
    full resolution, explains less than half of the signal energy) is
    treated as a degenerate fixed point and restarted as well.
    """
    t_max: int = 200
    tau_stop: float = 1e-7
    damping: float = 0.3
    em_outer_iters: int = 10
    restarts: int = 3
    init_seed: int = 0
    em_tol: float = 1e-4
    variance_floor: float = VARIANCE_FLOOR
    relative_noise_floor: float = 1e-4
    blowup_factor: float = 1e6
    min_sign_agreement: float = 0.55

    def __post_init__(self) -> None:
        if self.t_max < 1:
            raise InvalidArgumentError("t_max", self.t_max, "must be >= 1")
        if not self.tau_stop > 0:
            raise InvalidArgumentError("tau_stop", self.tau_stop, "must be > 0")
        if not 0.0 < self.damping <= 1.0:
            raise InvalidArgumentError("damping", self.damping, "must lie in (0, 1]")
        if self.em_outer_iters < 1:
            raise InvalidArgumentError("em_outer_iters", self.em_outer_iters, "must be >= 1")
        if self.restarts < 0:
            raise InvalidArgumentError("restarts", self.restarts, "must be >= 0")
        if not 0.0 <= self.relative_noise_floor < 1.0:
            raise InvalidArgumentError("relative_noise_floor", self.relative_noise_floor,
                                       "must lie in [0, 1)")
        if not self.blowup_factor > 1.0:
            raise InvalidArgumentError("blowup_factor", self.blowup_factor, "must be > 1")
        if not 0.5 <= self.min_sign_agreement < 1.0:
            raise InvalidArgumentError("min_sign_agreement", self.min_sign_agreement,
                                       "must lie in [0.5, 1)")

    def damping_for(self, attempt: int) -> float:
        """Each restart halves the damping factor."""
        return self.damping / 2 ** attempt


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass
class GampState:
    """Every per-iteration quantity of one PBiGAMP run.

    b_hat/nu_b/c_hat/nu_c hold the estimates entering iteration t; the
    remaining vectors were produced by iteration t - 1 (zeros before the
    first step).
    """
    Nrx: int
    b_hat: np.ndarray
    nu_b: np.ndarray
    c_hat: np.ndarray
    nu_c: np.ndarray
    p_hat: np.ndarray
    nu_p: np.ndarray
    nu_p_bar: np.ndarray
    z_bar: np.ndarray
    z_hat: np.ndarray
    nu_z: np.ndarray
    s_hat: np.ndarray
    nu_s: np.ndarray
    r_hat: np.ndarray
    nu_r: np.ndarray
    q_hat: np.ndarray
    nu_q: np.ndarray
    pi_b: np.ndarray
    pi_c: np.ndarray
    t: int = 1

    @property
    def Np(self) -> int:
        return self.b_hat.size

    @property
    def C_hat(self) -> np.ndarray:
        return _mat(self.c_hat, self.Nrx)

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(getattr(self, name)))
            for name in ("b_hat", "nu_b", "c_hat", "nu_c", "z_bar", "nu_p")
        )

    def copy(self) -> GampState:
        return dataclasses.replace(
            self,
            **{f.name: np.array(getattr(self, f.name), copy=True)
               for f in dataclasses.fields(self)
               if isinstance(getattr(self, f.name), np.ndarray)},
        )


def _mat(v: np.ndarray, rows: int) -> np.ndarray:
    return np.reshape(v, (rows, -1), order="F")


def _vec(X: np.ndarray) -> np.ndarray:
    return np.reshape(X, -1, order="F")


def initial_state(Nrx: int, F: EffectiveTraining, hp: Hyperparams,
                  rng: np.random.Generator) -> GampState:
    """b_hat = U_Np 1 (the zero-CFO spectrum), c_hat drawn from the active prior."""
    Np = F.Np
    Nc = Nrx * F.F.shape[0]
    M = Nrx * Np
    var_c = (1.0 - hp.lambda_c) * hp.sigma_c2
    b_hat = np.fft.fft(np.ones(Np, dtype=complex), norm="ortho")
    c_hat = math.sqrt(var_c / 2.0) * (rng.standard_normal(Nc) + 1j * rng.standard_normal(Nc))
    zeros_m = np.zeros(M, dtype=complex)
    return GampState(
        Nrx=Nrx,
        b_hat=b_hat,
        nu_b=np.full(Np, (1.0 - hp.lambda_b) * hp.sigma_b2),
        c_hat=c_hat,
        nu_c=np.full(Nc, var_c),
        p_hat=zeros_m.copy(),
        nu_p=np.zeros(M),
        nu_p_bar=np.zeros(M),
        z_bar=zeros_m.copy(),
        z_hat=zeros_m.copy(),
        nu_z=np.zeros(M),
        s_hat=zeros_m.copy(),
        nu_s=np.zeros(M),
        r_hat=np.zeros(Nc, dtype=complex),
        nu_r=np.zeros(Nc),
        q_hat=np.zeros(Np, dtype=complex),
        nu_q=np.zeros(Np),
        pi_b=np.zeros(Np),
        pi_c=np.zeros(Nc),
        t=1,
    )


# ---------------------------------------------------------------------------
# Fast R-stages
# ---------------------------------------------------------------------------

class PStage(NamedTuple):
    p_hat: np.ndarray
    nu_p: np.ndarray
    nu_p_bar: np.ndarray
    z_bar: np.ndarray


class RQStage(NamedTuple):
    r_hat: np.ndarray
    nu_r: np.ndarray
    q_hat: np.ndarray
    nu_q: np.ndarray


def compute_p_stage(state: GampState, F: EffectiveTraining,
                    C_hat: np.ndarray, b_hat: np.ndarray) -> PStage:
    """Plug-in estimate, both variance forms and the Onsager-corrected mean.

    mu_c is the per-column mean of the Nrx x (Ntx*L) variance matrix of c.
    """
    Fm = F.F
    Np = F.Np
    Nrx = C_hat.shape[0]
    d_hat = np.fft.ifft(b_hat, norm="ortho")
    W = np.fft.fft(C_hat @ Fm, axis=0, norm="ortho")
    F_hat2 = np.abs(Fm * d_hat[None, :]) ** 2
    F2 = np.abs(Fm) ** 2

    mu_c = _mat(state.nu_c, Nrx).mean(axis=0)
    nu_b_avg = float(np.sum(state.nu_b)) / Np

    z_bar = W * d_hat[None, :]
    nu_p_bar = nu_b_avg * np.abs(W) ** 2 + (mu_c @ F_hat2)[None, :]
    nu_p = nu_p_bar + nu_b_avg * (mu_c @ F2)[None, :]
    p_hat = z_bar - _mat(state.s_hat, Nrx) * nu_p_bar
    return PStage(_vec(p_hat), _vec(nu_p), _vec(nu_p_bar), _vec(z_bar))


def compute_rq_stage(state: GampState, F: EffectiveTraining,
                     precision_floor: float = VARIANCE_FLOOR) -> RQStage:
    """Pseudo-measurements of c and b from the current s_hat / nu_s.

    mu_z is the per-sample mean of the Nrx x Np matrix of nu_s. Precisions
    below `precision_floor` are clamped before inversion.
    """
    Fm = F.F
    Np = F.Np
    Nrx = state.Nrx
    C_hat = state.C_hat
    S_hat = _mat(state.s_hat, Nrx)
    nu_s = _mat(state.nu_s, Nrx)

    d_hat = np.fft.ifft(state.b_hat, norm="ortho")
    W = np.fft.fft(C_hat @ Fm, axis=0, norm="ortho")
    F_hat = Fm * d_hat[None, :]
    F2 = np.abs(Fm) ** 2

    mu_z = nu_s.mean(axis=0)
    mu_c = _mat(state.nu_c, Nrx).mean(axis=0)
    nu_b_avg = float(np.sum(state.nu_b)) / Np

    # channel side, one precision per column of C
    prec_r = np.maximum((np.abs(F_hat) ** 2) @ mu_z, precision_floor)
    nu_r = np.broadcast_to(1.0 / prec_r, C_hat.shape)
    back = np.fft.ifft(S_hat, axis=0, norm="ortho") @ F_hat.conj().T
    onsager_c = nu_b_avg * (F2 @ mu_z)
    R_hat = C_hat + nu_r * back - nu_r * C_hat * onsager_c[None, :]

    # phase side, a single precision shared by all bins
    prec_q = max(float(np.sum(nu_s * np.abs(W) ** 2)) / Np, precision_floor)
    nu_q = np.full(Np, 1.0 / prec_q)
    g = np.sum(S_hat * W.conj(), axis=0)
    onsager_b = (Nrx / Np) * float(mu_c @ F2 @ mu_z)
    q_hat = state.b_hat + nu_q * np.fft.fft(g, norm="ortho") - nu_q * state.b_hat * onsager_b

    return RQStage(_vec(R_hat), _vec(np.array(nu_r)), q_hat, nu_q)


# ---------------------------------------------------------------------------
# Moment maps
# ---------------------------------------------------------------------------

def _probit_moments(s: np.ndarray, mean: np.ndarray, var: np.ndarray,
                    noise_var: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of x ~ N(mean, var) given s = sign(x + N(0, noise_var))."""
    total = var + noise_var
    scale = np.sqrt(total)
    u = s * mean / scale
    ratio = pdf_cdf_ratio(u)
    post_mean = mean + s * var / scale * ratio
    post_var = var - var ** 2 / total * ratio * (u + ratio)
    return post_mean, post_var


def output_moments(y, p_hat, nu_p, sigma2: float,
                   q: Quantizer | str | float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of z under N(z; p_hat, nu_p) and p(y | z)."""
    q = Quantizer.parse(q)
    y = np.asarray(y)
    p_hat = np.asarray(p_hat, dtype=complex)
    nu_p = np.asarray(nu_p, dtype=float)
    if q is Quantizer.FULL:
        total = nu_p + sigma2
        return (nu_p * y + sigma2 * p_hat) / total, nu_p * sigma2 / total
    half_var = nu_p / 2.0
    s_re = np.where(y.real >= 0, 1.0, -1.0)
    s_im = np.where(y.imag >= 0, 1.0, -1.0)
    mean_re, var_re = _probit_moments(s_re, p_hat.real, half_var, sigma2 / 2.0)
    mean_im, var_im = _probit_moments(s_im, p_hat.imag, half_var, sigma2 / 2.0)
    return mean_re + 1j * mean_im, var_re + var_im


def _log_cn(r2: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -np.log(np.pi * var) - r2 / var


def input_moments_bg(r_hat, nu_r, lam: float, sigma_x2: float
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior of x ~ lam*delta_0 + (1-lam)*CN(0, sigma_x2) given r_hat = x + CN(0, nu_r).

    Returns (mean, variance, probability that x is active).
    """
    r_hat = np.asarray(r_hat, dtype=complex)
    nu_r = np.asarray(nu_r, dtype=float)
    if lam >= 1.0:
        zeros = np.zeros(r_hat.shape)
        return zeros.astype(complex), zeros, zeros
    r2 = np.abs(r_hat) ** 2
    if lam <= 0.0:
        pi = np.ones(r_hat.shape)
    else:
        log_odds = (math.log1p(-lam) - math.log(lam)
                    + _log_cn(r2, sigma_x2 + nu_r) - _log_cn(r2, nu_r))
        pi = special.expit(log_odds)
    m_a = r_hat * sigma_x2 / (sigma_x2 + nu_r)
    v_a = sigma_x2 * nu_r / (sigma_x2 + nu_r)
    x_hat = pi * m_a
    nu_x = np.maximum(pi * (v_a + np.abs(m_a) ** 2) - np.abs(x_hat) ** 2, 0.0)
    return x_hat, nu_x, pi


# ---------------------------------------------------------------------------
# One iteration
# ---------------------------------------------------------------------------

def finish_step(state: GampState, p: PStage, received: ReceivedBlock,
                hp: Hyperparams, rq_stage, damping: float = 1.0,
                floor: float = VARIANCE_FLOOR) -> GampState:
    """Everything after the p-stage; `rq_stage(state)` supplies the r/q means and variances.

    Shared by the fast solver and the literal tensor implementation so the
    two differ only in how the tensor sums are evaluated.
    """
    damp = damping < 1.0 and state.t > 1
    nu_p = np.maximum(p.nu_p, floor)
    z_hat, nu_z = output_moments(received.y, p.p_hat, nu_p, hp.sigma2, received.q)
    nu_z = np.maximum(nu_z, 0.0)
    nu_s = np.maximum((1.0 - nu_z / nu_p) / nu_p, floor)
    s_hat = (z_hat - p.p_hat) / nu_p
    if damp:
        s_hat = damping * s_hat + (1.0 - damping) * state.s_hat
        nu_s = damping * nu_s + (1.0 - damping) * state.nu_s

    mid = dataclasses.replace(
        state, p_hat=p.p_hat, nu_p=nu_p, nu_p_bar=p.nu_p_bar, z_bar=p.z_bar,
        z_hat=z_hat, nu_z=nu_z, s_hat=s_hat, nu_s=nu_s,
    )
    rq = rq_stage(mid)

    c_hat, nu_c, pi_c = input_moments_bg(rq.r_hat, rq.nu_r, hp.lambda_c, hp.sigma_c2)
    b_hat, nu_b, pi_b = input_moments_bg(rq.q_hat, rq.nu_q, hp.lambda_b, hp.sigma_b2)
    nu_c = np.maximum(nu_c, floor)
    nu_b = np.maximum(nu_b, floor)
    if damp:
        c_hat = damping * c_hat + (1.0 - damping) * state.c_hat
        nu_c = damping * nu_c + (1.0 - damping) * state.nu_c
        b_hat = damping * b_hat + (1.0 - damping) * state.b_hat
        nu_b = damping * nu_b + (1.0 - damping) * state.nu_b

    return dataclasses.replace(
        mid, r_hat=rq.r_hat, nu_r=rq.nu_r, q_hat=rq.q_hat, nu_q=rq.nu_q,
        c_hat=c_hat, nu_c=nu_c, b_hat=b_hat, nu_b=nu_b,
        pi_b=pi_b, pi_c=pi_c, t=state.t + 1,
    )


def step(state: GampState, F: EffectiveTraining, received: ReceivedBlock,
         hp: Hyperparams, damping: float = 1.0,
         floor: float = VARIANCE_FLOOR) -> GampState:
    """One fast PBiGAMP iteration."""
    p = compute_p_stage(state, F, state.C_hat, state.b_hat)
    return finish_step(
        state, p, received, hp,
        rq_stage=lambda mid: compute_rq_stage(mid, F, floor),
        damping=damping, floor=floor,
    )


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def _em_prior(pi: np.ndarray, r_hat: np.ndarray, nu_r: np.ndarray,
              lam: float, sigma_x2: float) -> tuple[float, float]:
    total = float(np.sum(pi))
    new_lam = min(max(1.0 - float(np.mean(pi)), 0.0), 1.0 - 1e-9)
    if total <= 0.0:
        return new_lam, sigma_x2
    m_a = r_hat * sigma_x2 / (sigma_x2 + nu_r)
    v_a = sigma_x2 * nu_r / (sigma_x2 + nu_r)
    new_var = float(np.sum(pi * (v_a + np.abs(m_a) ** 2))) / total
    return new_lam, max(new_var, VARIANCE_FLOOR)


def em_update(state: GampState, hp: Hyperparams) -> Hyperparams:
    """Re-estimate (lambda, sigma_x2) for b and c from the last input stage."""
    lambda_b, sigma_b2 = _em_prior(state.pi_b, state.q_hat, state.nu_q, hp.lambda_b, hp.sigma_b2)
    lambda_c, sigma_c2 = _em_prior(state.pi_c, state.r_hat, state.nu_r, hp.lambda_c, hp.sigma_c2)
    return Hyperparams(lambda_b=lambda_b, lambda_c=lambda_c,
                       sigma_b2=sigma_b2, sigma_c2=sigma_c2, sigma2=hp.sigma2)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    em_pass: int
    iteration: int
    residual: float
    damping: float
    lambda_b: float
    lambda_c: float
    sigma_b2: float
    sigma_c2: float


@dataclass
class GampResult:
    b_hat: np.ndarray
    c_hat: np.ndarray
    Nrx: int
    trace: list[TraceRow] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    hyperparams: Hyperparams | None = None
    restarts: int = 0
    state: GampState | None = None

    @property
    def C_hat(self) -> np.ndarray:
        return _mat(self.c_hat, self.Nrx)


class _UnstableState(Exception):
    def __init__(self, iteration: int, what: str) -> None:
        self.iteration = iteration
        self.what = what
        super().__init__(f"{what} at iteration {iteration}")


@dataclass(frozen=True)
class _Scale:
    """Energy references for the blow-up guard."""
    b: float
    c: float
    y: float | None


def plug_in_z(C_hat: np.ndarray, F: EffectiveTraining, b_hat: np.ndarray) -> np.ndarray:
    """vec(U_Nrx C_hat F diag(U_Np^H b_hat)), the noiseless block implied by an estimate."""
    d_hat = np.fft.ifft(b_hat, norm="ortho")
    return _vec(np.fft.fft(C_hat @ F.F, axis=0, norm="ortho") * d_hat[None, :])


def effective_hyperparams(received: ReceivedBlock, hp: Hyperparams,
                          cfg: GampConfig) -> Hyperparams:
    """hp with sigma2 raised to the relative noise floor under full resolution."""
    if received.q is not Quantizer.FULL:
        return hp
    floor = cfg.relative_noise_floor * float(np.mean(np.abs(received.Y) ** 2))
    if hp.sigma2 >= floor:
        return hp
    logger.debug("noise variance %.3g raised to floor %.3g", hp.sigma2, floor)
    return dataclasses.replace(hp, sigma2=floor)


def assess_fit(received: ReceivedBlock, z: np.ndarray, sigma2: float,
               cfg: GampConfig = GampConfig()) -> tuple[float, bool]:
    """(score, degenerate) of a plug-in z against the data; higher score fits better.

    One-bit: share of I/Q signs reproduced. Full resolution: share of the
    received energy explained; degenerate when the residual exceeds the
    noise energy plus half of the remaining signal energy.
    """
    y = received.y
    if received.q is Quantizer.ONE_BIT:
        agree = 0.5 * (np.mean(np.sign(z.real) == np.sign(y.real))
                       + np.mean(np.sign(z.imag) == np.sign(y.imag)))
        return float(agree), bool(agree < cfg.min_sign_agreement)
    residual = float(np.sum(np.abs(y - z) ** 2))
    energy = float(np.sum(np.abs(y) ** 2))
    noise = y.size * sigma2
    degenerate = energy > noise and residual > noise + 0.5 * (energy - noise)
    score = 1.0 - residual / energy if energy > 0 else -residual
    return score, degenerate


def _check_scale(state: GampState, scale: _Scale, cfg: GampConfig) -> None:
    limit = cfg.blowup_factor
    if float(np.sum(np.abs(state.c_hat) ** 2)) > limit * scale.c:
        raise _UnstableState(state.t - 1, "channel estimate blew up")
    if float(np.sum(np.abs(state.b_hat) ** 2)) > limit * scale.b:
        raise _UnstableState(state.t - 1, "phase spectrum blew up")
    if scale.y and float(np.sum(np.abs(state.z_bar) ** 2)) > limit * scale.y:
        raise _UnstableState(state.t - 1, "plug-in estimate of z blew up")


def _gamp_pass(state: GampState, F: EffectiveTraining, received: ReceivedBlock,
               hp: Hyperparams, cfg: GampConfig, damping: float, scale: _Scale,
               trace: list[TraceRow], em_pass: int) -> tuple[GampState, int, bool]:
    prev_z: np.ndarray | None = None
    for it in range(1, cfg.t_max + 1):
        applied = damping if state.t > 1 else 1.0
        state = step(state, F, received, hp, damping=damping, floor=cfg.variance_floor)
        if not state.is_finite():
            raise _UnstableState(state.t - 1, "non-finite state")
        _check_scale(state, scale, cfg)
        z = state.z_bar
        energy = float(np.sum(np.abs(z) ** 2))
        if prev_z is None:
            residual = math.inf
        else:
            change = float(np.sum(np.abs(z - prev_z) ** 2))
            residual = change / energy if energy > 0 else (0.0 if change == 0 else math.inf)
        trace.append(TraceRow(em_pass, it, residual, applied,
                              hp.lambda_b, hp.lambda_c, hp.sigma_b2, hp.sigma_c2))
        logger.debug("pass %d iter %d residual %.3e", em_pass, it, residual)
        if prev_z is not None and residual <= cfg.tau_stop:
            return state, it, True
        prev_z = z
    return state, cfg.t_max, False


def _solve_once(received: ReceivedBlock, F: EffectiveTraining, hp: Hyperparams,
                cfg: GampConfig, damping: float, rng: np.random.Generator) -> GampResult:
    state = initial_state(received.Nrx, F, hp, rng)
    y_energy = float(np.sum(np.abs(received.Y) ** 2))
    scale = _Scale(
        b=F.Np * (1.0 - hp.lambda_b) * hp.sigma_b2,
        c=state.c_hat.size * (1.0 - hp.lambda_c) * hp.sigma_c2,
        y=y_energy if received.q is Quantizer.FULL and y_energy > 0 else None,
    )
    trace: list[TraceRow] = []
    total = 0
    converged = False
    for em_pass in range(cfg.em_outer_iters):
        state, iters, converged = _gamp_pass(state, F, received, hp, cfg, damping, scale,
                                             trace, em_pass)
        total += iters
        if em_pass == cfg.em_outer_iters - 1:
            break
        new_hp = em_update(state, hp)
        change = hp.relative_change(new_hp)
        logger.debug("EM pass %d: lambda_b=%.4f lambda_c=%.4f sigma_b2=%.4g sigma_c2=%.4g",
                     em_pass, new_hp.lambda_b, new_hp.lambda_c, new_hp.sigma_b2, new_hp.sigma_c2)
        hp = new_hp
        if change < cfg.em_tol:
            break
    if not converged:
        logger.warning("PBiGAMP stopped at t_max=%d without meeting tau_stop", cfg.t_max)
    return GampResult(b_hat=state.b_hat, c_hat=state.c_hat, Nrx=received.Nrx,
                      trace=trace, iterations=total, converged=converged,
                      hyperparams=hp, state=state)


def run(received: ReceivedBlock, F: EffectiveTraining, hp: Hyperparams,
        cfg: GampConfig = GampConfig()) -> GampResult:
    """Joint estimate of (b, c).

    An attempt that turns non-finite or blows up restarts from a fresh seed
    with half the damping; so does one that settles on a degenerate fixed
    point. When every attempt is degenerate the best-fitting one comes back
    with converged=False; when none finishes, SolverDivergenceError.
    """
    if received.Np != F.Np:
        raise InvalidDimensionError("Y.columns vs F.columns", (received.Np, F.Np))
    hp = effective_hyperparams(received, hp, cfg)
    attempts = cfg.restarts + 1
    fallback: tuple[float, GampResult] | None = None
    for attempt in range(attempts):
        rng = np.random.default_rng([cfg.init_seed, attempt])
        try:
            result = _solve_once(received, F, hp, cfg, cfg.damping_for(attempt), rng)
        except _UnstableState as exc:
            logger.warning("restart %d/%d: %s", attempt + 1, cfg.restarts, exc)
            continue
        result.restarts = attempt
        score, degenerate = assess_fit(
            received, plug_in_z(result.C_hat, F, result.b_hat), hp.sigma2, cfg)
        if not degenerate:
            return result
        logger.warning("restart %d/%d: degenerate fixed point (fit score %.3f)",
                       attempt + 1, cfg.restarts, score)
        result.converged = False
        if fallback is None or score > fallback[0]:
            fallback = (score, result)
    if fallback is not None:
        return fallback[1]
    raise SolverDivergenceError(attempts)


def write_trace_csv(trace: Sequence[TraceRow], path: str | Path) -> None:
    names = [f.name for f in dataclasses.fields(TraceRow)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in trace:
            writer.writerow([getattr(row, n) for n in names])
