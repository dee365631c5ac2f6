"""
oracle.py — Independent verification machinery

Slow, literal counterparts of the fast code paths, used by the test-suite
and by ``harness selftest``:

  * the PBiGAMP iteration evaluated by direct summation over the
    materialized third-order tensor z[m, i, k] = G[m, i] A[m, k]
  * adaptive quadrature for the closed-form output/input moment maps
  * exhaustive CFO grid search + least squares on tiny instances
  * the CFO propagation identity for circulant training

None of this is meant to be fast.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, stats

import pbigamp
from channel import AngleDelayChannel, WidebandChannel, sample_sparse_angle_delay, to_angle_delay
from errors import (
    InvalidArgumentError,
    InvalidDimensionError,
    QuadratureError,
    RankDeficientTrainingError,
    TensorTooLargeError,
)
from kernels import circ_shift_columns, dft_matrix
from measurement import (
    Quantizer,
    ReceivedBlock,
    forward_factored,
    forward_tapwise,
    quantize,
)
from pbigamp import GampState, Hyperparams, PStage, RQStage
from phase import PhaseErrorVector, to_spectrum
from training import EffectiveTraining, TrainingBlock, TrainingKind, assemble_F, circulant_eigenvalues, gen_training

logger = logging.getLogger(__name__)

TENSOR_LIMIT = 1_000_000


# ---------------------------------------------------------------------------
# Literal tensor PBiGAMP
# ---------------------------------------------------------------------------

def build_z_tensor(F: EffectiveTraining, Nrx: int, limit: int = TENSOR_LIMIT) -> np.ndarray:
    """z[m, i, k] = G[m, i] A[m, k] with G = U_Np^H kron 1_Nrx, A = F^T kron U_Nrx."""
    Np = F.Np
    M = Nrx * Np
    Nc = Nrx * F.F.shape[0]
    elements = M * Np * Nc
    if elements > limit:
        raise TensorTooLargeError(elements, limit)
    G = np.kron(dft_matrix(Np).conj().T, np.ones((Nrx, 1)))
    A = np.kron(F.F.T, dft_matrix(Nrx))
    return G[:, :, None] * A[:, None, :]


def generic_p_stage(state: GampState, z_tensor: np.ndarray) -> PStage:
    z_i = np.einsum("mik,k->mi", z_tensor, state.c_hat)
    z_k = np.einsum("mik,i->mk", z_tensor, state.b_hat)
    z_bar = z_i @ state.b_hat
    nu_p_bar = np.abs(z_i) ** 2 @ state.nu_b + np.abs(z_k) ** 2 @ state.nu_c
    nu_p = nu_p_bar + np.einsum("mik,i,k->m", np.abs(z_tensor) ** 2, state.nu_b, state.nu_c)
    p_hat = z_bar - state.s_hat * nu_p_bar
    return PStage(p_hat, nu_p, nu_p_bar, z_bar)


def generic_rq_stage(state: GampState, z_tensor: np.ndarray,
                     precision_floor: float = pbigamp.VARIANCE_FLOOR) -> RQStage:
    z_i = np.einsum("mik,k->mi", z_tensor, state.c_hat)
    z_k = np.einsum("mik,i->mk", z_tensor, state.b_hat)
    z2 = np.abs(z_tensor) ** 2

    nu_r = 1.0 / np.maximum(state.nu_s @ np.abs(z_k) ** 2, precision_floor)
    r_hat = (state.c_hat + nu_r * (state.s_hat @ z_k.conj())
             - nu_r * state.c_hat * np.einsum("m,i,mik->k", state.nu_s, state.nu_b, z2))

    nu_q = 1.0 / np.maximum(state.nu_s @ np.abs(z_i) ** 2, precision_floor)
    q_hat = (state.b_hat + nu_q * (state.s_hat @ z_i.conj())
             - nu_q * state.b_hat * np.einsum("m,k,mik->i", state.nu_s, state.nu_c, z2))
    return RQStage(r_hat, nu_r, q_hat, nu_q)


def generic_pbigamp_step(state: GampState, z_tensor: np.ndarray, received: ReceivedBlock,
                         hp: Hyperparams, damping: float = 1.0,
                         floor: float = pbigamp.VARIANCE_FLOOR) -> GampState:
    """One PBiGAMP iteration computed term by term from the tensor."""
    expected = (received.y.size, state.Np, state.c_hat.size)
    if z_tensor.shape != expected:
        raise InvalidDimensionError("z_tensor.shape", z_tensor.shape)
    p = generic_p_stage(state, z_tensor)
    return pbigamp.finish_step(
        state, p, received, hp,
        rq_stage=lambda mid: generic_rq_stage(mid, z_tensor, floor),
        damping=damping, floor=floor,
    )


def random_state(Nrx: int, F: EffectiveTraining, rng: np.random.Generator) -> GampState:
    """A GampState with every entry randomized, for path-equivalence checks."""
    Np = F.Np
    Nc = Nrx * F.F.shape[0]
    M = Nrx * Np

    def cn(n):
        return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)

    def pos(n):
        return rng.uniform(0.1, 1.0, n)

    return GampState(
        Nrx=Nrx, b_hat=cn(Np), nu_b=pos(Np), c_hat=cn(Nc), nu_c=pos(Nc),
        p_hat=cn(M), nu_p=pos(M), nu_p_bar=pos(M), z_bar=cn(M), z_hat=cn(M),
        nu_z=pos(M), s_hat=cn(M), nu_s=pos(M), r_hat=cn(Nc), nu_r=pos(Nc),
        q_hat=cn(Np), nu_q=pos(Np), pi_b=pos(Np), pi_c=pos(Nc), t=2,
    )


# ---------------------------------------------------------------------------
# Grid search + least squares
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridLsResult:
    eps_hat: float
    h_hat: WidebandChannel
    residual: float
    residuals: tuple[float, ...]


def _stacked_training(T: TrainingBlock, L: int) -> np.ndarray:
    return np.concatenate([circ_shift_columns(T.T, ell) for ell in range(L)], axis=0)


def grid_ls_estimate(received: ReceivedBlock, T: TrainingBlock, L: int,
                     grid: Sequence[float]) -> GridLsResult:
    """Best (eps, H) over `grid` assuming no phase noise; residual is ||.||_F^2."""
    if received.q is not Quantizer.FULL:
        raise InvalidArgumentError("q", received.q.value, "grid search needs unquantized data")
    if len(grid) == 0:
        raise InvalidArgumentError("grid", grid, "needs at least one candidate")
    needed = T.Ntx * L
    X = _stacked_training(T, L)
    rank = int(np.linalg.matrix_rank(X))
    if T.Np < needed or rank < needed:
        raise RankDeficientTrainingError(rank, needed)

    n = np.arange(1, T.Np + 1)
    best: tuple[float, float, np.ndarray] | None = None
    residuals = []
    for eps in grid:
        Y = received.Y * np.exp(-1j * eps * n)[None, :]
        solution, _, _, _ = np.linalg.lstsq(X.T, Y.T, rcond=None)
        H_stack = solution.T
        residual = float(np.sum(np.abs(Y - H_stack @ X) ** 2))
        residuals.append(residual)
        if best is None or residual < best[1]:
            best = (float(eps), residual, H_stack)
    eps_hat, residual, H_stack = best
    taps = H_stack.reshape(received.Nrx, L, T.Ntx).transpose(1, 0, 2)
    return GridLsResult(eps_hat, WidebandChannel(taps=taps), residual, tuple(residuals))


# ---------------------------------------------------------------------------
# CFO propagation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropagationCheck:
    residual: float
    nnz_before: int
    nnz_after: int
    C_eps: np.ndarray

    @property
    def support_preserved(self) -> bool:
        return self.nnz_before == self.nnz_after


def _support_size(C: np.ndarray, rel_tol: float = 1e-9) -> int:
    peak = float(np.max(np.abs(C))) if C.size else 0.0
    return int(np.count_nonzero(np.abs(C) > rel_tol * peak)) if peak > 0 else 0


def propagated_channel(T_circulant: np.ndarray, C: np.ndarray, d: int) -> np.ndarray:
    """Channel that produces, with zero CFO, the block C produces with eps = 2 pi d / Np.

    C(eps) = e^{j eps} C Lambda J_{Np-d} Lambda^{-1}, Lambda = diag(U^H T U);
    the leading phase comes from counting samples from n = 1.
    """
    lam = circulant_eigenvalues(T_circulant)
    Np = lam.size
    eps = 2.0 * math.pi * d / Np
    shifted = circ_shift_columns(C * lam[None, :], (Np - d) % Np)
    return np.exp(1j * eps) * shifted / lam[None, :]


def cfo_propagation_check(T_circulant: np.ndarray, C: np.ndarray, d: int) -> PropagationCheck:
    T_circulant = np.asarray(T_circulant)
    Ntx, Np = T_circulant.shape
    if Ntx != Np or C.shape[1] != Ntx:
        raise InvalidDimensionError("(Ntx, Np, C.columns)", (Ntx, Np, C.shape[1]))
    C_eps = propagated_channel(T_circulant, C, d)
    F = assemble_F(TrainingBlock(T=T_circulant), 1)
    n = np.arange(1, Np + 1)
    b_eps = to_spectrum(PhaseErrorVector(np.exp(2j * math.pi * d * n / Np)))
    b_zero = to_spectrum(PhaseErrorVector(np.ones(Np, dtype=complex)))
    Z = forward_factored(AngleDelayChannel(C, 1), F, b_eps).Z
    Z_prop = forward_factored(AngleDelayChannel(C_eps, 1), F, b_zero).Z
    residual = float(np.linalg.norm(Z - Z_prop) / np.linalg.norm(Z))
    return PropagationCheck(residual, _support_size(C), _support_size(C_eps), C_eps)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

class QuadratureMoments(NamedTuple):
    mean: complex
    variance: float
    activity: float = 1.0


@dataclass(frozen=True)
class GaussianOutput:
    """y = z + CN(0, sigma2)."""
    y: complex
    sigma2: float


@dataclass(frozen=True)
class ProbitOutput:
    """y = Q1(z + CN(0, sigma2))."""
    y: complex
    sigma2: float


@dataclass(frozen=True)
class BernoulliGaussianInput:
    """x ~ lam * delta_0 + (1 - lam) CN(0, sigma_x2)."""
    lam: float
    sigma_x2: float


def _integrate(fn: Callable[[float], float], lo: float, hi: float, points: Sequence[float]) -> float:
    inside = [p for p in points if lo < p < hi]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(fn, lo, hi, points=inside or None,
                                      epsabs=1e-13, epsrel=1e-11, limit=400)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return value


def _dimension_moments(weight: Callable[[float], float], lo: float, hi: float,
                       points: Sequence[float]) -> tuple[float, float, float]:
    z0 = _integrate(weight, lo, hi, points)
    z1 = _integrate(lambda x: x * weight(x), lo, hi, points)
    z2 = _integrate(lambda x: x * x * weight(x), lo, hi, points)
    return z0, z1, z2


def _output_dimension(y: float, mean: float, var: float, sigma2: float,
                      probit: bool) -> tuple[float, float]:
    sd = math.sqrt(var)
    noise_sd = math.sqrt(sigma2)
    prior = stats.norm(mean, sd)
    if probit:
        s = 1.0 if y >= 0 else -1.0

        def weight(x):
            return prior.pdf(x) * stats.norm.cdf(s * x / noise_sd)

        lo, hi = mean - 12 * sd, mean + 12 * sd
        points = [mean, 0.0]
    else:
        def weight(x):
            return prior.pdf(x) * stats.norm.pdf(y, x, noise_sd)

        lo = min(mean - 12 * sd, y - 12 * noise_sd)
        hi = max(mean + 12 * sd, y + 12 * noise_sd)
        points = [(mean * sigma2 + y * var) / (var + sigma2)]
    z0, z1, z2 = _dimension_moments(weight, lo, hi, points)
    if z0 <= 0.0:
        raise QuadratureError("vanishing normalizer")
    post_mean = z1 / z0
    return post_mean, z2 / z0 - post_mean ** 2


def _bg_active_dimension(r: float, nu: float, sigma_x2: float) -> tuple[float, float, float]:
    """(evidence, mean, second moment) of one real dimension of the active branch."""
    sd = math.sqrt(sigma_x2 / 2.0)
    noise_sd = math.sqrt(nu / 2.0)

    def weight(x):
        return stats.norm.pdf(x, 0.0, sd) * stats.norm.pdf(r, x, noise_sd)

    lo = min(-12 * sd, r - 12 * noise_sd)
    hi = max(12 * sd, r + 12 * noise_sd)
    center = r * sigma_x2 / (sigma_x2 + nu)
    z0, z1, z2 = _dimension_moments(weight, lo, hi, [center])
    return z0, z1 / z0, z2 / z0


def quadrature_moments(model, mean: complex, var: float) -> QuadratureMoments:
    """Posterior moments by 1-D numerical integration per real dimension.

    For output models (mean, var) is the Gaussian pseudo-prior N(p_hat, nu_p);
    for the input model it is the pseudo-measurement (r_hat, nu_r).
    """
    if var <= 0:
        raise InvalidArgumentError("var", var, "must be > 0")
    if isinstance(model, (GaussianOutput, ProbitOutput)):
        probit = isinstance(model, ProbitOutput)
        y = complex(model.y)
        m_re, v_re = _output_dimension(y.real, mean.real, var / 2.0, model.sigma2 / 2.0, probit)
        m_im, v_im = _output_dimension(y.imag, mean.imag, var / 2.0, model.sigma2 / 2.0, probit)
        return QuadratureMoments(complex(m_re, m_im), v_re + v_im)
    if isinstance(model, BernoulliGaussianInput):
        r = complex(mean)
        if model.lam >= 1.0:
            return QuadratureMoments(0j, 0.0, 0.0)
        z_re, m_re, s_re = _bg_active_dimension(r.real, var, model.sigma_x2)
        z_im, m_im, s_im = _bg_active_dimension(r.imag, var, model.sigma_x2)
        noise_sd = math.sqrt(var / 2.0)
        evidence_zero = stats.norm.pdf(r.real, 0.0, noise_sd) * stats.norm.pdf(r.imag, 0.0, noise_sd)
        active = (1.0 - model.lam) * z_re * z_im
        pi = active / (active + model.lam * evidence_zero)
        post_mean = pi * complex(m_re, m_im)
        second = pi * (s_re + s_im)
        return QuadratureMoments(post_mean, second - abs(post_mean) ** 2, pi)
    raise InvalidArgumentError("model", type(model).__name__, "unknown quadrature model")


# ---------------------------------------------------------------------------
# Equivalence suite
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tolerance)


@dataclass
class SuiteReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            mark = "ok  " if c.passed else "FAIL"
            lines.append(f"{mark} {c.name:<28} worst={c.worst:.3e} tol={c.tolerance:.0e}")
        return "\n".join(lines)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def _random_instance(rng: np.random.Generator, q: Quantizer, Nrx: int = 4, Ntx: int = 4,
                     L: int = 2, Np: int = 8):
    T = gen_training(TrainingKind.IID_QPSK, Ntx, Np, 1.0, rng)
    F = assemble_F(T, L)
    Y = rng.standard_normal((Nrx, Np)) + 1j * rng.standard_normal((Nrx, Np))
    received = ReceivedBlock(Y=quantize(Y, q), q=q, sigma2=0.5)
    hp = Hyperparams(lambda_b=0.9, lambda_c=0.8, sigma_b2=2.0, sigma_c2=1.5, sigma2=0.5)
    return F, received, hp


def check_fast_vs_generic(n_instances: int, rng: np.random.Generator) -> float:
    worst = 0.0
    for idx in range(n_instances):
        q = Quantizer.FULL if idx % 2 == 0 else Quantizer.ONE_BIT
        F, received, hp = _random_instance(rng, q)
        state = random_state(received.Nrx, F, rng)
        tensor = build_z_tensor(F, received.Nrx)
        fast_p = pbigamp.compute_p_stage(state, F, state.C_hat, state.b_hat)
        slow_p = generic_p_stage(state, tensor)
        fast_rq = pbigamp.compute_rq_stage(state, F)
        slow_rq = generic_rq_stage(state, tensor)
        fast = pbigamp.step(state, F, received, hp, damping=0.7)
        slow = generic_pbigamp_step(state, tensor, received, hp, damping=0.7)
        pairs = list(zip(fast_p, slow_p)) + list(zip(fast_rq, slow_rq)) + [
            (getattr(fast, name), getattr(slow, name))
            for name in ("b_hat", "nu_b", "c_hat", "nu_c", "s_hat", "nu_s", "z_hat", "nu_z")
        ]
        worst = max(worst, max(relative_error(a, b) for a, b in pairs))
    return worst


def check_moments(rng: np.random.Generator, points: int = 100) -> float:
    worst = 0.0
    for _ in range(points // 2):
        mean = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        nu_p = rng.uniform(0.2, 3.0)
        sigma2 = rng.uniform(0.2, 2.0)
        y = complex(rng.choice([-1.0, 1.0]), rng.choice([-1.0, 1.0]))
        z_hat, nu_z = pbigamp.output_moments(np.array([y]), np.array([mean]), np.array([nu_p]),
                                             sigma2, Quantizer.ONE_BIT)
        ref = quadrature_moments(ProbitOutput(y, sigma2), mean, nu_p)
        worst = max(worst, abs(z_hat[0] - ref.mean), abs(nu_z[0] - ref.variance))
    for _ in range(points - points // 2):
        r = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        nu_r = rng.uniform(0.1, 2.0)
        lam = rng.uniform(0.05, 0.95)
        sigma_x2 = rng.uniform(0.5, 4.0)
        x_hat, nu_x, _ = pbigamp.input_moments_bg(np.array([r]), np.array([nu_r]), lam, sigma_x2)
        ref = quadrature_moments(BernoulliGaussianInput(lam, sigma_x2), r, nu_r)
        worst = max(worst, abs(x_hat[0] - ref.mean), abs(nu_x[0] - ref.variance))
    return worst


def check_forward_models(n_instances: int, rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(n_instances):
        Nrx, Ntx, L, Np = 4, 4, 2, 16
        taps = (rng.standard_normal((L, Nrx, Ntx)) + 1j * rng.standard_normal((L, Nrx, Ntx)))
        h = WidebandChannel(taps=taps)
        T = gen_training(TrainingKind.IID_GAUSSIAN, Ntx, Np, 1.0, rng)
        d = PhaseErrorVector(np.exp(1j * rng.uniform(-np.pi, np.pi, Np)))
        Z1 = forward_tapwise(h, T, d).Z
        Z2 = forward_factored(to_angle_delay(h), assemble_F(T, L), to_spectrum(d)).Z
        worst = max(worst, relative_error(Z2, Z1))
    return worst


def check_cfo_propagation(rng: np.random.Generator, Np: int = 16, trials: int = 8) -> float:
    T = gen_training(TrainingKind.SHIFTED_ZC, Np, Np, 1.0, rng).T
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(0, Np))
        C = sample_sparse_angle_delay(Np, Np, 1, 6, rng).C
        check = cfo_propagation_check(T, C, d)
        worst = max(worst, check.residual if check.support_preserved else math.inf)
    return worst


def run_equivalence_suite(n_instances: int = 20, seed: int = 0) -> SuiteReport:
    """Fast-vs-literal, moments-vs-quadrature, forward-model and CFO propagation checks."""
    rng = np.random.default_rng(seed)
    report = SuiteReport()
    report.checks.append(CheckResult("fast vs tensor PBiGAMP", check_fast_vs_generic(n_instances, rng), 1e-8))
    report.checks.append(CheckResult("moments vs quadrature", check_moments(rng), 1e-6))
    report.checks.append(CheckResult("tapwise vs factored", check_forward_models(50, rng), 1e-10))
    report.checks.append(CheckResult("CFO propagation", check_cfo_propagation(rng), 1e-10))
    for c in report.checks:
        logger.info("selftest %s: worst %.3e (tol %.0e)", c.name, c.worst, c.tolerance)
    return report
