"""Tests for the PBiGAMP solver."""

from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np
import pytest

import pbigamp
from channel import AngleDelayChannel, sample_sparse_angle_delay
from errors import InvalidArgumentError, InvalidDimensionError, SolverDivergenceError
from measurement import Quantizer, ReceivedBlock, forward_factored, observe
from oracle import random_state
from pbigamp import (
    GampConfig,
    Hyperparams,
    compute_p_stage,
    compute_rq_stage,
    em_update,
    initial_state,
    input_moments_bg,
    output_moments,
    run,
    step,
    write_trace_csv,
)
from phase import PhaseParams, PhaseSpectrum, gen_phase_errors, to_spectrum
from training import EffectiveTraining, TrainingKind, assemble_F, gen_training


def _small_problem(seed=0, q=Quantizer.FULL, Nrx=4, Ntx=4, L=2, Np=16, sigma2=0.01):
    rng = np.random.default_rng(seed)
    C = sample_sparse_angle_delay(Nrx, Ntx, L, 3, rng)
    T = gen_training(TrainingKind.IID_QPSK, Ntx, Np, 1.0, rng)
    F = assemble_F(T, L)
    d = gen_phase_errors(PhaseParams.from_bins(1, Np), rng)
    received = observe(forward_factored(C, F, to_spectrum(d)), sigma2, q, rng)
    return C, F, received


def _hp(sigma2=0.5):
    return Hyperparams(lambda_b=0.9, lambda_c=0.8, sigma_b2=2.0, sigma_c2=1.5, sigma2=sigma2)


def _nmse(C, C_hat):
    gamma = np.vdot(C_hat, C) / np.vdot(C_hat, C_hat)
    return float(np.sum(np.abs(C - gamma * C_hat) ** 2) / np.sum(np.abs(C) ** 2))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class TestHyperparams:
    def test_defaults_match_signal_energy(self):
        hp = Hyperparams.default_for(Np=256, L=4, sigma2=0.1)
        assert hp.sigma_b2 == pytest.approx(100.0)
        assert hp.sigma_c2 == pytest.approx(1 / (0.05 * 4))
        # E||b||^2 = Np (1 - lambda_b) sigma_b2
        assert 256 * (1 - hp.lambda_b) * hp.sigma_b2 == pytest.approx(256)

    def test_noiseless_sigma_floored(self):
        hp = Hyperparams.default_for(Np=16, L=1, sigma2=0.0)
        assert hp.sigma2 == pbigamp.VARIANCE_FLOOR

    def test_lambda_one_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Hyperparams(lambda_b=1.0, lambda_c=0.5, sigma_b2=1, sigma_c2=1, sigma2=1)

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Hyperparams(lambda_b=0.5, lambda_c=0.5, sigma_b2=0, sigma_c2=1, sigma2=1)

    def test_relative_change(self):
        a = _hp()
        b = dataclasses.replace(a, sigma_b2=3.0)
        assert a.relative_change(b) == pytest.approx(0.5)
        assert a.relative_change(a) == 0.0


class TestGampConfig:
    def test_defaults(self):
        cfg = GampConfig()
        assert (cfg.t_max, cfg.tau_stop, cfg.damping) == (200, 1e-7, 0.3)

    @pytest.mark.parametrize("field,value", [("damping", 0.0), ("damping", 1.5), ("t_max", 0),
                                             ("restarts", -1), ("tau_stop", 0.0),
                                             ("relative_noise_floor", 1.0),
                                             ("blowup_factor", 1.0),
                                             ("min_sign_agreement", 0.4)])
    def test_invalid(self, field, value):
        with pytest.raises(InvalidArgumentError):
            GampConfig(**{field: value})

    def test_damping_halves_per_restart(self):
        cfg = GampConfig(damping=0.4)
        assert [cfg.damping_for(a) for a in range(3)] == [0.4, 0.2, 0.1]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


class TestInitialState:
    def test_zero_cfo_spectrum(self):
        _, F, received = _small_problem()
        hp = _hp()
        state = initial_state(received.Nrx, F, hp, np.random.default_rng(0))
        expected = np.zeros(16)
        expected[0] = 4.0
        np.testing.assert_allclose(state.b_hat, expected, atol=1e-12)
        np.testing.assert_allclose(state.nu_b, (1 - hp.lambda_b) * hp.sigma_b2)
        np.testing.assert_allclose(state.nu_c, (1 - hp.lambda_c) * hp.sigma_c2)
        assert state.c_hat.size == 4 * 4 * 2
        assert state.t == 1

    def test_seeded(self):
        _, F, received = _small_problem()
        a = initial_state(4, F, _hp(), np.random.default_rng(3))
        b = initial_state(4, F, _hp(), np.random.default_rng(3))
        np.testing.assert_array_equal(a.c_hat, b.c_hat)


# ---------------------------------------------------------------------------
# Fast stages
# ---------------------------------------------------------------------------


class TestPStage:
    def test_plug_in_matches_forward_model(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(1))
        Z = forward_factored(AngleDelayChannel(state.C_hat, F.L), F, PhaseSpectrum(state.b_hat)).Z
        p = compute_p_stage(state, F, state.C_hat, state.b_hat)
        np.testing.assert_allclose(p.z_bar, Z.reshape(-1, order="F"), atol=1e-12)

    def test_zero_variances(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(2))
        state = dataclasses.replace(state, nu_b=np.zeros_like(state.nu_b), nu_c=np.zeros_like(state.nu_c))
        p = compute_p_stage(state, F, state.C_hat, state.b_hat)
        np.testing.assert_array_equal(p.nu_p_bar, 0)
        np.testing.assert_array_equal(p.nu_p, 0)
        np.testing.assert_allclose(p.p_hat, p.z_bar)

    def test_unit_modulus_training_term(self):
        rng = np.random.default_rng(3)
        Nrx, Ntx, L, Np = 3, 2, 2, 8
        F = EffectiveTraining(np.exp(1j * rng.uniform(0, 2 * math.pi, (Ntx * L, Np))), Ntx, L)
        state = random_state(Nrx, F, rng)
        p = compute_p_stage(state, F, state.C_hat, state.b_hat)
        mu_c = state.nu_c.reshape(Nrx, -1, order="F").mean(axis=0)
        expected = np.sum(state.nu_b) / Np * np.sum(mu_c)
        np.testing.assert_allclose(p.nu_p - p.nu_p_bar, expected, rtol=1e-12)


class TestRQStage:
    def test_zero_residual_is_fixed_point(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(4))
        state = dataclasses.replace(state, s_hat=np.zeros_like(state.s_hat), nu_s=np.zeros_like(state.nu_s))
        rq = compute_rq_stage(state, F)
        np.testing.assert_allclose(rq.r_hat, state.c_hat)
        np.testing.assert_allclose(rq.q_hat, state.b_hat)

    def test_constant_nu_s_gives_column_constant_nu_r(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(5))
        state = dataclasses.replace(state, nu_s=np.full_like(state.nu_s, 0.7))
        nu_r = compute_rq_stage(state, F).nu_r.reshape(received.Nrx, -1, order="F")
        np.testing.assert_allclose(nu_r, np.broadcast_to(nu_r[0], nu_r.shape))

    def test_variances_positive(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(6))
        rq = compute_rq_stage(state, F)
        assert np.all(rq.nu_r > 0) and np.all(rq.nu_q > 0)


# ---------------------------------------------------------------------------
# Moment maps
# ---------------------------------------------------------------------------


class TestOutputMoments:
    def test_full_resolution_low_noise_returns_y(self):
        y = np.array([1 + 2j, -0.5j])
        z, nu = output_moments(y, np.zeros(2), np.ones(2), 1e-12, Quantizer.FULL)
        np.testing.assert_allclose(z, y, atol=1e-9)
        assert np.all(nu < 1e-9)

    def test_full_resolution_closed_form(self):
        z, nu = output_moments(np.array([2.0 + 0j]), np.array([0.0 + 0j]), np.array([1.0]), 1.0, "inf")
        assert z[0] == pytest.approx(1.0)
        assert nu[0] == pytest.approx(0.5)

    def test_probit_zero_mean(self):
        z, nu = output_moments(np.array([1 + 1j]), np.array([0j]), np.array([1.0]), 1.0, Quantizer.ONE_BIT)
        assert z[0].real == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert z[0].imag == pytest.approx(1 / math.sqrt(2 * math.pi))
        ratio = 2 / math.sqrt(2 * math.pi)
        assert nu[0] == pytest.approx(2 * (0.5 - 0.25 * ratio ** 2))

    def test_probit_sign_flips_mean(self):
        z, _ = output_moments(np.array([-1 - 1j]), np.array([0j]), np.array([1.0]), 1.0, Quantizer.ONE_BIT)
        assert z[0].real < 0 and z[0].imag < 0

    def test_probit_extreme_stays_finite(self):
        z, nu = output_moments(np.array([1 + 1j]), np.array([-60 - 60j]), np.array([1.0]), 0.01, "1")
        assert np.isfinite(z[0]) and np.isfinite(nu[0]) and nu[0] >= 0


class TestInputMoments:
    def test_dense_prior_is_gaussian_shrinkage(self):
        r = np.array([1 + 1j, -2j])
        nu = np.array([0.5, 1.0])
        x, v, pi = input_moments_bg(r, nu, 0.0, 2.0)
        np.testing.assert_allclose(x, r * 2 / (2 + nu))
        np.testing.assert_allclose(v, 2 * nu / (2 + nu))
        np.testing.assert_array_equal(pi, 1.0)

    def test_always_zero_prior(self):
        x, v, pi = input_moments_bg(np.array([3 + 0j]), np.array([1.0]), 1.0, 2.0)
        assert x[0] == 0 and v[0] == 0 and pi[0] == 0

    def test_large_input_is_active(self):
        _, _, pi = input_moments_bg(np.array([50 + 0j]), np.array([0.1]), 0.9, 10.0)
        assert pi[0] == pytest.approx(1.0)

    def test_small_input_is_shrunk(self):
        x, _, pi = input_moments_bg(np.array([1e-3 + 0j]), np.array([0.1]), 0.9, 10.0)
        assert pi[0] < 0.1
        assert abs(x[0]) < 1e-4


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------


class TestEmUpdate:
    def _state(self, pi_b, pi_c):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(7))
        return dataclasses.replace(state, pi_b=np.full_like(state.pi_b, pi_b),
                                   pi_c=np.full_like(state.pi_c, pi_c))

    def test_all_active(self):
        new = em_update(self._state(1.0, 1.0), _hp())
        assert new.lambda_b == pytest.approx(0.0)
        assert new.lambda_c == pytest.approx(0.0)

    def test_all_inactive_keeps_variance(self):
        hp = _hp()
        new = em_update(self._state(0.0, 0.0), hp)
        assert new.lambda_b == pytest.approx(1.0, abs=1e-8)
        assert new.lambda_b < 1.0
        assert new.sigma_b2 == hp.sigma_b2
        assert new.sigma_c2 == hp.sigma_c2

    def test_hand_computed(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(8))
        Np = state.Np
        pi_b = np.zeros(Np)
        pi_b[:4] = 0.5
        q_hat = np.full(Np, 2.0 + 0j)
        nu_q = np.full(Np, 1.0)
        state = dataclasses.replace(state, pi_b=pi_b, q_hat=q_hat, nu_q=nu_q)
        hp = _hp()
        new = em_update(state, hp)
        assert new.lambda_b == pytest.approx(1 - 2.0 / Np)
        s2 = hp.sigma_b2
        m = 2.0 * s2 / (s2 + 1.0)
        v = s2 / (s2 + 1.0)
        assert new.sigma_b2 == pytest.approx(v + m ** 2)
        assert new.sigma2 == hp.sigma2


# ---------------------------------------------------------------------------
# Iteration and driver
# ---------------------------------------------------------------------------


class TestStep:
    def test_advances_iteration(self):
        _, F, received = _small_problem()
        state = initial_state(received.Nrx, F, _hp(), np.random.default_rng(0))
        nxt = step(state, F, received, _hp())
        assert nxt.t == 2
        assert nxt.is_finite()
        assert np.all(nxt.nu_b > 0) and np.all(nxt.nu_c > 0)

    def test_damping_skipped_on_first_iteration(self):
        _, F, received = _small_problem()
        state = initial_state(received.Nrx, F, _hp(), np.random.default_rng(0))
        a = step(state, F, received, _hp(), damping=0.3)
        b = step(state, F, received, _hp(), damping=1.0)
        np.testing.assert_allclose(a.c_hat, b.c_hat)

    def test_damping_blends_later_iterations(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(9))
        full = step(state, F, received, _hp(), damping=1.0)
        half = step(state, F, received, _hp(), damping=0.5)
        np.testing.assert_allclose(half.s_hat, 0.5 * full.s_hat + 0.5 * state.s_hat)
        np.testing.assert_allclose(half.nu_s, 0.5 * full.nu_s + 0.5 * state.nu_s)
        assert not np.allclose(half.c_hat, full.c_hat)

    def test_input_state_untouched(self):
        _, F, received = _small_problem()
        state = random_state(received.Nrx, F, np.random.default_rng(10))
        before = state.copy()
        step(state, F, received, _hp(), damping=0.3)
        np.testing.assert_array_equal(state.c_hat, before.c_hat)
        np.testing.assert_array_equal(state.s_hat, before.s_hat)


class TestRun:
    def _cfg(self, **kw):
        base = dict(t_max=30, em_outer_iters=2, restarts=1)
        base.update(kw)
        return GampConfig(**base)

    def test_deterministic(self):
        _, F, received = _small_problem()
        hp = Hyperparams.default_for(16, 2, received.sigma2)
        a = run(received, F, hp, self._cfg())
        b = run(received, F, hp, self._cfg())
        np.testing.assert_array_equal(a.b_hat, b.b_hat)
        np.testing.assert_array_equal(a.c_hat, b.c_hat)

    def test_trace_bookkeeping(self):
        _, F, received = _small_problem()
        hp = Hyperparams.default_for(16, 2, received.sigma2)
        result = run(received, F, hp, self._cfg())
        assert result.iterations == len(result.trace)
        assert math.isinf(result.trace[0].residual)
        assert result.trace[0].damping == 1.0
        assert all(row.damping == 0.3 for row in result.trace[1:] if row.em_pass == 0)
        assert result.C_hat.shape == (4, 8)
        assert result.restarts == 0

    def test_dimension_mismatch(self):
        _, F, received = _small_problem()
        short = ReceivedBlock(received.Y[:, :8], received.q, received.sigma2)
        with pytest.raises(InvalidDimensionError):
            run(short, F, _hp(), self._cfg())

    def test_zero_data_shrinks_channel(self):
        _, F, received = _small_problem()
        zero = ReceivedBlock(np.zeros_like(received.Y), Quantizer.FULL, 0.01)
        hp = Hyperparams.default_for(16, 2, 0.01)
        cfg = self._cfg(t_max=60)
        start = initial_state(zero.Nrx, F, hp, np.random.default_rng([cfg.init_seed, 0]))
        result = run(zero, F, hp, cfg)
        assert np.linalg.norm(result.c_hat) < 0.5 * np.linalg.norm(start.c_hat)

    def test_divergence_after_restarts(self, monkeypatch):
        def broken(state, *args, **kwargs):
            return dataclasses.replace(state, b_hat=state.b_hat * np.nan, t=state.t + 1)

        monkeypatch.setattr(pbigamp, "step", broken)
        _, F, received = _small_problem()
        with pytest.raises(SolverDivergenceError) as info:
            run(received, F, _hp(), self._cfg(restarts=2))
        assert info.value.attempts == 3

    def test_restart_recovers(self, monkeypatch):
        real_step = pbigamp.step
        calls = {"n": 0}

        def flaky(state, *args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                return dataclasses.replace(state, c_hat=state.c_hat * np.inf, t=state.t + 1)
            return real_step(state, *args, **kwargs)

        monkeypatch.setattr(pbigamp, "step", flaky)
        _, F, received = _small_problem()
        result = run(received, F, _hp(), self._cfg())
        assert result.restarts == 1

    def test_blowup_restarts_with_half_damping(self, monkeypatch):
        real_step = pbigamp.step
        calls = {"n": 0}

        def exploding(state, *args, **kwargs):
            calls["n"] += 1
            nxt = real_step(state, *args, **kwargs)
            if calls["n"] == 1:
                return dataclasses.replace(nxt, c_hat=nxt.c_hat * 1e6)
            return nxt

        monkeypatch.setattr(pbigamp, "step", exploding)
        _, F, received = _small_problem()
        result = run(received, F, Hyperparams.default_for(16, 2, received.sigma2), self._cfg())
        assert result.restarts == 1
        assert all(row.damping == 0.15 for row in result.trace[1:] if row.em_pass == 0)

    def test_degenerate_fixed_point_is_not_converged(self, monkeypatch, caplog):
        def collapsing(state, *args, **kwargs):
            return dataclasses.replace(state, c_hat=np.zeros_like(state.c_hat), t=state.t + 1)

        monkeypatch.setattr(pbigamp, "step", collapsing)
        _, F, received = _small_problem()
        with caplog.at_level("WARNING", logger="pbigamp"):
            result = run(received, F, Hyperparams.default_for(16, 2, received.sigma2),
                         self._cfg(restarts=2))
        assert result.converged is False
        assert np.all(result.c_hat == 0)
        assert sum("degenerate" in r.message for r in caplog.records) == 3

    def test_tau_stop_monotone(self):
        _, F, received = _small_problem(seed=3)
        hp = Hyperparams.default_for(16, 2, received.sigma2)
        iters = [run(received, F, hp, self._cfg(t_max=200, em_outer_iters=1, restarts=0,
                                                tau_stop=tau)).iterations
                 for tau in (1e-2, 1e-4, 1e-6, 1e-9)]
        assert iters == sorted(iters)

    def test_variances_stay_positive(self):
        _, F, received = _small_problem(seed=5)
        hp = Hyperparams.default_for(16, 2, received.sigma2)
        state = initial_state(received.Nrx, F, hp, np.random.default_rng(0))
        for _ in range(80):
            state = step(state, F, received, hp, damping=0.3)
            for name in ("nu_b", "nu_c", "nu_p", "nu_r", "nu_q"):
                assert np.all(getattr(state, name) > 0), name

    def test_noiseless_small_recovery(self):
        rng = np.random.default_rng(11)
        C = sample_sparse_angle_delay(4, 4, 2, 4, rng)
        T = gen_training(TrainingKind.IID_QPSK, 4, 64, 1.0, rng)
        F = assemble_F(T, 2)
        d = gen_phase_errors(PhaseParams.from_bins(2, 64), rng)
        received = observe(forward_factored(C, F, to_spectrum(d)), 0.0, Quantizer.FULL, rng)
        result = run(received, F, Hyperparams.default_for(64, 2, 0.0))
        assert np.all(np.isfinite(result.c_hat))
        assert np.max(np.abs(result.C_hat)) < 10 * np.max(np.abs(C.C))
        assert 10 * math.log10(_nmse(C.C, result.C_hat)) <= -30

    def test_write_trace(self, tmp_path):
        _, F, received = _small_problem()
        result = run(received, F, Hyperparams.default_for(16, 2, received.sigma2), self._cfg(t_max=5))
        path = tmp_path / "trace.csv"
        write_trace_csv(result.trace, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["em_pass", "iteration", "residual"]
        assert len(rows) == len(result.trace) + 1


class TestNoiseFloor:
    def test_full_resolution_floor_tracks_signal_power(self):
        _, F, received = _small_problem(sigma2=0.0)
        hp = Hyperparams.default_for(16, 2, 0.0)
        cfg = GampConfig()
        expected = cfg.relative_noise_floor * float(np.mean(np.abs(received.Y) ** 2))
        assert pbigamp.effective_hyperparams(received, hp, cfg).sigma2 == pytest.approx(expected)
        result = run(received, F, hp, GampConfig(t_max=20, em_outer_iters=2, restarts=0))
        assert result.hyperparams.sigma2 == pytest.approx(expected)

    def test_configured_noise_above_floor_kept(self):
        _, _, received = _small_problem(sigma2=0.5)
        hp = Hyperparams.default_for(16, 2, 0.5)
        assert pbigamp.effective_hyperparams(received, hp, GampConfig()) is hp

    def test_one_bit_unchanged(self):
        _, _, received = _small_problem(q=Quantizer.ONE_BIT, sigma2=0.0)
        hp = Hyperparams.default_for(16, 2, 0.0)
        assert pbigamp.effective_hyperparams(received, hp, GampConfig()) is hp


class TestFitAssessment:
    def test_truth_fits(self):
        rng = np.random.default_rng(4)
        C = sample_sparse_angle_delay(4, 4, 2, 3, rng)
        F = assemble_F(gen_training(TrainingKind.IID_QPSK, 4, 16, 1.0, rng), 2)
        b = to_spectrum(gen_phase_errors(PhaseParams.from_bins(1, 16), rng))
        received = observe(forward_factored(C, F, b), 0.01, Quantizer.FULL, rng)
        score, degenerate = pbigamp.assess_fit(received, pbigamp.plug_in_z(C.C, F, b.b), 0.01)
        assert not degenerate
        assert score > 0.5

    def test_zero_estimate_degenerate(self):
        _, _, received = _small_problem(sigma2=0.01)
        score, degenerate = pbigamp.assess_fit(received, np.zeros(received.y.size, complex), 0.01)
        assert degenerate
        assert score == pytest.approx(0.0)

    def test_zero_data_never_degenerate(self):
        _, _, received = _small_problem()
        zero = ReceivedBlock(np.zeros_like(received.Y), Quantizer.FULL, 0.01)
        _, degenerate = pbigamp.assess_fit(zero, 0.01 * np.ones(zero.y.size, complex), 0.01)
        assert not degenerate

    def test_one_bit_sign_agreement(self):
        _, _, received = _small_problem(q=Quantizer.ONE_BIT, sigma2=0.0)
        score, degenerate = pbigamp.assess_fit(received, received.y, 0.0)
        assert (score, degenerate) == (1.0, False)
        score, degenerate = pbigamp.assess_fit(received, -received.y, 0.0)
        assert (score, degenerate) == (0.0, True)

    def test_plug_in_matches_forward_model(self):
        C, F, _ = _small_problem()
        d = gen_phase_errors(PhaseParams.from_bins(1, 16), np.random.default_rng(0))
        b = to_spectrum(d)
        expected = forward_factored(C, F, b).Z.reshape(-1, order="F")
        np.testing.assert_allclose(pbigamp.plug_in_z(C.C, F, b.b), expected, atol=1e-12)


@pytest.mark.slow
class TestRecovery:
    def test_noiseless_full_resolution_desk_scale(self):
        rng = np.random.default_rng(2024)
        C = sample_sparse_angle_delay(8, 8, 4, 8, rng)
        T = gen_training(TrainingKind.IID_QPSK, 8, 256, 1.0, rng)
        F = assemble_F(T, 4)
        d = gen_phase_errors(PhaseParams.from_bins(3, 256), rng)
        received = observe(forward_factored(C, F, to_spectrum(d)), 0.0, Quantizer.FULL, rng)
        result = run(received, F, Hyperparams.default_for(256, 4, 0.0))
        assert 10 * math.log10(_nmse(C.C, result.C_hat)) <= -40

    def test_circulant_training_fails(self):
        rng = np.random.default_rng(7)
        C = sample_sparse_angle_delay(8, 32, 1, 8, rng)
        b = to_spectrum(gen_phase_errors(PhaseParams.from_bins(3, 32), rng))
        hp = Hyperparams.default_for(32, 1, 0.0)

        def nmse_db(kind):
            F = assemble_F(gen_training(kind, 32, 32, 1.0, np.random.default_rng(8)), 1)
            received = observe(forward_factored(C, F, b), 0.0, Quantizer.FULL,
                               np.random.default_rng(9))
            return 10 * math.log10(_nmse(C.C, run(received, F, hp).C_hat))

        assert nmse_db(TrainingKind.IID_QPSK) <= -40
        assert nmse_db(TrainingKind.SHIFTED_ZC) >= -3
