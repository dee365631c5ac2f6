"""Tests for channel generation and the angle-delay transform."""

from __future__ import annotations

import math

import numpy as np
import pytest

from channel import (
    AngleDelayChannel,
    ChannelGenParams,
    RaySet,
    WidebandChannel,
    calibrate_normalization,
    from_angle_delay,
    generate_channel,
    normalization_constant,
    on_grid_angle,
    sample_rays,
    sample_sparse_angle_delay,
    synthesize_taps,
    to_angle_delay,
)
from errors import DegenerateInputError, InvalidArgumentError, InvalidDimensionError
from kernels import dft_matrix


def _params(**overrides) -> ChannelGenParams:
    base = dict(n_clusters=4, rays_per_cluster=10, angle_spread=math.radians(10),
                delay_spread_max=30e-9, Nrx=4, Ntx=4, L=4, T=10e-9)
    base.update(overrides)
    return ChannelGenParams(**base)


# ---------------------------------------------------------------------------
# Parameters and rays
# ---------------------------------------------------------------------------


class TestParams:
    def test_default_is_desk_scale(self):
        p = ChannelGenParams.create_default()
        assert (p.Nrx, p.Ntx, p.L) == (8, 8, 4)

    def test_rejects_zero_antennas(self):
        with pytest.raises(InvalidDimensionError):
            _params(Nrx=0)

    def test_rejects_negative_spread(self):
        with pytest.raises(InvalidArgumentError):
            _params(angle_spread=-0.1)

    def test_laplacian_scale(self):
        p = _params(angle_spread=0.2)
        assert p.laplacian_scale * math.sqrt(2) == pytest.approx(0.2)


class TestSampleRays:
    def test_ray_count(self):
        rays = sample_rays(_params(), np.random.default_rng(0))
        assert len(rays) == 40
        assert rays.n_clusters == 4

    def test_zero_spread_single_ray_at_center(self):
        p = _params(rays_per_cluster=1, angle_spread=0.0)
        rays = sample_rays(p, np.random.default_rng(1))
        for cluster in rays.clusters:
            assert len(cluster) == 1
            assert -math.pi / 2 <= cluster[0].aoa <= math.pi / 2

    def test_zero_spread_rays_share_angles(self):
        p = _params(rays_per_cluster=3, angle_spread=0.0)
        rays = sample_rays(p, np.random.default_rng(2))
        for cluster in rays.clusters:
            assert len({r.aoa for r in cluster}) == 1
            assert len({r.aod for r in cluster}) == 1

    def test_same_seed_same_rays(self):
        a = sample_rays(_params(), np.random.default_rng(7))
        b = sample_rays(_params(), np.random.default_rng(7))
        assert a == b

    def test_delays_inside_window(self):
        p = _params()
        _, delays, _, _ = sample_rays(p, np.random.default_rng(3)).as_arrays()
        assert np.all(delays >= 0) and np.all(delays <= (p.L - 1) * p.T)


# ---------------------------------------------------------------------------
# Tap synthesis
# ---------------------------------------------------------------------------


class TestSynthesizeTaps:
    def test_broadside_zero_delay(self):
        p = _params()
        h = synthesize_taps(RaySet.single(), p)
        np.testing.assert_allclose(h.taps[0], np.ones((4, 4)), atol=1e-12)
        np.testing.assert_allclose(h.taps[1:], 0, atol=1e-12)

    def test_integer_delay_moves_energy(self):
        p = _params()
        h = synthesize_taps(RaySet.single(delay=p.T), p)
        np.testing.assert_allclose(h.taps[0], 0, atol=1e-12)
        assert np.linalg.norm(h.taps[1]) == pytest.approx(4.0)

    def test_half_sample_delay_spreads(self):
        p = _params()
        h = synthesize_taps(RaySet.single(delay=p.T / 2), p)
        norms = np.array([np.linalg.norm(h.taps[l]) for l in range(p.L)])
        expected = 4.0 * np.abs(np.sinc(np.arange(p.L) - 0.5))
        np.testing.assert_allclose(norms, expected, rtol=1e-12)
        assert np.all(norms > 0)

    def test_generate_applies_normalization(self):
        p = _params()
        h1 = generate_channel(p, np.random.default_rng(4))
        h2 = generate_channel(p, np.random.default_rng(4), normalization=2.0)
        np.testing.assert_allclose(h2.taps, 2.0 * h1.taps)


# ---------------------------------------------------------------------------
# Angle-delay transform
# ---------------------------------------------------------------------------


class TestAngleDelay:
    def test_single_dft_atom(self):
        N = 4
        U = dft_matrix(N)
        E = np.zeros((N, N))
        E[0, 0] = 1.0
        taps = np.zeros((2, N, N), dtype=complex)
        taps[0] = U @ E @ U.conj().T
        c = to_angle_delay(WidebandChannel(taps))
        expected = np.zeros((N, 2 * N))
        expected[0, 0] = 1.0
        np.testing.assert_allclose(c.C, expected, atol=1e-12)

    def test_matches_explicit_matrices(self):
        rng = np.random.default_rng(5)
        taps = rng.standard_normal((3, 4, 6)) + 1j * rng.standard_normal((3, 4, 6))
        c = to_angle_delay(WidebandChannel(taps))
        Ur, Ut = dft_matrix(4), dft_matrix(6)
        for ell in range(3):
            np.testing.assert_allclose(c.block(ell), Ur.conj().T @ taps[ell] @ Ut, atol=1e-12)

    def test_inverse_pair(self):
        rng = np.random.default_rng(6)
        taps = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))
        back = from_angle_delay(to_angle_delay(WidebandChannel(taps)))
        np.testing.assert_allclose(back.taps, taps, atol=1e-12)

    def test_on_grid_ray_is_one_sparse(self):
        p = _params(Nrx=8, Ntx=8, L=1)
        rays = RaySet.single(aoa=on_grid_angle(2, 8), aod=on_grid_angle(-3, 8))
        C = to_angle_delay(synthesize_taps(rays, p)).C
        big = np.abs(C) > 1e-10 * np.abs(C).max()
        assert big.sum() == 1

    def test_energy_preserved(self):
        h = generate_channel(_params(), np.random.default_rng(8))
        assert to_angle_delay(h).energy == pytest.approx(h.energy)

    def test_vec_roundtrip(self):
        rng = np.random.default_rng(9)
        C = rng.standard_normal((3, 8)) + 0j
        ch = AngleDelayChannel(C, L=2)
        np.testing.assert_array_equal(AngleDelayChannel.from_vec(ch.vec, 3, 2).C, C)
        assert ch.vec[1] == C[1, 0]


# ---------------------------------------------------------------------------
# Exact-sparsity sampler and normalization
# ---------------------------------------------------------------------------


class TestSparseSampler:
    def test_exact_support(self):
        c = sample_sparse_angle_delay(8, 8, 4, 8, np.random.default_rng(0))
        assert c.nnz == 8
        assert c.C.shape == (8, 32)

    def test_rejects_large_k(self):
        with pytest.raises(InvalidArgumentError):
            sample_sparse_angle_delay(2, 2, 1, 5, np.random.default_rng(0))

    def test_mean_energy(self):
        rng = np.random.default_rng(1)
        energies = [sample_sparse_angle_delay(4, 4, 2, 4, rng).energy for _ in range(4000)]
        assert np.mean(energies) == pytest.approx(16.0, rel=0.05)


class TestNormalization:
    def test_single_channel(self):
        C = np.full((2, 2), 2.0 + 0j)   # ||C||^2 = 16 = 4 * Nrx * Ntx
        assert normalization_constant([AngleDelayChannel(C, 1)]) == pytest.approx(0.5)

    def test_already_normalized(self):
        C = np.eye(3, dtype=complex) * math.sqrt(3)
        assert normalization_constant([AngleDelayChannel(C, 1)]) == pytest.approx(1.0)

    def test_mixed(self):
        a = AngleDelayChannel(np.ones((2, 2), dtype=complex), 1)
        b = AngleDelayChannel(3 * np.ones((2, 2), dtype=complex), 1)
        assert normalization_constant([a, b]) == pytest.approx(math.sqrt(4 / 20))

    def test_zero_ensemble(self):
        with pytest.raises(DegenerateInputError):
            normalization_constant([AngleDelayChannel(np.zeros((2, 2), dtype=complex), 1)])

    def test_empty_ensemble(self):
        with pytest.raises(DegenerateInputError):
            normalization_constant([])

    def test_calibration_normalizes_energy(self):
        p = _params()
        s = calibrate_normalization(p, np.random.default_rng(10), realizations=200)
        rng = np.random.default_rng(11)
        energies = [to_angle_delay(generate_channel(p, rng, s)).energy for _ in range(400)]
        assert np.mean(energies) == pytest.approx(p.Nrx * p.Ntx, rel=0.2)
