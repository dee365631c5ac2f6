"""Tests for the CFO / phase-noise process."""

from __future__ import annotations

import math

import numpy as np
import pytest

from errors import AliasingError, InvalidArgumentError
from phase import (
    PhaseErrorVector,
    PhaseParams,
    PhaseSpectrum,
    from_spectrum,
    gen_phase_errors,
    ppm_to_digital,
    to_spectrum,
    top_bin_energy_fraction,
)


class TestPhaseParams:
    def test_aliasing_rejected(self):
        with pytest.raises(AliasingError):
            PhaseParams(epsilon=math.pi, beta=0.0, Np=16)

    def test_negative_beta_rejected(self):
        with pytest.raises(InvalidArgumentError):
            PhaseParams(epsilon=0.0, beta=-0.1, Np=16)

    def test_bins_roundtrip(self):
        p = PhaseParams.from_bins(22.5, 1024)
        assert p.epsilon == pytest.approx(45 * math.pi / 1024)
        assert p.cfo_bins == pytest.approx(22.5)


class TestGenPhaseErrors:
    def test_no_offset_no_noise(self):
        d = gen_phase_errors(PhaseParams(0.0, 0.0, 8), np.random.default_rng(0))
        np.testing.assert_allclose(d.d, np.ones(8))

    def test_on_grid_tone(self):
        Np, k = 32, 3
        d = gen_phase_errors(PhaseParams(2 * math.pi * k / Np, 0.0, Np), np.random.default_rng(0))
        n = np.arange(1, Np + 1)
        np.testing.assert_allclose(d.d, np.exp(2j * math.pi * k * n / Np), atol=1e-12)

    def test_random_walk_increment_variance(self):
        beta = 0.067
        d = gen_phase_errors(PhaseParams(0.0, beta, 100_000), np.random.default_rng(1))
        increments = np.angle(d.d[1:] * d.d[:-1].conj())
        assert np.var(increments) == pytest.approx(beta ** 2, rel=0.05)

    def test_unit_modulus(self):
        d = gen_phase_errors(PhaseParams(0.3, 0.1, 256), np.random.default_rng(2))
        np.testing.assert_allclose(np.abs(d.d), 1.0)

    def test_seeded(self):
        p = PhaseParams(0.1, 0.05, 64)
        a = gen_phase_errors(p, np.random.default_rng(5)).d
        b = gen_phase_errors(p, np.random.default_rng(5)).d
        np.testing.assert_array_equal(a, b)


class TestSpectrum:
    def test_all_ones(self):
        b = to_spectrum(PhaseErrorVector(np.ones(16, dtype=complex)))
        expected = np.zeros(16)
        expected[0] = 4.0
        np.testing.assert_allclose(b.b, expected, atol=1e-12)

    def test_on_grid_tone_is_one_hot(self):
        Np, k = 64, 5
        d = gen_phase_errors(PhaseParams(2 * math.pi * k / Np, 0.0, Np), np.random.default_rng(0))
        mag = np.abs(to_spectrum(d).b)
        assert mag[k] == pytest.approx(math.sqrt(Np))
        mask = np.ones(Np, dtype=bool)
        mask[k] = False
        assert np.all(mag[mask] < 1e-9)

    def test_inverse(self):
        rng = np.random.default_rng(3)
        b = PhaseSpectrum(rng.standard_normal(12) + 1j * rng.standard_normal(12))
        np.testing.assert_allclose(to_spectrum(from_spectrum(b)).b, b.b, atol=1e-12)

    def test_small_cfo_concentrates_energy(self):
        Np = 1024
        d = gen_phase_errors(PhaseParams.from_bins(22.5, Np), np.random.default_rng(0))
        assert top_bin_energy_fraction(to_spectrum(d), k=2) >= 0.8


class TestPpmConversion:
    def test_zero(self):
        assert ppm_to_digital(0.0, 38e9, 10e-9) == 0.0

    def test_forty_ppm(self):
        assert ppm_to_digital(40.0, 38e9, 10e-9) == pytest.approx(0.09550, abs=1e-5)

    def test_off_grid_example(self):
        # 2.2 MHz at 38 GHz is about 58 ppm
        eps = ppm_to_digital(2.2e6 / 38e9 * 1e6, 38e9, 10e-9)
        assert eps == pytest.approx(2 * math.pi * 2.2e6 * 1e-8)
        assert eps == pytest.approx(45 * math.pi / 1024, rel=2e-3)

    def test_aliasing(self):
        with pytest.raises(AliasingError):
            ppm_to_digital(2000.0, 38e9, 10e-9)
