"""
channel.py — Clustered wideband mmWave channel model

Draws clustered multipath (gain, delay, angle-of-arrival, angle-of-departure)
for half-wavelength uniform linear arrays, turns the rays into L sinc-shaped
channel taps H[0..L-1], and maps between those antenna-domain taps and the
angle-delay matrix

    C = [U_Nrx^H H[0] U_Ntx, U_Nrx^H H[1] U_Ntx, ..., U_Nrx^H H[L-1] U_Ntx]

which is the sparse unknown the solver recovers. Energy normalization is an
ensemble-level scale so that E||C||_F^2 = Nrx * Ntx.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from errors import DegenerateInputError, InvalidArgumentError, InvalidDimensionError
from kernels import sinc, vandermonde

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Generation parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelGenParams:
    n_clusters: int
    rays_per_cluster: int
    angle_spread: float        # radians, std-dev of the Laplacian offsets
    delay_spread_max: float    # seconds, cluster delays ~ U[0, max]
    Nrx: int
    Ntx: int
    L: int
    T: float                   # symbol period, seconds

    def __post_init__(self) -> None:
        for name in ("n_clusters", "rays_per_cluster", "Nrx", "Ntx", "L"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidDimensionError(name, value)
        if self.T <= 0:
            raise InvalidArgumentError("T", self.T, "symbol period must be positive")
        if self.angle_spread < 0:
            raise InvalidArgumentError("angle_spread", self.angle_spread, "must be >= 0")
        if self.delay_spread_max < 0:
            raise InvalidArgumentError("delay_spread_max", self.delay_spread_max, "must be >= 0")

    @property
    def laplacian_scale(self) -> float:
        """Scale b of the Laplacian whose std-dev b*sqrt(2) is angle_spread."""
        return self.angle_spread / math.sqrt(2.0)

    @classmethod
    def create_default(cls) -> ChannelGenParams:
        """Desk-scale setup: 8x8 arrays, 4 taps, 4 clusters of 5 rays."""
        return cls(
            n_clusters=4,
            rays_per_cluster=5,
            angle_spread=math.radians(15.0),
            delay_spread_max=30e-9,
            Nrx=8,
            Ntx=8,
            L=4,
            T=10e-9,
        )


# ---------------------------------------------------------------------------
# Rays
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ray:
    gain: complex
    delay: float   # seconds
    aoa: float     # radians
    aod: float     # radians


@dataclass(frozen=True)
class RaySet:
    clusters: tuple[tuple[Ray, ...], ...]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def rays(self) -> list[Ray]:
        return [ray for cluster in self.clusters for ray in cluster]

    def __len__(self) -> int:
        return sum(len(c) for c in self.clusters)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(gains, delays, aoas, aods) as flat arrays."""
        rays = self.rays
        gains = np.array([r.gain for r in rays], dtype=complex)
        delays = np.array([r.delay for r in rays], dtype=float)
        aoas = np.array([r.aoa for r in rays], dtype=float)
        aods = np.array([r.aod for r in rays], dtype=float)
        return gains, delays, aoas, aods

    @classmethod
    def single(cls, gain: complex = 1.0, delay: float = 0.0,
               aoa: float = 0.0, aod: float = 0.0) -> RaySet:
        return cls(clusters=((Ray(complex(gain), delay, aoa, aod),),))


def sample_rays(params: ChannelGenParams, rng: np.random.Generator) -> RaySet:
    """Draw one clustered multipath realization.

    Cluster-center AoA/AoD are uniform on (-pi/2, pi/2), within-cluster
    angle offsets are Laplacian, gains are IID CN(0, 1), cluster delays are
    uniform on [0, delay_spread_max] and each ray adds a U[0, 2T] offset,
    clipped to the modeled window [0, (L-1)T].
    """
    n_rays = params.rays_per_cluster
    max_delay = (params.L - 1) * params.T
    scale = params.laplacian_scale
    clusters: list[tuple[Ray, ...]] = []
    for _ in range(params.n_clusters):
        center_aoa = rng.uniform(-math.pi / 2, math.pi / 2)
        center_aod = rng.uniform(-math.pi / 2, math.pi / 2)
        center_delay = rng.uniform(0.0, params.delay_spread_max)
        if scale > 0:
            aoa = center_aoa + rng.laplace(0.0, scale, n_rays)
            aod = center_aod + rng.laplace(0.0, scale, n_rays)
        else:
            aoa = np.full(n_rays, center_aoa)
            aod = np.full(n_rays, center_aod)
        jitter = rng.uniform(0.0, 2.0 * params.T, n_rays)
        delays = np.clip(center_delay + jitter, 0.0, max_delay)
        gains = (rng.standard_normal(n_rays) + 1j * rng.standard_normal(n_rays)) / math.sqrt(2.0)
        clusters.append(tuple(
            Ray(complex(g), float(t), float(a), float(d))
            for g, t, a, d in zip(gains, delays, aoa, aod)
        ))
    return RaySet(clusters=tuple(clusters))


def on_grid_angle(k: int, n: int) -> float:
    """Angle theta whose spatial frequency pi*sin(theta) is the DFT bin 2*pi*k/n."""
    if n < 1:
        raise InvalidDimensionError("N", n)
    centered = ((k + n // 2) % n) - n // 2
    return math.asin(max(-1.0, min(1.0, 2.0 * centered / n)))


# ---------------------------------------------------------------------------
# Channel representations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WidebandChannel:
    """Antenna-domain taps, shape (L, Nrx, Ntx)."""
    taps: np.ndarray
    T: float = 10e-9

    def __post_init__(self) -> None:
        if self.taps.ndim != 3:
            raise InvalidDimensionError("taps.ndim", self.taps.ndim)

    @property
    def L(self) -> int:
        return self.taps.shape[0]

    @property
    def Nrx(self) -> int:
        return self.taps.shape[1]

    @property
    def Ntx(self) -> int:
        return self.taps.shape[2]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))


@dataclass(frozen=True)
class AngleDelayChannel:
    """C = [C_0 ... C_{L-1}], shape (Nrx, Ntx*L); c = vec(C) column-major."""
    C: np.ndarray
    L: int

    def __post_init__(self) -> None:
        if self.C.ndim != 2:
            raise InvalidDimensionError("C.ndim", self.C.ndim)
        if self.L < 1 or self.C.shape[1] % self.L:
            raise InvalidDimensionError("L", self.L)

    @property
    def Nrx(self) -> int:
        return self.C.shape[0]

    @property
    def Ntx(self) -> int:
        return self.C.shape[1] // self.L

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.C) ** 2))

    @property
    def vec(self) -> np.ndarray:
        return self.C.reshape(-1, order="F")

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.C))

    def block(self, ell: int) -> np.ndarray:
        return self.C[:, ell * self.Ntx:(ell + 1) * self.Ntx]

    def scaled(self, factor: complex) -> AngleDelayChannel:
        return AngleDelayChannel(self.C * factor, self.L)

    @classmethod
    def from_vec(cls, c: np.ndarray, Nrx: int, L: int) -> AngleDelayChannel:
        c = np.asarray(c)
        if c.size % Nrx:
            raise InvalidDimensionError("len(c)", c.size)
        return cls(c.reshape(Nrx, -1, order="F"), L)


# ---------------------------------------------------------------------------
# Synthesis and transforms
# ---------------------------------------------------------------------------

def synthesize_taps(rays: RaySet, params: ChannelGenParams) -> WidebandChannel:
    """H[l] = sum_r gain_r a_rx(w_r) a_tx(w_t)^H sinc(l - tau_r/T), w = pi sin(theta)."""
    gains, delays, aoas, aods = rays.as_arrays()
    a_rx = np.stack([vandermonde(params.Nrx, math.pi * math.sin(a)) for a in aoas], axis=1)
    a_tx = np.stack([vandermonde(params.Ntx, math.pi * math.sin(a)) for a in aods], axis=1)
    pulse = sinc(np.arange(params.L)[:, None] - delays[None, :] / params.T)
    taps = np.einsum("r,lr,ir,jr->lij", gains, pulse, a_rx, a_tx.conj())
    return WidebandChannel(taps=taps, T=params.T)


def generate_channel(params: ChannelGenParams, rng: np.random.Generator,
                     normalization: float = 1.0) -> WidebandChannel:
    """Rays -> taps, scaled by the ensemble normalization constant."""
    h = synthesize_taps(sample_rays(params, rng), params)
    return WidebandChannel(taps=h.taps * normalization, T=h.T)


def to_angle_delay(h: WidebandChannel) -> AngleDelayChannel:
    blocks = np.fft.fft(np.fft.ifft(h.taps, axis=1, norm="ortho"), axis=2, norm="ortho")
    C = blocks.transpose(1, 0, 2).reshape(h.Nrx, h.L * h.Ntx)
    return AngleDelayChannel(C=C, L=h.L)


def from_angle_delay(c: AngleDelayChannel, T: float = 10e-9) -> WidebandChannel:
    blocks = c.C.reshape(c.Nrx, c.L, c.Ntx).transpose(1, 0, 2)
    taps = np.fft.ifft(np.fft.fft(blocks, axis=1, norm="ortho"), axis=2, norm="ortho")
    return WidebandChannel(taps=taps, T=T)


def sample_sparse_angle_delay(Nrx: int, Ntx: int, L: int, k: int,
                              rng: np.random.Generator) -> AngleDelayChannel:
    """Exactly k-sparse C with IID CN(0, Nrx*Ntx/k) values on a uniform support."""
    size = Nrx * Ntx * L
    if k < 1 or k > size:
        raise InvalidArgumentError("k", k, f"sparsity must lie in [1, {size}]")
    support = rng.choice(size, size=k, replace=False)
    values = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) * math.sqrt(Nrx * Ntx / (2.0 * k))
    c = np.zeros(size, dtype=complex)
    c[support] = values
    return AngleDelayChannel.from_vec(c, Nrx, L)


def normalization_constant(ensemble: Iterable[AngleDelayChannel]) -> float:
    """s such that s*C has empirical mean ||C||_F^2 = Nrx * Ntx."""
    ensemble = list(ensemble)
    if not ensemble:
        raise DegenerateInputError("empty channel ensemble")
    mean_energy = float(np.mean([c.energy for c in ensemble]))
    if mean_energy <= 0.0:
        raise DegenerateInputError("all-zero channel ensemble")
    first = ensemble[0]
    scale = math.sqrt(first.Nrx * first.Ntx / mean_energy)
    logger.debug("normalization over %d channels: %.6g", len(ensemble), scale)
    return scale


def calibrate_normalization(params: ChannelGenParams, rng: np.random.Generator,
                            realizations: int = 500) -> float:
    """normalization_constant over freshly drawn realizations of `params`."""
    ensemble: Sequence[AngleDelayChannel] = [
        to_angle_delay(synthesize_taps(sample_rays(params, rng), params))
        for _ in range(realizations)
    ]
    scale = normalization_constant(ensemble)
    logger.info("calibrated channel normalization %.6g over %d realizations",
                scale, realizations)
    return scale
