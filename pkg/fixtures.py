"""
fixtures.py — Saving and loading regression fixtures

Two formats:

  * complex CSV: one matrix per file, row-major, each entry written as a
    (real, imag) column pair. A 3-D array (e.g. channel taps, shape
    (L, Nrx, Ntx)) is written as its blocks l = 0..L-1 stacked vertically;
    the original shape is kept in the header line.
  * bundle: numpy .npz holding C, T, Y, sigma2, q and epsilon for a whole
    problem instance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from channel import AngleDelayChannel
from errors import InvalidDimensionError
from measurement import Quantizer, ReceivedBlock
from training import TrainingBlock

logger = logging.getLogger(__name__)

_SHAPE_PREFIX = "shape="


def save_complex_csv(x: np.ndarray, path: str | Path) -> None:
    x = np.asarray(x, dtype=complex)
    if x.ndim not in (1, 2, 3):
        raise InvalidDimensionError("ndim", x.ndim)
    flat = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x.reshape(1, -1)
    pairs = np.empty((flat.shape[0], 2 * flat.shape[1]))
    pairs[:, 0::2] = flat.real
    pairs[:, 1::2] = flat.imag
    header = _SHAPE_PREFIX + ",".join(str(n) for n in x.shape)
    np.savetxt(path, pairs, delimiter=",", header=header, fmt="%.17g")


def load_complex_csv(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline().lstrip("#").strip()
    if not first.startswith(_SHAPE_PREFIX):
        raise ValueError(f"{path}: missing shape header")
    shape = tuple(int(n) for n in first[len(_SHAPE_PREFIX):].split(","))
    pairs = np.loadtxt(path, delimiter=",", ndmin=2)
    values = pairs[:, 0::2] + 1j * pairs[:, 1::2]
    return values.reshape(shape)


@dataclass(frozen=True)
class FixtureBundle:
    C: AngleDelayChannel
    T: TrainingBlock
    received: ReceivedBlock
    epsilon: float


def save_bundle(path: str | Path, C: AngleDelayChannel, T: TrainingBlock,
                received: ReceivedBlock, epsilon: float) -> None:
    np.savez(
        path,
        C=C.C, L=C.L, T=T.T, power=T.power,
        Y=received.Y, sigma2=received.sigma2, q=received.q.value,
        epsilon=epsilon,
    )
    logger.info("saved fixture bundle %s", path)


def load_bundle(path: str | Path) -> FixtureBundle:
    with np.load(path) as data:
        return FixtureBundle(
            C=AngleDelayChannel(data["C"], int(data["L"])),
            T=TrainingBlock(data["T"], float(data["power"])),
            received=ReceivedBlock(data["Y"], Quantizer.parse(str(data["q"])), float(data["sigma2"])),
            epsilon=float(data["epsilon"]),
        )
