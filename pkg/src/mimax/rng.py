"""Seeded, labelled random streams.

All randomness comes from numpy's PCG64 bit generator. A stream is addressed by
the run seed plus a sequence of string labels (``"cluster", 3`` or
``"views", epoch``); labels are mapped to integers with CRC-32 and used as the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so streams never depend
on how many draws other streams made.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *labels) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(lbl) for lbl in labels))
    return np.random.Generator(np.random.PCG64(seq))


def box_muller(gen: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal draws via the Box-Muller transform on ``gen.random()``."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u = gen.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u lies in (0, 1]
    angle = 2.0 * np.pi * u[:, 1]
    z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
    return z[:count].reshape(shape)


def uniform(gen: np.random.Generator, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
    return low + (high - low) * gen.random(shape)
