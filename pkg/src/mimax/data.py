"""Five-cluster Gaussian mixture on the unit circle, paired noisy views, and
small discrete joint distributions with exactly computable mutual information."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import box_muller, substream


@dataclass(frozen=True)
class GaussianMixtureSpec:
    k: int = 5
    sigma: float = 0.05
    tau: float = 0.1
    n_per_cluster: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.n_per_cluster < 1:
            raise ValueError(f"n_per_cluster must be >= 1, got {self.n_per_cluster}")

    @property
    def n(self) -> int:
        return self.k * self.n_per_cluster

    def centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.k) / self.k
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True)
class PairedBatch:
    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "PairedBatch":
        return PairedBatch(self.x1[idx], self.x2[idx], self.labels[idx])


def generate_dataset(spec: GaussianMixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Base samples (N x 2) and integer labels, cluster by cluster.

    Cluster ``c`` draws from its own stream so changing ``k`` or ``n_per_cluster``
    of one cluster never shifts another cluster's samples.
    """
    centers = spec.centers()
    xs, labels = [], []
    for c in range(spec.k):
        noise = box_muller(substream(spec.seed, "cluster", c), (spec.n_per_cluster, 2))
        xs.append(centers[c] + spec.sigma * noise)
        labels.append(np.full(spec.n_per_cluster, c, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(labels)


def make_paired_views(
    base: np.ndarray, tau: float, seed: int, labels: np.ndarray | None = None, stream: tuple = ()
) -> PairedBatch:
    """Two independently perturbed copies ``x + eps_v`` with ``eps_v ~ N(0, tau^2 I)``.

    ``stream`` extends the stream address, e.g. ``("epoch", 7)`` to redraw noise per epoch.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if labels is None:
        labels = np.zeros(len(base), dtype=np.int64)
    eps1 = box_muller(substream(seed, *stream, "view", 1), base.shape)
    eps2 = box_muller(substream(seed, *stream, "view", 2), base.shape)
    return PairedBatch(base + tau * eps1, base + tau * eps2, np.asarray(labels))


def validation_spec(spec: GaussianMixtureSpec) -> GaussianMixtureSpec:
    """The held-out MI-estimation set: same mixture, seed + 1."""
    return GaussianMixtureSpec(spec.k, spec.sigma, spec.tau, spec.n_per_cluster, spec.seed + 1)


def validation_views(spec: GaussianMixtureSpec) -> PairedBatch:
    vspec = validation_spec(spec)
    base, labels = generate_dataset(vspec)
    return make_paired_views(base, vspec.tau, vspec.seed, labels, stream=("validation",))


# CSV export


def base_csv(base: np.ndarray, labels: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("x0,x1,label\n")
    for (a, b), lbl in zip(base, labels):
        buf.write(f"{a:.17g},{b:.17g},{int(lbl)}\n")
    return buf.getvalue()


def paired_csv(batch: PairedBatch) -> str:
    buf = io.StringIO()
    buf.write("x1a,x1b,x2a,x2b,label\n")
    for p, q, lbl in zip(batch.x1, batch.x2, batch.labels):
        buf.write(f"{p[0]:.17g},{p[1]:.17g},{q[0]:.17g},{q[1]:.17g},{int(lbl)}\n")
    return buf.getvalue()


def read_base_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, :2].copy(), rows[:, 2].astype(np.int64)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# discrete joints


@dataclass(frozen=True)
class DiscreteJoint:
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 2:
            raise ValueError("pmf must be a matrix over (a, b) outcomes")
        if np.any(pmf < 0):
            raise ValueError("pmf entries must be non-negative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf must sum to 1, got {pmf.sum()!r}")
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def from_counts(cls, counts) -> "DiscreteJoint":
        counts = np.asarray(counts, dtype=np.float64)
        return cls(counts / counts.sum())

    def sample(self, gen: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        flat = gen.choice(self.pmf.size, size=n, p=self.pmf.reshape(-1))
        return np.unravel_index(flat, self.pmf.shape)


def exact_mi(joint: DiscreteJoint) -> float:
    """Mutual information in nats, with 0 log 0 = 0."""
    p = joint.pmf
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = np.where(nz, p, 1.0) / np.where(nz, pa * pb, 1.0)
    return float(max(np.sum(np.where(nz, p * np.log(ratio), 0.0)), 0.0))


def entropy(pmf) -> float:
    total = 0.0
    for q in np.asarray(pmf, dtype=np.float64).reshape(-1):
        if q > 0:
            total -= q * math.log(q)
    return total
