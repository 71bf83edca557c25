"""Frozen-encoder MI tracking and embedding geometry: nearest-neighbour angle
gaps between cluster centers, center trajectories and collapse diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import objectives as obj
from .autodiff import Tensor
from .data import DiscreteJoint, GaussianMixtureSpec, PairedBatch, exact_mi
from .encoder import EVAL, EncoderParams, encode
from .rng import substream

COLLAPSE_COS = 0.99

TRACE_HEADER = (
    "epoch,mi_cos_dv,mi_infonce,mi_jsd,mean_pairwise_cos,nn_gap_mean,nn_gap_min,nn_gap_max,nn_gap_sd"
)
TRAJECTORY_HEADER = "epoch,cluster,z0,z1,z2"


class NotUnitNormError(ValueError):
    pass


class TraceParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class MITrace:
    epoch: int
    mi_cos_dv: float | None
    mi_infonce: float | None
    mi_jsd: float | None
    mean_pairwise_cos: float
    nn_gap_mean: float
    nn_gap_min: float
    nn_gap_max: float
    nn_gap_sd: float


def estimate_mi_epoch(
    enc_a: EncoderParams, enc_b: EncoderParams, val: PairedBatch, temp=0.1
) -> tuple[float, float, float]:
    """(cos-DV, InfoNCE, JSD) between enc_a(x1) and enc_b(x2), eval mode, one full batch."""
    za = Tensor(encode(enc_a, val.x1, EVAL).data)
    zb = Tensor(encode(enc_b, val.x2, EVAL).data)
    return (
        obj.cos_dv_estimate(za, zb, temp).item(),
        obj.infonce_estimate(za, zb, temp).item(),
        obj.jsd_estimate(za, zb, temp).item(),
    )


def _check_unit(vectors: np.ndarray, tol: float = 1e-6) -> None:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise NotUnitNormError(f"expected unit vectors, got norms {norms}")


def nn_angle_gaps(centers) -> tuple[float, float, float, float]:
    """(mean, min, max, sd) in degrees of each center's angle to its nearest other center."""
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or len(c) < 2:
        raise ValueError("need at least two center vectors")
    _check_unit(c)
    dots = np.clip(c @ c.T, -1.0, 1.0)
    angles = np.degrees(np.arccos(dots))
    np.fill_diagonal(angles, np.inf)
    nearest = angles.min(axis=1)
    return float(nearest.mean()), float(nearest.min()), float(nearest.max()), float(nearest.std())


def track_centers(encoder: EncoderParams, spec: GaussianMixtureSpec) -> np.ndarray:
    """Eval-mode embeddings (k x 3) of the noise-free mixture centers."""
    return encode(encoder, spec.centers(), EVAL).data.copy()


def collapse_score(embeddings) -> tuple[float, np.ndarray]:
    """Mean cosine over pairs i < j (via the Gram identity) and per-dimension std."""
    z = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings, dtype=np.float64)
    n = len(z)
    if n < 2:
        raise ValueError("collapse_score needs at least 2 rows")
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    s = u.sum(axis=0)
    # |sum u_i|^2 = N + 2 * sum_{i<j} u_i . u_j
    mean_cos = (float(s @ s) - n) / (n * (n - 1))
    return mean_cos, z.std(axis=0)


def is_collapsed(mean_pairwise_cos: float) -> bool:
    return mean_pairwise_cos > COLLAPSE_COS


def geometry_row(
    epoch: int, mi: tuple[float | None, float | None, float | None], encoder: EncoderParams,
    val: PairedBatch, spec: GaussianMixtureSpec,
) -> MITrace:
    z = encode(encoder, val.x1, EVAL).data
    mean_cos, _ = collapse_score(z)
    gaps = nn_angle_gaps(track_centers(encoder, spec))
    return MITrace(epoch, *mi, mean_cos, *gaps)


# informativeness bound over finite alphabets


@dataclass
class InformativenessReport:
    mi_z1_z2: float
    mi_x_z1: float
    mi_x_z2: float

    @property
    def slack(self) -> float:
        return min(self.mi_x_z1, self.mi_x_z2) - self.mi_z1_z2

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-12


def _code_matrix(codebook: np.ndarray, n_codes: int) -> np.ndarray:
    m = np.zeros((len(codebook), n_codes))
    m[np.arange(len(codebook)), codebook] = 1.0
    return m


def verify_informativeness_bound(
    p_x, f_codes, g_codes, view1=None, view2=None
) -> InformativenessReport:
    """Exact I(z1; z2), I(x; z1), I(x; z2) for deterministic codebook encoders.

    ``p_x`` is the input pmf over a finite alphabet, ``f_codes``/``g_codes`` map
    each symbol to a code index, and ``view1``/``view2`` are optional
    row-stochastic augmentation channels p(x_v | x) (identity = views are copies).
    """
    p_x = np.asarray(p_x, dtype=np.float64)
    k = len(p_x)
    view1 = np.eye(k) if view1 is None else np.asarray(view1, dtype=np.float64)
    view2 = np.eye(k) if view2 is None else np.asarray(view2, dtype=np.float64)
    f_codes, g_codes = np.asarray(f_codes), np.asarray(g_codes)
    enc1 = view1 @ _code_matrix(f_codes, int(f_codes.max()) + 1)  # p(z1 | x)
    enc2 = view2 @ _code_matrix(g_codes, int(g_codes.max()) + 1)  # p(z2 | x)
    p_x_z1 = p_x[:, None] * enc1
    p_x_z2 = p_x[:, None] * enc2
    p_z1_z2 = enc1.T @ (p_x[:, None] * enc2)
    return InformativenessReport(
        exact_mi(DiscreteJoint(p_z1_z2 / p_z1_z2.sum())),
        exact_mi(DiscreteJoint(p_x_z1 / p_x_z1.sum())),
        exact_mi(DiscreteJoint(p_x_z2 / p_x_z2.sum())),
    )


@dataclass
class BoundCheck:
    """Batch estimates on samples from a known joint versus its exact MI."""

    exact: float
    means: dict[str, float]
    standard_errors: dict[str, float]

    def holds(self, n_se: float = 3.0) -> dict[str, bool]:
        return {k: self.means[k] <= self.exact + n_se * self.standard_errors[k] for k in self.means}


ESTIMATORS = {
    "cos_dv": obj.cos_dv_estimate,
    "infonce": obj.infonce_estimate,
    "jsd": obj.jsd_estimate,
}


def check_estimator_bounds(
    joint: DiscreteJoint, codebook_a, codebook_b, batch: int, temp=0.1, resamples: int = 100, seed: int = 0,
) -> BoundCheck:
    """Draw ``resamples`` batches of symbol pairs, embed them through fixed unit
    codebooks and compare each estimator's mean with exact_mi(joint)."""
    ca, cb = np.asarray(codebook_a, dtype=np.float64), np.asarray(codebook_b, dtype=np.float64)
    _check_unit(ca)
    _check_unit(cb)
    values: dict[str, list[float]] = {k: [] for k in ESTIMATORS}
    for r in range(resamples):
        a, b = joint.sample(substream(seed, "bound-check", r), batch)
        za, zb = Tensor(ca[a]), Tensor(cb[b])
        for name, fn in ESTIMATORS.items():
            values[name].append(fn(za, zb, temp).item())
    means = {k: float(np.mean(v)) for k, v in values.items()}
    ses = {k: float(np.std(v, ddof=1) / np.sqrt(len(v))) for k, v in values.items()}
    return BoundCheck(exact_mi(joint), means, ses)


# CSV round-trip


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def trace_csv(rows: list[MITrace]) -> str:
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in astuple(row)) + "\n")
    return buf.getvalue()


def parse_trace_csv(text: str) -> list[MITrace]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise TraceParseError(f"expected header {TRACE_HEADER!r}", 1)
    names = [f.name for f in fields(MITrace)]
    rows: list[MITrace] = []
    for lineno, record in enumerate(csv.reader(lines[1:]), start=2):
        if not record:
            continue
        if len(record) != len(names):
            raise TraceParseError(f"expected {len(names)} fields, got {len(record)}", lineno)
        try:
            epoch = int(record[0])
            values = [None if cell == "" else float(cell) for cell in record[1:]]
        except ValueError as exc:
            raise TraceParseError(str(exc), lineno) from exc
        if any(v is None for v in values[3:]):
            raise TraceParseError("only MI columns may be empty", lineno)
        if rows and epoch <= rows[-1].epoch:
            raise TraceParseError("epochs must be strictly increasing", lineno)
        rows.append(MITrace(epoch, *values))
    return rows


def trajectory_csv(trajectory: list[np.ndarray], first_epoch: int = 0) -> str:
    buf = io.StringIO()
    buf.write(TRAJECTORY_HEADER + "\n")
    for e, centers in enumerate(trajectory, start=first_epoch):
        for c, z in enumerate(centers):
            buf.write(f"{e},{c},{z[0]:.17g},{z[1]:.17g},{z[2]:.17g}\n")
    return buf.getvalue()


def parse_trajectory_csv(text: str) -> dict[int, np.ndarray]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_HEADER:
        raise TraceParseError(f"expected header {TRAJECTORY_HEADER!r}", 1)
    out: dict[int, list[list[float]]] = {}
    for lineno, record in enumerate(csv.reader(lines[1:]), start=2):
        if not record:
            continue
        try:
            e, c = int(record[0]), int(record[1])
            rows = out.setdefault(e, [])
            if c != len(rows):
                raise ValueError(f"epoch {e}: expected cluster {len(rows)}, got {c}")
            rows.append([float(v) for v in record[2:5]])
        except (ValueError, IndexError) as exc:
            raise TraceParseError(str(exc), lineno) from exc
    return {e: np.array(v) for e, v in out.items()}


def monotonicity(values: list[float]) -> tuple[float, float]:
    """(fraction of consecutive pairs that decrease, largest single decrease)."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    if len(diffs) == 0:
        return 0.0, 0.0
    drops = -diffs[diffs < 0]
    return len(drops) / len(diffs), float(drops.max()) if len(drops) else 0.0

