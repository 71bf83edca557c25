import math

import numpy as np
import pytest

from mimax.data import DiscreteJoint, GaussianMixtureSpec, exact_mi, validation_views
from mimax.encoder import EVAL, TRAIN, encode, init_encoder
from mimax.metrics import (
    TRACE_HEADER, MITrace, NotUnitNormError, TraceParseError, check_estimator_bounds, collapse_score,
    estimate_mi_epoch, is_collapsed, monotonicity, nn_angle_gaps, parse_trace_csv, parse_trajectory_csv,
    trace_csv, track_centers, trajectory_csv, verify_informativeness_bound,
)
from mimax.rng import substream

BIPYRAMID = np.array([[0, 0, 1], [0, 0, -1], [1, 0, 0], [-0.5, math.sqrt(3) / 2, 0], [-0.5, -math.sqrt(3) / 2, 0]])


def random_rotation(gen):
    q, r = np.linalg.qr(gen.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def test_nn_gaps_antipodal():
    assert nn_angle_gaps([[0, 0, 1], [0, 0, -1]]) == (180.0, 180.0, 180.0, 0.0)


def test_nn_gaps_thomson_bipyramid():
    mean, lo, hi, sd = nn_angle_gaps(BIPYRAMID)
    # poles sit 90 degrees from every equatorial point; equatorial points are 120 apart but 90 from a pole
    assert (mean, lo, hi) == pytest.approx((90.0, 90.0, 90.0), abs=1e-9)
    assert sd == pytest.approx(0.0, abs=1e-9)


def test_nn_gaps_collapse():
    mean, lo, hi, _ = nn_angle_gaps(np.tile([0.0, 1.0, 0.0], (5, 1)))
    assert max(mean, lo, hi) == pytest.approx(0.0, abs=1e-6)


def test_nn_gaps_rotation_invariant():
    gen = np.random.default_rng(0)
    c = gen.normal(size=(5, 3))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    base = nn_angle_gaps(c)
    for _ in range(50):
        np.testing.assert_allclose(nn_angle_gaps(c @ random_rotation(gen).T), base, atol=1e-9)


def test_nn_gaps_preconditions():
    with pytest.raises(NotUnitNormError):
        nn_angle_gaps([[1.0, 0, 0], [0, 2.0, 0]])
    with pytest.raises(ValueError):
        nn_angle_gaps([[1.0, 0, 0]])


def test_collapse_score_identical_rows():
    mean_cos, std = collapse_score(np.tile([0.6, 0.8, 0.0], (10, 1)))
    assert mean_cos == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(std, 0.0, atol=1e-15)
    assert is_collapsed(mean_cos)


def test_collapse_score_uniform_sphere():
    z = np.random.default_rng(1).normal(size=(10_000, 3))
    mean_cos, _ = collapse_score(z / np.linalg.norm(z, axis=1, keepdims=True))
    assert abs(mean_cos) < 0.05
    assert not is_collapsed(mean_cos)


def test_collapse_score_matches_naive_loop():
    gen = np.random.default_rng(2)
    for n in (2, 7, 120):
        z = gen.normal(size=(n, 3)) + [1.0, 0.0, 0.0]
        u = z / np.linalg.norm(z, axis=1, keepdims=True)
        naive = [float(u[i] @ u[j]) for i in range(n) for j in range(i + 1, n)]
        assert collapse_score(z)[0] == pytest.approx(sum(naive) / len(naive), abs=1e-9)


def test_random_encoders_give_small_estimates():
    # independent untrained encoders carry no usable dependence: averaged over 10 seeds the
    # cos-DV and InfoNCE estimates sit near 0 at temp 1 and JSD near its floor -2 log 2
    spec = GaussianMixtureSpec()
    val = validation_views(spec)
    est = np.array([estimate_mi_epoch(init_encoder(s, "f"), init_encoder(s, "g"), val, 1.0) for s in range(10)])
    assert np.all(np.abs(est[:, :2].mean(axis=0)) < 0.3)
    assert abs(est[:, 2].mean() + 2 * math.log(2)) < 0.3


def test_estimation_leaves_encoders_unchanged():
    spec = GaussianMixtureSpec(n_per_cluster=40)
    val = validation_views(spec)
    f = init_encoder(0, "f")
    encode(f, val.x1, TRAIN)
    before = f.digest()
    estimate_mi_epoch(f, f, val, 0.1)
    track_centers(f, spec)
    assert f.digest() == before


def test_infonce_ceiling_on_validation():
    spec = GaussianMixtureSpec(n_per_cluster=20)
    val = validation_views(spec)
    f = init_encoder(3, "f")
    encode(f, val.x1, TRAIN)
    assert estimate_mi_epoch(f, f, val, 0.05)[1] <= math.log(len(val))


def test_track_centers_unit_and_consistent():
    spec = GaussianMixtureSpec()
    f = init_encoder(0, "f")
    encode(f, spec.centers(), TRAIN)
    c = track_centers(f, spec)
    assert c.shape == (5, 3)
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(c, encode(f, spec.centers(), EVAL).data)


def test_informativeness_trivial_cases():
    p = np.full(8, 1 / 8)
    same = verify_informativeness_bound(p, np.arange(8), np.arange(8))
    assert same.mi_z1_z2 == pytest.approx(same.mi_x_z1, abs=1e-12)
    assert same.mi_z1_z2 == pytest.approx(math.log(8), abs=1e-12)
    const = verify_informativeness_bound(p, np.arange(8), np.zeros(8, dtype=int))
    assert const.mi_z1_z2 == pytest.approx(0.0, abs=1e-15)
    assert const.holds


def test_informativeness_random_codebooks():
    for i in range(100):
        gen = substream(0, "codebook-test", i)
        p = gen.dirichlet(np.ones(8))
        f, g = gen.integers(0, 4, size=8), gen.integers(0, 5, size=8)
        channel = gen.dirichlet(np.ones(8), size=8) if i % 2 else None
        assert verify_informativeness_bound(p, f, g, channel, channel).holds


def test_informativeness_against_bruteforce():
    gen = np.random.default_rng(4)
    p = gen.dirichlet(np.ones(6))
    f, g = gen.integers(0, 3, size=6), gen.integers(0, 3, size=6)
    joint = np.zeros((3, 3))
    for x in range(6):
        joint[f[x], g[x]] += p[x]
    report = verify_informativeness_bound(p, f, g)
    assert report.mi_z1_z2 == pytest.approx(exact_mi(DiscreteJoint(joint)), abs=1e-13)


def test_estimators_respect_exact_mi():
    gen = np.random.default_rng(5)
    pmf = np.eye(4) * 0.2 + 0.05 / 3 * (1 - np.eye(4))
    pmf /= pmf.sum()
    book = gen.normal(size=(4, 3))
    book /= np.linalg.norm(book, axis=1, keepdims=True)
    report = check_estimator_bounds(DiscreteJoint(pmf), book, book, batch=64, temp=0.2, resamples=100)
    assert all(report.holds().values())
    assert report.exact == pytest.approx(exact_mi(DiscreteJoint(pmf)))


def _row(epoch, mi=(0.1, 0.2, -0.3)):
    return MITrace(epoch, *mi, 0.01, 80.0, 70.0, 90.0, 5.5)


def test_trace_csv_roundtrip():
    rows = [_row(0, (None, None, None)), _row(1), _row(2, (1 / 3, math.pi, -1e-300))]
    text = trace_csv(rows)
    assert text.splitlines()[0] == TRACE_HEADER
    assert text.splitlines()[1].startswith("0,,,,")
    assert parse_trace_csv(text) == rows


def test_trace_csv_errors_carry_line_numbers():
    good = trace_csv([_row(0), _row(1)])
    with pytest.raises(TraceParseError, match="line 1"):
        parse_trace_csv("epoch,oops\n")
    with pytest.raises(TraceParseError, match="line 3"):
        parse_trace_csv(good.replace("\n1,", "\n0,"))
    with pytest.raises(TraceParseError, match="line 2"):
        parse_trace_csv(good.replace("\n0,", "\nzero,"))
    with pytest.raises(TraceParseError, match="line 2"):
        parse_trace_csv(good.replace(",80,", ",,", 1))


def test_trajectory_csv_roundtrip():
    gen = np.random.default_rng(6)
    traj = []
    for _ in range(3):
        c = gen.normal(size=(5, 3))
        traj.append(c / np.linalg.norm(c, axis=1, keepdims=True))
    text = trajectory_csv(traj)
    with pytest.raises(TraceParseError, match="line 3"):
        parse_trajectory_csv(text.replace("\n0,1,", "\n0,4,", 1))
    back = parse_trajectory_csv(text)
    assert sorted(back) == [0, 1, 2]
    for e in back:
        assert back[e].tobytes() == traj[e].tobytes()


def test_monotonicity():
    assert monotonicity([1, 2, 3]) == (0.0, 0.0)
    frac, worst = monotonicity([1.0, 0.5, 2.0, 1.9, 3.0])
    assert frac == 0.5 and worst == pytest.approx(0.5)
    assert monotonicity([4.0]) == (0.0, 0.0)
