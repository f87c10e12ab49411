import math

import numpy as np
import pytest

from cosmoforge.frontend import sample_tangent
from cosmoforge.lie import Pose3, compose, expmap
from cosmoforge.noise import (
    NoiseEstimate,
    ResidualSample,
    SingularCovarianceError,
    chi2_critical,
    classify,
    classify_many,
    estimate_covariance,
    good_filter,
    load_matrix,
    mahalanobis_sq,
    residual,
    save_matrix,
)
from trajectories import random_pose


def chi2_6_cdf(x):
    # closed form for six degrees of freedom
    return 1.0 - math.exp(-x / 2) * (1 + x / 2 + x * x / 8)


def bisect_quantile(cdf, p, lo=0.0, hi=100.0, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if cdf(mid) < p else (lo, mid)
    return 0.5 * (lo + hi)


def frob_rel(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def test_residual_examples(rng):
    p = random_pose(rng)
    assert np.array_equal(residual(p, p), np.zeros(6))
    v = np.array([0.01, -0.02, 0.005, 0.1, 0.2, -0.3])
    np.testing.assert_allclose(residual(p, compose(p, expmap(v))), v, atol=1e-12)


def test_residual_pure_translation():
    # m^-1 * truth with truth = identity and m offset by +0.1 m in x is a -0.1 m shift
    m = Pose3(translation=[0.1, 0, 0])
    np.testing.assert_allclose(residual(m, Pose3()), [0, 0, 0, -0.1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(residual(Pose3(), m), [0, 0, 0, 0.1, 0, 0], atol=1e-15)


def test_residual_sample_recomputes(rng):
    s = ResidualSample.from_poses(random_pose(rng), random_pose(rng))
    np.testing.assert_allclose(s.residual, residual(s.measurement, s.truth), atol=1e-12)


def _sample(trans=0.0, angle=0.0):
    return ResidualSample.from_poses(expmap([angle, 0, 0, trans, 0, 0]), Pose3())


def test_good_filter_examples():
    zero, big, ok = _sample(), _sample(trans=1.0), _sample(trans=0.4, angle=0.04)
    kept = good_filter([zero, big, ok])
    assert kept == [zero, ok]
    assert good_filter([_sample(angle=0.06)]) == []
    assert good_filter([_sample(trans=0.5)]) == []


def test_estimator_examples():
    assert np.array_equal(estimate_covariance(np.zeros((5, 6))).Q, np.zeros((6, 6)))
    r = np.array([[1.0, 0, 0, 0, 0, 0], [-1.0, 0, 0, 0, 0, 0]])
    est = estimate_covariance(r)
    expected = np.zeros((6, 6))
    expected[0, 0] = 1.0
    assert np.array_equal(est.Q, expected) and est.sample_count == 2
    assert estimate_covariance(r, ddof=1).Q[0, 0] == 2.0
    with pytest.raises(ValueError):
        estimate_covariance([])


def test_estimator_recovers_known_q():
    Q0 = np.diag([1e-4, 2e-4, 3e-4, 1e-2, 2e-2, 5e-3])
    eps = sample_tangent(Q0, np.random.default_rng(1), 10_000)
    assert frob_rel(estimate_covariance(eps).Q, Q0) <= 0.10


def test_estimator_order_and_scale(rng):
    R = rng.standard_normal((1000, 6)) * [1, 2, 3, 4, 5, 6]
    Q = estimate_covariance(R).Q
    for _ in range(5):
        assert np.array_equal(estimate_covariance(R[rng.permutation(len(R))]).Q, Q)
    for c in (2.0, 0.5, -4.0):
        assert np.array_equal(estimate_covariance(c * R).Q, c * c * Q)
    np.testing.assert_allclose(estimate_covariance(3.0 * R).Q, 9.0 * Q, rtol=1e-14, atol=0)


def test_filter_then_estimate_ignores_gross_outliers(rng):
    Q0 = np.diag([1e-4] * 3 + [1e-3] * 3)
    clean = [ResidualSample.from_poses(compose(t, expmap(e)), t)
             for t, e in ((random_pose(rng), e) for e in sample_tangent(Q0, rng, 500))]
    gross = [ResidualSample.from_poses(compose(t, Pose3(translation=[3.0, 0, 0])), t)
             for t in (random_pose(rng) for _ in range(40))]
    mixed = clean[:250] + gross + clean[250:]
    assert estimate_covariance(good_filter(mixed)) == estimate_covariance(clean)


def test_critical_value_matches_oracle():
    oracle = bisect_quantile(chi2_6_cdf, 0.95)
    assert abs(oracle - 12.5916) < 1e-3
    assert abs(chi2_critical(0.95, 6) - oracle) < 1e-3


def test_classify_examples(rng):
    Q = np.diag([1e-4] * 3 + [1e-2] * 3)
    p = random_pose(rng)
    assert classify(p, p, Q) == "inlier"
    assert classify(compose(p, Pose3(translation=[3.0, 0, 0])), p, Q) == "outlier"


def test_inlier_rate_is_five_percent():
    rng = np.random.default_rng(21)
    Q = np.diag([2e-4, 1e-4, 3e-4, 1e-2, 4e-3, 2.5e-3])
    Q[3, 4] = Q[4, 3] = 1e-3
    truths = [random_pose(rng) for _ in range(10_000)]
    meas = [compose(t, expmap(e)) for t, e in zip(truths, sample_tangent(Q, rng, 10_000))]
    flags = classify_many(meas, truths, Q)
    assert abs(np.mean(flags) - 0.05) <= 0.007
    assert all(type(f) is bool for f in flags)
    assert flags[:50] == [classify(m, t, Q) == "outlier" for m, t in zip(meas[:50], truths[:50])]


def test_classify_invariant_under_left_composition(rng):
    Q = np.diag([1e-3] * 3 + [1e-2] * 3)
    for _ in range(100):
        t = random_pose(rng)
        m = compose(t, expmap(0.2 * rng.standard_normal(6)))
        g = random_pose(rng)
        assert classify(m, t, Q) == classify(compose(g, m), compose(g, t), Q)
        assert mahalanobis_sq(residual(m, t), Q) == pytest.approx(
            mahalanobis_sq(residual(compose(g, m), compose(g, t)), Q), rel=1e-6)


def test_singular_covariance_rejected():
    with pytest.raises(SingularCovarianceError):
        mahalanobis_sq(np.ones(6), -np.eye(6))
    # a zero matrix is regularized, not rejected
    assert mahalanobis_sq(np.zeros(6), np.zeros((6, 6))) == 0.0


def test_matrix_file_roundtrip(tmp_path, rng):
    A = rng.standard_normal((6, 6))
    Q = A @ A.T
    save_matrix(tmp_path / "q.txt", Q)
    assert np.array_equal(load_matrix(tmp_path / "q.txt"), Q)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError, match="6x6"):
        load_matrix(tmp_path / "bad.txt")


def test_noise_estimate_equality():
    assert NoiseEstimate(np.eye(6), 3) == NoiseEstimate(np.eye(6), 3)
    assert NoiseEstimate(np.eye(6), 3) != NoiseEstimate(np.eye(6), 4)
