import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from flashstereo.calibrate import (
    CalibrationSet,
    build_calibration_set,
    clean_counts,
    count_series,
    cross_correlate,
    estimate_pose,
    pose_cost,
    ransac_delay,
    resolve_twofold_ambiguity,
)
from flashstereo.detect import Detection
from flashstereo.errors import DataError, InsufficientDataError, NoSignalError
from flashstereo.geometry import (
    CameraPose,
    angle_between_deg,
    bearing_to_angles,
    epipolar_residual,
    normalize,
    perturb_bearings,
    rotation_angle_deg,
)
from flashstereo.sim import inject_burst, simulate_count_series

YAW5 = Rotation.from_euler("z", 5, degrees=True).as_matrix()


def pose_yaw5():
    return CameraPose(np.array([1.0, 0.0, 0.0]), YAW5)


def synthetic_set(pose, n, noise_deg=0.0, seed=0):
    """Pairs from random points 2..20 baseline units away, off the baseline."""
    rng = np.random.default_rng(seed)
    X = []
    while len(X) < n:
        p = normalize(rng.normal(size=3)) * rng.uniform(2, 20)
        if abs(normalize(p) @ pose.t) < 0.95:
            X.append(p)
    X = np.array(X)
    b1 = normalize(X)
    b2 = normalize((X - pose.t) @ pose.R.T)
    if noise_deg:
        b1 = perturb_bearings(b1, noise_deg, rng)
        b2 = perturb_bearings(b2, noise_deg, rng)
    return CalibrationSet(b1, b2, np.arange(n))


def dets_from_bearings(b, frames, camera):
    th, ph = bearing_to_angles(np.asarray(b))
    return [Detection(frame=int(k), w=0.0, h=0.0, theta=float(t), phi=float(p), camera=camera)
            for k, t, p in zip(frames, np.atleast_1d(th), np.atleast_1d(ph))]


# -- count series and correlation ---------------------------------------------


def test_count_series():
    dets = [Detection(frame=k, w=0, h=0, theta=0, phi=0) for k in (0, 2, 2, 5)]
    assert count_series(dets, 7).tolist() == [1, 0, 2, 0, 0, 1, 0]
    assert count_series(dets).tolist() == [1, 0, 2, 0, 0, 1]
    assert count_series([], 3).tolist() == [0, 0, 0]


def test_clean_counts_zeroes_outliers():
    n = np.ones(2000, dtype=int)
    n[100] = 50
    out = clean_counts(n, 99.9)
    assert out[100] == 0 and out.sum() == 1999


def test_pure_shift():
    rng = np.random.default_rng(0)
    n1 = rng.poisson(1.0, 600)
    n2 = np.roll(n1, 3)  # n2[k] = n1[k - 3]
    curve = cross_correlate(n1, n2, 50)
    assert curve.best_lag == 3
    assert curve.best_value == pytest.approx(np.nanmax(curve.values))


def test_identity_lag_zero():
    n = np.random.default_rng(1).poisson(1.0, 500)
    assert cross_correlate(n, n, 40).best_lag == 0


def test_shift_with_dropout():
    n1, n2 = simulate_count_series(3000, delta_k=7, onset_rate=0.3, dropout=0.2, seed=3)
    assert cross_correlate(n1, n2, 100).best_lag == 7


def test_cross_correlate_matches_direct_pearson():
    rng = np.random.default_rng(2)
    x = rng.poisson(2.0, 200)
    y = rng.poisson(2.0, 180)
    curve = cross_correlate(x, y, 30)
    for lag, v in zip(curve.lags, curve.values):
        lo, hi = max(0, -lag), min(len(x), len(y) - lag)
        a, b = x[lo:hi], y[lo + lag : hi + lag]
        assert v == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)


def test_cross_correlate_errors():
    with pytest.raises(NoSignalError):
        cross_correlate(np.zeros(100, int), np.zeros(100, int), 10)
    with pytest.raises(DataError):
        cross_correlate(np.ones(10), np.ones(10), 10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(-40, 40))
def test_lag_antisymmetry(seed, shift):
    n1, n2 = simulate_count_series(800, delta_k=shift, onset_rate=0.2, dropout=0.3, seed=seed)
    assert cross_correlate(n1, n2, 60).best_lag == -cross_correlate(n2, n1, 60).best_lag


# -- RANSAC delay ---------------------------------------------------------------


def test_ransac_clean_shift():
    n1, n2 = simulate_count_series(6000, delta_k=-120, seed=4)
    res = ransac_delay(n1, n2, trials=30, window=2000, seed=0)
    assert res.delta_k == -120 and res.support == 1.0


def test_ransac_with_burst():
    n1, n2 = simulate_count_series(20000, delta_k=250, dropout=0.2, seed=5)
    n2 = inject_burst(n2, 9000, 500, 5.0, seed=5)
    res = ransac_delay(n1, n2, seed=1)
    assert res.delta_k == 250
    assert res.support >= 0.7


def test_ransac_single_trial_equals_cross_correlate():
    n1, n2 = simulate_count_series(3000, delta_k=17, dropout=0.4, seed=6)
    res = ransac_delay(n1, n2, trials=1, window=3000, max_lag=100, clean_percentile=100)
    assert res.delta_k == cross_correlate(n1, n2, 100).best_lag
    assert res.support == 1.0 and res.n_valid == 1


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 50.0))
def test_ransac_scale_invariant(seed, scale):
    n1, n2 = simulate_count_series(4000, delta_k=33, dropout=0.3, seed=seed)
    a = ransac_delay(n1, n2, trials=10, window=1500, seed=seed % 1000)
    b = ransac_delay(n1 * scale, n2 * scale, trials=10, window=1500, seed=seed % 1000)
    assert a.delta_k == b.delta_k


def test_ransac_insufficient_frames():
    with pytest.raises(InsufficientDataError):
        ransac_delay(np.ones(100, int), np.ones(100, int), window=2000)


# -- calibration set ---------------------------------------------------------------


def test_calibration_set_no_singletons():
    d1 = [Detection(frame=k, w=0, h=0, theta=10.0 * i, phi=90.0) for k in range(20) for i in range(2)]
    with pytest.raises(InsufficientDataError):
        build_calibration_set(d1, d1, 0)


def test_calibration_set_counts():
    pose = pose_yaw5()
    cs = synthetic_set(pose, 5000, seed=1)
    d1 = dets_from_bearings(cs.b1, range(5000), 1)
    d2 = dets_from_bearings(cs.b2, np.arange(5000) + 4, 2)
    assert len(build_calibration_set(d1[:50], d2[:50], 4)) == 50
    assert len(build_calibration_set(d1[:50], d2[:50], 0)) == 46  # only frames 4..49 overlap
    capped = build_calibration_set(d1, d2, 4, cap=1000)
    assert len(capped) == 1000
    # pairs really are aligned by delta_k
    np.testing.assert_allclose(capped.b1, cs.b1[capped.frames], atol=1e-12)
    np.testing.assert_allclose(capped.b2, cs.b2[capped.frames], atol=1e-12)


def test_calibration_set_skips_crowded_frames():
    pose = pose_yaw5()
    cs = synthetic_set(pose, 30, seed=2)
    d1 = dets_from_bearings(cs.b1, range(30), 1)
    d2 = dets_from_bearings(cs.b2, range(30), 2)
    d2 += dets_from_bearings(cs.b2[:5], range(5), 2)  # frames 0..4 now hold two
    assert len(build_calibration_set(d1, d2, 0)) == 25


# -- pose estimation ---------------------------------------------------------------


def test_residual_zero_for_exact_pairs():
    pose = pose_yaw5()
    cs = synthetic_set(pose, 100)
    assert np.abs(epipolar_residual(cs.b1, cs.b2, pose)).max() < 1e-12


def test_residual_sign_flip_under_negated_t():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pose = CameraPose.from_parts(normalize(rng.normal(size=3)), Rotation.random(random_state=rng).as_matrix())
        flipped = CameraPose(-pose.t, pose.R)
        a, b = normalize(rng.normal(size=3)), normalize(rng.normal(size=3))
        assert epipolar_residual(a, b, pose) == pytest.approx(-epipolar_residual(a, b, flipped), abs=1e-15)


def test_noiseless_recovery():
    truth = pose_yaw5()
    est = estimate_pose(synthetic_set(truth, 200, seed=4), CameraPose.identity())
    assert rotation_angle_deg(est.pose.R, truth.R) < 0.01
    assert angle_between_deg(est.pose.t, truth.t) < 0.01
    assert est.converged


def test_identity_fixed_point():
    truth = CameraPose.identity()
    est = estimate_pose(synthetic_set(truth, 100, seed=5), CameraPose.identity())
    assert est.iterations == 0
    assert est.cost < 1e-30
    np.testing.assert_allclose(est.pose.R, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(est.pose.t, [1, 0, 0], atol=1e-15)


def test_noisy_recovery():
    truth = pose_yaw5()
    est = estimate_pose(synthetic_set(truth, 1000, noise_deg=0.1, seed=6), CameraPose.identity())
    assert rotation_angle_deg(est.pose.R, truth.R) < 0.5
    assert angle_between_deg(est.pose.t, truth.t) < 1.0


def test_too_few_pairs():
    cs = synthetic_set(pose_yaw5(), 5)
    with pytest.raises(InsufficientDataError):
        estimate_pose(cs)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_estimate_returns_valid_pose(seed):
    rng = np.random.default_rng(seed)
    truth = CameraPose.from_parts(
        normalize(np.array([1.0, 0, 0]) + 0.2 * rng.normal(size=3)),
        Rotation.from_rotvec(rng.normal(size=3) * np.radians(8)).as_matrix(),
    )
    est = estimate_pose(synthetic_set(truth, 60, noise_deg=0.05, seed=seed % 10000))
    assert abs(np.linalg.norm(est.pose.t) - 1) < 1e-9
    assert np.abs(est.pose.R.T @ est.pose.R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(est.pose.R) - 1) < 1e-9


def test_cost_strict_local_minimum_at_truth():
    truth = pose_yaw5()
    cs = synthetic_set(truth, 300, seed=7)
    c0 = pose_cost(cs, truth)
    assert c0 < 1e-20
    d = np.radians(0.5)
    # t moves along its two tangent directions, R about three axes
    for tangent in (np.array([0.0, 1, 0]), np.array([0.0, 0, 1])):
        for sgn in (1, -1):
            t = normalize(truth.t * np.cos(d) + sgn * tangent * np.sin(d))
            assert pose_cost(cs, CameraPose(t, truth.R)) > c0
    for axis in np.eye(3):
        for sgn in (1, -1):
            R = Rotation.from_rotvec(sgn * d * axis).as_matrix() @ truth.R
            assert pose_cost(cs, CameraPose(truth.t, R)) > c0


def test_twofold_ambiguity_resolved():
    truth = pose_yaw5()
    cs = synthetic_set(truth, 200, seed=8)
    twist = 2 * np.outer(truth.t, truth.t) - np.eye(3)
    for wrong in (CameraPose(-truth.t, truth.R), CameraPose.from_parts(truth.t, truth.R @ twist),
                  CameraPose.from_parts(-truth.t, truth.R @ twist)):
        assert pose_cost(cs, wrong) == pytest.approx(pose_cost(cs, truth), abs=1e-25)
        fixed = resolve_twofold_ambiguity(cs, wrong)
        np.testing.assert_allclose(fixed.t, truth.t, atol=1e-12)
        np.testing.assert_allclose(fixed.R, truth.R, atol=1e-12)
