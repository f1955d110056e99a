import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_detection
from pmbtrack.models import (
    H,
    MeasurementModel,
    ModelParams,
    MotionModel,
    clutter_intensity,
    gate,
    kalman_predict,
    kalman_update,
    mahalanobis_distance,
    make_birth_intensity,
    moment_match,
)
from pmbtrack.state import GaussianDensity, InvalidDensityError, SingularMatrixError


def random_density(rng, scale=1.0):
    a = rng.normal(size=(4, 4))
    return GaussianDensity(rng.normal(size=4) * scale, a @ a.T + 0.5 * np.eye(4))


class TestKalmanPredict:
    def test_constant_velocity_kinematics(self):
        d = GaussianDensity([0, 0, 1, 0], np.eye(4))
        out = kalman_predict(d, MotionModel(dt=0.5, noise_scale=1.0))
        assert np.allclose(out.mean, [0.5, 0, 1, 0])

    def test_zero_noise_zero_velocity_is_identity(self):
        d = GaussianDensity([3, -2, 0, 0], np.diag([1.0, 2.0, 0.5, 0.5]))
        out = kalman_predict(d, MotionModel(dt=0.5, noise_scale=0.0))
        assert np.allclose(out.mean, d.mean)
        # covariance only mixes through F; with zero velocity variance coupling
        f = MotionModel(dt=0.5).transition
        assert np.allclose(out.covariance, f @ d.covariance @ f.T)

    def test_non_psd_input_rejected(self):
        cov = np.eye(4)
        cov[2, 2] = -0.5
        with pytest.raises(InvalidDensityError):
            kalman_predict(GaussianDensity(np.zeros(4), cov), MotionModel())


class TestKalmanUpdate:
    def test_zero_innovation_log_likelihood(self):
        # S = H P H^T + R = I by construction
        mm = MeasurementModel(noise=np.diag([0.25, 0.25]))
        d = GaussianDensity([3, 4, 0, 0], np.diag([0.75, 0.75, 1.0, 1.0]))
        post, ll = kalman_update(d, (3.0, 4.0), mm)
        assert np.allclose(post.mean[:2], [3, 4])
        assert ll == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_uninformative_measurement_keeps_prior(self):
        for r_scale in (1e3, 1e6):
            mm = MeasurementModel(noise=np.eye(2) * r_scale)
            d = GaussianDensity([1, 2, 0.5, -0.5], np.eye(4))
            post, _ = kalman_update(d, (50.0, -30.0), mm)
            tol = 100.0 / r_scale
            assert np.max(np.abs(post.mean - d.mean)) < tol
            assert np.max(np.abs(post.covariance - d.covariance)) < tol

    def test_matches_textbook_oracle(self):
        # independently coded straight-line Kalman algebra
        rng = np.random.default_rng(7)
        mm = MeasurementModel(noise=np.array([[0.3, 0.05], [0.05, 0.2]]))
        for _ in range(20):
            d = random_density(rng, scale=3.0)
            z = d.mean[:2] + np.array([1.0, 0.0])
            post, ll = kalman_update(d, z, mm)

            p = d.covariance
            s = H @ p @ H.T + mm.noise
            k = p @ H.T @ np.linalg.inv(s)
            mean = d.mean + k @ (z - H @ d.mean)
            cov = (np.eye(4) - k @ H) @ p
            expect_ll = math.log(
                float(
                    np.exp(-0.5 * (z - H @ d.mean) @ np.linalg.inv(s) @ (z - H @ d.mean))
                    / (2 * math.pi * math.sqrt(np.linalg.det(s)))
                )
            )
            assert np.max(np.abs(post.mean - mean)) < 1e-10
            assert np.max(np.abs(post.covariance - cov)) < 1e-10
            assert ll == pytest.approx(expect_ll, abs=1e-10)

    def test_posterior_no_larger_than_prior(self):
        rng = np.random.default_rng(11)
        mm = MeasurementModel()
        for _ in range(20):
            d = random_density(rng)
            post, _ = kalman_update(d, rng.normal(size=2), mm)
            diff = d.covariance - post.covariance
            assert np.min(np.linalg.eigvalsh(diff)) > -1e-9

    def test_singular_innovation_raises(self):
        mm = MeasurementModel(noise=np.zeros((2, 2)))
        d = GaussianDensity(np.zeros(4), np.diag([0.0, 0.0, 1.0, 1.0]))
        with pytest.raises(SingularMatrixError):
            kalman_update(d, (0.0, 0.0), mm)


class TestMahalanobis:
    def test_identity_reduces_to_euclidean(self):
        assert mahalanobis_distance((3, 4), (0, 0), np.eye(2)) == pytest.approx(5.0)

    def test_same_point_is_zero(self):
        assert mahalanobis_distance((1.5, -2), (1.5, -2), np.diag([2.0, 3.0])) == 0.0

    def test_diagonal_hand_inversion(self):
        # (2,0) offset, P = diag(4,1) -> sqrt(4/4) = 1
        assert mahalanobis_distance((2, 0), (0, 0), np.diag([4.0, 1.0])) == pytest.approx(1.0)

    def test_symmetry(self):
        p = np.array([[2.0, 0.3], [0.3, 1.0]])
        a, b = (1.0, 2.0), (-3.0, 0.5)
        assert mahalanobis_distance(a, b, p) == pytest.approx(mahalanobis_distance(b, a, p))

    @given(
        st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
        st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(-0.9, 0.9),
    )
    @settings(max_examples=50, deadline=None)
    def test_whitening_invariance(self, x1, y1, x2, y2, s1, s2, rho):
        # simultaneous affine whitening of both points and P leaves d unchanged
        p = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
        chol = np.linalg.cholesky(p)
        inv = np.linalg.inv(chol)
        z1, z2 = np.array([x1, y1]), np.array([x2, y2])
        d = mahalanobis_distance(z1, z2, p)
        d_white = mahalanobis_distance(inv @ z1, inv @ z2, np.eye(2))
        assert d == pytest.approx(d_white, rel=1e-8, abs=1e-8)


class TestGate:
    def test_detection_at_mean_included(self, models, model_params):
        d = GaussianDensity([0, 0, 0, 0], np.eye(4))
        dets = [make_detection(0, 0)]
        assert gate(d, dets, models.measurement, model_params) == [0]

    def test_boundary_excluded(self):
        mm = MeasurementModel(noise=np.diag([0.25, 0.25]))
        d = GaussianDensity([0, 0, 0, 0], np.diag([0.75, 0.75, 1.0, 1.0]))  # S = I
        radius = math.sqrt(40.0)
        inside = [make_detection(radius - 1e-6, 0)]
        outside = [make_detection(radius + 1e-6, 0)]
        params = ModelParams()
        assert gate(d, inside, mm, params) == [0]
        assert gate(d, outside, mm, params) == []

    def test_matches_brute_force_filter(self, models, model_params):
        rng = np.random.default_rng(3)
        d = random_density(rng, scale=2.0)
        dets = [make_detection(*rng.normal(scale=8.0, size=2)) for _ in range(10)]
        got = gate(d, dets, models.measurement, model_params)
        s = H @ d.covariance @ H.T + models.measurement.noise
        z_hat = H @ d.mean
        expected = [
            i
            for i, det in enumerate(dets)
            if mahalanobis_distance(det.center_array(), z_hat, s)
            <= model_params.gating_threshold
        ]
        assert got == expected

    def test_threshold_extremes(self, models):
        rng = np.random.default_rng(5)
        d = GaussianDensity([0, 0, 0, 0], np.eye(4))
        dets = [make_detection(*rng.normal(scale=30.0, size=2)) for _ in range(8)]
        dets.append(make_detection(0.0, 0.0))
        everything = ModelParams(gating_threshold=1e12)
        assert gate(d, dets, models.measurement, everything) == list(range(9))
        nothing = ModelParams(gating_threshold=1e-12)
        assert gate(d, dets, models.measurement, nothing) == [8]


class TestIntensities:
    def test_birth_intensity_weights_and_covariance(self):
        params = ModelParams(birth_weight=0.1, birth_covariance=15.0)
        gm = make_birth_intensity([(0, 0), (10, 5), (-3, 2), (1, 1)], params)
        assert len(gm) == 4
        for w, d in gm:
            assert w == 0.1
            assert np.allclose(d.covariance, np.eye(4) * 15.0)
            assert d.mean[2] == d.mean[3] == 0.0

    def test_empty_birth(self):
        assert len(make_birth_intensity([], ModelParams())) == 0

    def test_tiny_weight_configuration_accepted(self):
        gm = make_birth_intensity([(0, 0)], ModelParams(birth_weight=0.0001))
        assert gm.weights[0] == 0.0001

    def test_clutter_intensity(self):
        assert clutter_intensity(ModelParams(clutter_rate=0.001, fov_area=1.0)) == 0.001
        assert clutter_intensity(ModelParams(clutter_rate=0.0, fov_area=5.0)) == 0.0
        assert clutter_intensity(ModelParams(clutter_rate=2.0, fov_area=100.0)) == pytest.approx(0.02)


def test_moment_match_single_component_is_identity():
    d = GaussianDensity([1, 2, 3, 4], np.diag([1.0, 2.0, 3.0, 4.0]))
    out = moment_match([0.7], [d])
    assert np.allclose(out.mean, d.mean)
    assert np.allclose(out.covariance, d.covariance)


def test_moment_match_preserves_mixture_moments():
    rng = np.random.default_rng(9)
    ds = [random_density(rng) for _ in range(3)]
    ws = rng.uniform(0.1, 1.0, size=3)
    out = moment_match(ws, ds)
    wn = ws / ws.sum()
    mean = sum(w * d.mean for w, d in zip(wn, ds))
    cov = sum(
        w * (d.covariance + np.outer(d.mean - mean, d.mean - mean))
        for w, d in zip(wn, ds)
    )
    assert np.allclose(out.mean, mean)
    assert np.allclose(out.covariance, cov)


def test_nees_consistency_quick():
    # light version of the full 1000-run acceptance check
    mean_nees = run_nees_trials(runs=200, steps=10, seed=123)
    assert 3.4 <= mean_nees <= 4.6


def run_nees_trials(runs: int, steps: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    motion = MotionModel(dt=0.5, noise_scale=1.0)
    mm = MeasurementModel(noise=np.diag([0.25, 0.25]))
    f, q = motion.transition, motion.process_noise
    chol_q = np.linalg.cholesky(q + 1e-12 * np.eye(4))
    chol_r = np.linalg.cholesky(mm.noise)
    p0 = np.diag([4.0, 4.0, 1.0, 1.0])
    chol_p0 = np.linalg.cholesky(p0)
    nees = []
    for _ in range(runs):
        m0 = rng.normal(size=4) * 2.0
        truth = m0 + chol_p0 @ rng.normal(size=4)
        est = GaussianDensity(m0, p0)
        for _ in range(steps):
            truth = f @ truth + chol_q @ rng.normal(size=4)
            z = truth[:2] + chol_r @ rng.normal(size=2)
            est = kalman_predict(est, motion)
            est, _ = kalman_update(est, z, mm)
            err = est.mean - truth
            nees.append(float(err @ np.linalg.solve(est.covariance, err)))
    return float(np.mean(nees))
