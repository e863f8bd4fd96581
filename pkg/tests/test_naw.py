"""Adaptive weighting kernels: score extraction, scheduling, shapes."""

import math

import numpy as np
import pytest

from nla.naw import (ALONG_Y_EQ_NEG_X, ALONG_Y_EQ_X, WeightPolicy,
                     build_false_kernel, build_true_kernel,
                     covariance_schedule, extract_scores, gaussian_weight,
                     gaussian_weight_many, kernel_params, naw_weight,
                     naw_weights, sigma_from_axis_ratio)
from nla.numkit import Rng, softmax

POLICY = WeightPolicy(total_epochs=60)

# Constants frozen from 40-digit evaluations of the closed forms.
C_ISOTROPIC = 0.19894367886486917       # 1 / (2 pi 0.8)
C_TRUE_FULL = 0.24867959858108646       # 1 / (2 pi 0.64), off-diagonal -0.48
C_FALSE = 0.61340967650001327           # 1 / (2 pi sqrt(0.64 - (28/37)^2))
CS_FULL = 0.9999546000702375            # 1 - e^-10
CS_HALF = 0.9932620530009145            # 1 - e^-5


def brute_force_density(p, mu, sigma) -> float:
    """Independent oracle: generic linear algebra, no 2x2 shortcuts."""
    d = np.asarray(p, float) - np.asarray(mu, float)
    quad = float(d @ np.linalg.inv(sigma) @ d)
    return math.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(np.linalg.det(sigma)))


class TestExtractScores:
    def test_direct_selection_true(self):
        pair = extract_scores([0.7, 0.2, 0.1], 0)
        assert (pair.p_gt, pair.p_nn, pair.is_true_prediction) == (0.7, 0.2, True)

    def test_direct_selection_false(self):
        pair = extract_scores([0.1, 0.6, 0.3], 0)
        assert (pair.p_gt, pair.p_nn, pair.is_true_prediction) == (0.1, 0.6, False)

    def test_tie_counts_as_true(self):
        pair = extract_scores([0.5, 0.5, 0.0], 0)
        assert (pair.p_gt, pair.p_nn, pair.is_true_prediction) == (0.5, 0.5, True)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            extract_scores([0.5, 0.5], 2)

    def test_scores_from_a_simplex_point_sum_below_one(self):
        rng = Rng(19)
        for _ in range(300):
            probs = softmax(rng.normals(6, scale=4.0))
            pair = extract_scores(probs, rng.below(6))
            assert pair.p_gt + pair.p_nn <= 1.0 + 1e-9
            assert pair.is_true_prediction == (pair.p_gt >= pair.p_nn)


class TestCovarianceSchedule:
    def test_zero_at_epoch_zero(self):
        assert covariance_schedule(0, 60) == 0.0

    def test_full_horizon(self):
        assert covariance_schedule(60, 60) == pytest.approx(CS_FULL, abs=1e-15)

    def test_half_horizon(self):
        assert covariance_schedule(30, 60) == pytest.approx(CS_HALF, abs=1e-15)

    @pytest.mark.parametrize("total", [1, 10, 60, 1000])
    def test_strictly_increasing(self, total):
        values = [covariance_schedule(e, total) for e in range(total + 1)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_epoch_beyond_horizon_rejected(self):
        with pytest.raises(ValueError):
            covariance_schedule(61, 60)
        with pytest.raises(ValueError):
            covariance_schedule(0, 0)
        with pytest.raises(ValueError):
            covariance_schedule(-1, 60)


class TestSigmaFromAxisRatio:
    def test_ratio_one_is_isotropic(self):
        for orient in (ALONG_Y_EQ_X, ALONG_Y_EQ_NEG_X):
            np.testing.assert_allclose(sigma_from_axis_ratio(0.8, 1.0, orient),
                                       np.diag([0.8, 0.8]), atol=0)

    def test_ratio_two_anti_diagonal(self):
        sigma = sigma_from_axis_ratio(0.8, 2.0, ALONG_Y_EQ_NEG_X)
        np.testing.assert_allclose(sigma, [[0.8, -0.48], [-0.48, 0.8]], rtol=1e-15)

    def test_ratio_six_diagonal(self):
        sigma = sigma_from_axis_ratio(0.8, 6.0, ALONG_Y_EQ_X)
        off = 0.8 * 35.0 / 37.0  # = 28/37
        np.testing.assert_allclose(sigma, [[0.8, off], [off, 0.8]], rtol=1e-15)
        assert sigma[0, 1] == pytest.approx(0.7567567567567568, rel=1e-15)

    @pytest.mark.parametrize("ratio,orient,direction", [
        (2.0, ALONG_Y_EQ_NEG_X, np.array([1.0, -1.0])),
        (6.0, ALONG_Y_EQ_X, np.array([1.0, 1.0])),
        (3.5, ALONG_Y_EQ_X, np.array([1.0, 1.0])),
    ])
    def test_eigendecomposition_oracle(self, ratio, orient, direction):
        sigma = sigma_from_axis_ratio(0.8, ratio, orient)
        eigvals, eigvecs = np.linalg.eigh(sigma)
        assert eigvals[1] / eigvals[0] == pytest.approx(ratio ** 2, abs=1e-9)
        major = eigvecs[:, 1]
        unit = direction / np.linalg.norm(direction)
        assert abs(abs(major @ unit) - 1.0) < 1e-12

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sigma_from_axis_ratio(0.0, 2.0, ALONG_Y_EQ_X)
        with pytest.raises(ValueError):
            sigma_from_axis_ratio(0.8, 0.5, ALONG_Y_EQ_X)
        with pytest.raises(ValueError):
            sigma_from_axis_ratio(0.8, 2.0, "diagonal")


class TestTrueKernel:
    def test_epoch_zero_is_isotropic(self):
        k = build_true_kernel(POLICY, 0)
        np.testing.assert_allclose(k.sigma, np.diag([0.8, 0.8]), atol=0)
        assert k.norm_const == pytest.approx(C_ISOTROPIC, rel=1e-14)

    def test_final_epoch_near_full_ellipse(self):
        k = build_true_kernel(POLICY, 60)
        expected_off = -0.48 * CS_FULL
        np.testing.assert_allclose(k.sigma, [[0.8, expected_off],
                                             [expected_off, 0.8]], rtol=1e-12)
        expected_c = 1.0 / (2.0 * math.pi * math.sqrt(0.64 - expected_off ** 2))
        assert k.norm_const == pytest.approx(expected_c, rel=1e-14)
        # close to, but slightly below, the fully elongated constant
        assert k.norm_const == pytest.approx(C_TRUE_FULL, abs=1e-4)

    @pytest.mark.parametrize("epoch", [0, 1, 17, 30, 59, 60])
    def test_mean_fixed_at_half_half(self, epoch):
        np.testing.assert_allclose(build_true_kernel(POLICY, epoch).mu, [0.5, 0.5])

    def test_positive_definite_over_all_epochs(self):
        for epoch in range(61):
            sigma = build_true_kernel(POLICY, epoch).sigma
            assert sigma[0, 0] > 0
            assert np.linalg.det(sigma) > 0


class TestFalseKernel:
    def test_mean(self):
        np.testing.assert_allclose(build_false_kernel(POLICY).mu, [0.3, 0.15])

    def test_sigma(self):
        off = 28.0 / 37.0
        np.testing.assert_allclose(build_false_kernel(POLICY).sigma,
                                   [[0.8, off], [off, 0.8]], rtol=1e-15)

    def test_norm_const(self):
        assert build_false_kernel(POLICY).norm_const == pytest.approx(
            C_FALSE, rel=1e-14)

    def test_constant_over_epochs(self):
        a = build_false_kernel(POLICY)
        b = build_false_kernel(POLICY)
        np.testing.assert_array_equal(a.sigma, b.sigma)


class TestGaussianWeight:
    def test_peak_at_mean(self):
        k = kernel_params([0.5, 0.5], np.diag([0.8, 0.8]))
        assert gaussian_weight([0.5, 0.5], k) == pytest.approx(C_ISOTROPIC, rel=1e-14)

    def test_off_mean_value(self):
        # quadratic form (1, 0) Sigma^-1 (1, 0) = 1/0.8 for Sigma = 0.8 I
        k = kernel_params([0.5, 0.5], np.diag([0.8, 0.8]))
        expected = 0.10648687774403312  # frozen: C * exp(-1/1.6), 40 digits
        assert gaussian_weight([1.5, 0.5], k) == pytest.approx(expected, rel=1e-14)

    def test_matches_brute_force_oracle(self):
        rng = Rng(21)
        for _ in range(2000):
            p = np.array([rng.random(), rng.random()])
            mu = np.array([rng.random(), rng.random()])
            a = 0.1 + 1.9 * rng.random()
            b = 0.1 + 1.9 * rng.random()
            rho = -0.95 + 1.9 * rng.random()
            sigma = np.array([[a, rho * math.sqrt(a * b)],
                              [rho * math.sqrt(a * b), b]])
            ours = gaussian_weight(p, kernel_params(mu, sigma))
            assert ours == pytest.approx(brute_force_density(p, mu, sigma),
                                         rel=1e-10)

    def test_many_matches_scalar(self):
        rng = Rng(22)
        k = build_true_kernel(POLICY, 13)
        pts = np.array([[rng.random(), rng.random()] for _ in range(64)])
        singles = [gaussian_weight(p, k) for p in pts]
        np.testing.assert_allclose(gaussian_weight_many(pts, k), singles, rtol=1e-15)

    def test_bounded_by_norm_const(self):
        rng = Rng(23)
        k = build_false_kernel(POLICY)
        pts = np.array([[rng.random(), rng.random()] for _ in range(500)])
        w = gaussian_weight_many(pts, k)
        assert np.all(w > 0.0)
        assert np.all(w <= k.norm_const + 1e-15)

    def test_rejects_non_spd_covariance(self):
        with pytest.raises(ValueError):
            kernel_params([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ValueError):
            kernel_params([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])


class TestNawWeight:
    def test_tie_point_epoch_zero(self):
        # (0.5, 0.5) ties, so the true branch applies and sits at its mean.
        probs = [0.5, 0.5, 0.0]
        assert naw_weight(probs, 0, 0, POLICY) == pytest.approx(C_ISOTROPIC, rel=1e-14)

    def test_false_kernel_peak_value(self):
        # The false-branch mean (0.3, 0.15) itself lies in the true-prediction
        # region (gt >= nn), so the peak is asserted on the kernel directly.
        k = build_false_kernel(POLICY)
        assert gaussian_weight([0.3, 0.15], k) == pytest.approx(C_FALSE, rel=1e-14)

    def test_noisy_sample_weight_below_false_peak(self):
        probs = np.zeros(7)
        probs[1] = 0.95
        probs[0] = 0.02
        probs[2:] = 0.03 / 5
        for epoch in (0, 30, 60):
            w_noisy = naw_weight(probs, 0, epoch, POLICY)
            peak = gaussian_weight([0.3, 0.15], build_false_kernel(POLICY))
            assert w_noisy < peak

    def test_false_branch_used_when_wrong(self):
        probs = [0.2, 0.5, 0.3]
        k = build_false_kernel(POLICY)
        assert naw_weight(probs, 0, 7, POLICY) == pytest.approx(
            gaussian_weight([0.2, 0.5], k), rel=1e-15)

    def test_invariant_under_permuting_non_gt_entries(self):
        probs = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
        w = naw_weight(probs, 0, 11, POLICY)
        rng = Rng(31)
        for _ in range(20):
            tail = probs[1:].copy()
            tail = tail[rng.permutation(tail.size)]
            shuffled = np.concatenate([[probs[0]], tail])
            assert naw_weight(shuffled, 0, 11, POLICY) == pytest.approx(w, rel=1e-15)

    def test_bounded_by_branch_constants(self):
        rng = Rng(32)
        for _ in range(500):
            z = rng.normals(7, scale=4.0)
            probs = softmax(z)
            label = rng.below(7)
            epoch = rng.below(61)
            w = naw_weight(probs, label, epoch, POLICY)
            c_true = build_true_kernel(POLICY, epoch).norm_const
            c_false = build_false_kernel(POLICY).norm_const
            assert 0.0 < w <= max(c_true, c_false)

    @pytest.mark.parametrize("t", [0.05, 0.15, 0.35])
    def test_weight_grows_with_epoch_along_anti_diagonal(self, t):
        # Elongation toward y = -x plus the growing normalizing constant:
        # off the mean along y = -x, every epoch raises the weight.
        point = np.array([0.5 + t, 0.5 - t])
        w = [gaussian_weight(point, build_true_kernel(POLICY, e)) for e in range(61)]
        assert all(b > a for a, b in zip(w, w[1:]))

    @pytest.mark.parametrize("t", [0.4, 0.5])
    def test_weight_shrinks_with_epoch_along_diagonal(self, t):
        # Along y = x the exponent penalty and the growing normalizing
        # constant compete; the penalty wins at every schedule step for
        # displacements of roughly 0.4 and beyond.
        point = np.array([0.5 + t, 0.5 + t])
        w = [gaussian_weight(point, build_true_kernel(POLICY, e)) for e in range(61)]
        assert all(b < a for a, b in zip(w, w[1:]))

    @pytest.mark.parametrize("t", [0.05, 0.15, 0.35])
    def test_contour_shape_narrows_along_diagonal(self, t):
        # The shape statement holds at every displacement once the
        # normalizing constant is divided out.
        point = np.array([0.5 + t, 0.5 + t])
        shape = []
        for e in range(61):
            k = build_true_kernel(POLICY, e)
            shape.append(gaussian_weight(point, k) / k.norm_const)
        assert all(b < a for a, b in zip(shape, shape[1:]))

    def test_batch_matches_scalar(self):
        rng = Rng(33)
        z = rng.normals(40 * 7, scale=3.0).reshape(40, 7)
        probs = softmax(z)
        labels = np.array([rng.below(7) for _ in range(40)])
        batch = naw_weights(probs, labels, 21, POLICY)
        singles = [naw_weight(probs[i], labels[i], 21, POLICY) for i in range(40)]
        np.testing.assert_allclose(batch, singles, rtol=1e-15)


class TestWeightPolicyValidation:
    def test_defaults_are_valid(self):
        policy = WeightPolicy()
        assert policy.total_epochs == 60

    def test_bad_fields_rejected(self):
        with pytest.raises(ValueError):
            WeightPolicy(sigma_diag=0.0)
        with pytest.raises(ValueError):
            WeightPolicy(axis_ratio_true=0.9)
        with pytest.raises(ValueError):
            WeightPolicy(total_epochs=0)
