"""Tests for alignment, error metrics, noise scales and perturbation bounds."""

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from gom_spectral.data_model import BlockPartition, ModelParams
from gom_spectral.exceptions import RankDeficiencyError, ValidationError
from gom_spectral.linalg import truncated_svd
from gom_spectral.metrics import (
    align_permutation,
    aligned_error,
    bivariate_normal_cdf,
    condition_number,
    incoherence,
    l2inf,
    mae,
    maxabs,
    noise_stats,
    permutation_matrix,
    residual_covariance,
    scaled_frobenius,
    theory_bounds,
)
from gom_spectral.simulate import sample_dirichlet


# =========================================================================
# Alignment and error norms
# =========================================================================


class TestAlignPermutation:
    def test_identity(self, rng):
        A = sample_dirichlet(np.ones(4), 20, rng)
        assert_array_equal(align_permutation(A, A), [0, 1, 2, 3])

    def test_recovers_a_column_shuffle(self, rng):
        A = sample_dirichlet(np.ones(3), 30, rng)
        B = A[:, [2, 0, 1]]
        perm = align_permutation(A, B)
        assert_allclose(B[:, perm], A)
        assert_allclose(B @ permutation_matrix(perm), A)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.random((15, 4))
        B = rng.random((15, 4))
        perm = align_permutation(A, B)

        def cost(p):
            return np.abs(A - B[:, list(p)]).sum()

        best = min(cost(p) for p in itertools.permutations(range(4)))
        assert cost(perm) == pytest.approx(best)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            align_permutation(np.ones((3, 2)), np.ones((3, 3)))


class TestNorms:
    def test_l2inf_uses_row_norms(self):
        assert l2inf(np.array([[3.0, 4.0], [1.0, 0.0]]), np.zeros((2, 2))) == 5.0

    def test_maxabs_and_mae(self):
        A = np.array([[1.0, -2.0], [0.5, 0.0]])
        assert maxabs(A, np.zeros((2, 2))) == 2.0
        assert mae(A, np.zeros((2, 2))) == pytest.approx(0.875)

    def test_scaled_frobenius(self):
        assert scaled_frobenius(np.ones((2, 3)), np.zeros((2, 1)), np.zeros((3, 1))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            l2inf(np.ones((2, 2)), np.ones((3, 2)))

    def test_aligned_error_of_shuffled_truth(self, small_noiseless):
        params, _ = small_noiseless
        order = [1, 2, 0]
        error = aligned_error(
            params.memberships[:, order], params.item_params[:, order], params
        )
        assert error.l2inf_pi == 0.0
        assert error.maxabs_theta == 0.0
        assert error.frob_scaled == pytest.approx(0.0, abs=1e-14)
        assert set(error.as_dict()) == {
            "l2inf_pi",
            "maxabs_theta",
            "mae_pi",
            "mae_theta",
            "frob_scaled",
        }


# =========================================================================
# Structure of R*
# =========================================================================


class TestIncoherence:
    def test_basis_rows_are_maximally_coherent(self):
        U = np.eye(6)[:, :2]
        V = np.eye(4)[:, :2]
        assert incoherence(U, V) == pytest.approx((3.0, 2.0))

    def test_spread_rows_are_incoherent(self):
        U = 0.5 * np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [1.0, -1.0]])
        mu1, mu2 = incoherence(U, U)
        assert mu1 == pytest.approx(1.0)
        assert mu2 == pytest.approx(1.0)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError):
            incoherence(np.ones((4, 2)), np.eye(4)[:, :2])


class TestConditionNumber:
    def test_diagonal(self):
        assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)

    def test_ignores_null_directions(self):
        assert condition_number(np.diag([4.0, 2.0, 0.0])) == pytest.approx(2.0)


class TestResidualCovariance:
    def test_exact_fit_has_zero_covariance(self, small_noiseless):
        params, _ = small_noiseless
        R = params.mean_matrix()
        cov = residual_covariance(R, params.memberships, params.item_params, (0, 3))
        assert cov.shape == (3, 3)
        assert_allclose(cov, 0.0, atol=1e-24)

    def test_single_column(self, rng):
        R = rng.random((50, 4))
        cov = residual_covariance(R, np.zeros((50, 1)), np.zeros((4, 1)), range(2, 3))
        assert cov.shape == (1, 1)
        assert cov[0, 0] == pytest.approx(np.var(R[:, 2], ddof=1))

    def test_empty_range(self):
        with pytest.raises(ValidationError):
            residual_covariance(np.ones((3, 4)), np.ones((3, 1)), np.ones((4, 1)), (2, 2))

    @pytest.mark.parametrize("columns", [(2, 5), (-1, 2), range(3, 6)])
    def test_range_outside_the_data(self, columns):
        with pytest.raises(ValidationError):
            residual_covariance(np.ones((3, 4)), np.ones((3, 1)), np.ones((4, 1)), columns)


# =========================================================================
# Noise scales and bounds
# =========================================================================


class TestBivariateNormalCdf:
    @pytest.mark.parametrize("rho", [-0.7, -0.2, 0.3, 0.5, 0.9])
    def test_origin_closed_form(self, rho):
        expected = 0.25 + np.arcsin(rho) / (2 * np.pi)
        assert bivariate_normal_cdf(0.0, 0.0, rho) == pytest.approx(expected, abs=1e-12)

    def test_independent_case_is_a_product(self):
        h = np.array([-1.0, 0.3, 2.0])
        k = np.array([0.5, -0.4, 1.0])
        expected = stats.norm.cdf(h) * stats.norm.cdf(k)
        assert_allclose(bivariate_normal_cdf(h, k, 0.0), expected, atol=1e-12)

    @pytest.mark.parametrize(
        "h, k, rho",
        [(-1.0, 0.5, 0.4), (0.8, -1.2, -0.6), (1.5, 2.0, 0.8), (-0.3, -2.1, 0.25), (0.0, 1.0, 0.5)],
    )
    def test_matches_scipy(self, h, k, rho):
        expected = stats.multivariate_normal(
            mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]]
        ).cdf([h, k])
        assert bivariate_normal_cdf(h, k, rho) == pytest.approx(expected, abs=1e-4)


def _single_profile(theta, family, partition=None, n=5):
    return ModelParams(np.ones((n, 1)), np.asarray(theta, dtype=float), family, partition)


class TestNoiseStats:
    def test_poisson(self):
        noise = noise_stats(_single_profile([[4.0], [1.0]], "poisson"))
        assert noise.sigma == pytest.approx(2.0)
        assert noise.sigma_tilde == noise.sigma
        assert noise.B >= 4.0
        assert noise.M == 1

    def test_binomial(self):
        noise = noise_stats(_single_profile([[0.5], [0.1]], "binomial"))
        assert noise.sigma == pytest.approx(np.sqrt(0.125))
        assert noise.B == pytest.approx(0.9)

    def test_independent_bernoulli(self):
        noise = noise_stats(_single_profile([[0.5], [0.2]], "bernoulli"))
        assert noise.sigma == pytest.approx(0.5)
        assert noise.sigma_tilde == pytest.approx(0.5)

    def test_one_hot_block(self):
        truth = _single_profile([[0.5], [0.5]], "polytomous", BlockPartition((2,)))
        noise = noise_stats(truth)
        assert noise.sigma == pytest.approx(0.5)
        assert noise.sigma_tilde == pytest.approx(np.sqrt(0.5))
        assert noise.M == 2

    def test_copula_blocks_without_dependence(self):
        truth = _single_profile([[0.5]] * 4, "bernoulli", BlockPartition.uniform(4, 2))
        noise = noise_stats(truth, rho=0.0)
        assert noise.sigma_tilde == noise.sigma
        assert noise.M == 2

    def test_copula_blocks_with_dependence(self):
        # off-diagonal covariance at means 1/2 and rho 1/2 is 1/12
        truth = _single_profile([[0.5]] * 4, "bernoulli", BlockPartition.uniform(4, 2))
        noise = noise_stats(truth, rho=0.5)
        assert noise.sigma_tilde == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-9)


class TestTheoryBounds:
    def test_exact_factors_have_no_perturbation(self, small_noiseless):
        params, _ = small_noiseless
        factors = truncated_svd(params.mean_matrix(), 3)
        report = theory_bounds(params, noise_stats(params), factors)
        assert report.xi1 > 0 and report.xi2 > 0 and report.xi3 > 0
        assert report.empirical_u <= 1e-10
        assert report.empirical_entry <= 1e-10
        assert report.ratio_u <= 1e-8
        assert report.mu1_within_kappa_bound
        assert report.M == 3

    def test_deterministic_entries_give_nan_ratios(self):
        memberships = np.vstack([np.eye(2), np.eye(2)])
        theta = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        params = ModelParams(memberships, theta, "bernoulli")
        factors = truncated_svd(params.mean_matrix(), 2)
        report = theory_bounds(params, noise_stats(params), factors)
        assert (report.xi1, report.xi2, report.xi3) == (0.0, 0.0, 0.0)
        assert np.isnan(report.ratio_u)
        assert np.isnan(report.ratio_entry)

    def test_rank_deficient_truth(self, rng):
        memberships = sample_dirichlet(np.ones(2), 20, rng)
        theta = np.tile(rng.uniform(0.2, 0.8, size=(6, 1)), (1, 2))
        params = ModelParams(memberships, theta, "bernoulli")
        with pytest.raises(RankDeficiencyError):
            theory_bounds(params, noise_stats(params), truncated_svd(params.mean_matrix(), 2))
