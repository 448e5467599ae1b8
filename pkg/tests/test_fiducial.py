"""
Tests for the fiducial pivots: Wishart, predictor covariance, variance recovery,
fixed effects, dispersion and joint draws.
"""

import numpy as np
import pytest
from scipy import stats

from core.covariance import implied_predictor_covariance
from core.estimation import predict_conditional_means
from core.exceptions import RankDeficientScatter
from core.fiducial import (
    bartlett_factor,
    beta_pivot_covariance,
    draw_with_retries,
    fiducial_parameter_intervals,
    gamma_shape_pivot,
    gamma_shape_standard_error,
    gaussian_dispersion_pivot,
    pivot_error_diagonal,
    predictor_scatter,
    recover_variance_components,
    sample_beta_fiducial,
    sample_dispersion_fiducial,
    sample_joint_draw,
    sample_predictor_cov_fiducial,
    sample_wishart_fiducial,
    symmetric_sqrt,
    wishart_pivot,
)
from core.models.base import DrawMode, Family
from core.models.results import PredictorCovTarget, PredictorSet, WishartObservation


class TestWishartPivot:
    """Tests for the Wishart fiducial draw."""

    def test_bartlett_factor_shape(self):
        """Test V is lower triangular with a positive diagonal."""
        v = bartlett_factor(4, 10, np.random.default_rng(0))
        assert np.allclose(np.triu(v, k=1), 0)
        assert np.all(np.diag(v) > 0)

    def test_substitution_returns_sigma(self):
        """Test plugging in the observed Bartlett factor gives Sigma back."""
        rng = np.random.default_rng(2)
        sigma = np.array([[0.45, 0.40, 0.1], [0.40, 0.49, 0.05], [0.1, 0.05, 0.3]])
        a = np.linalg.cholesky(sigma)
        u = bartlett_factor(3, 12, rng)
        scatter = a @ u @ u.T @ a.T
        t_s = np.linalg.cholesky(scatter)
        assert np.allclose(wishart_pivot(t_s, u), sigma, atol=1e-10)

    def test_scalar_law(self):
        """Test p = 1 draws follow s / chi2(n) (Kolmogorov-Smirnov at 1%)."""
        obs = WishartObservation(scatter=np.array([[10.0]]), df=5)
        rng = np.random.default_rng(2024)
        draws = np.array([sample_wishart_fiducial(obs, rng)[0, 0] for _ in range(10_000)])
        statistic = stats.kstest(10.0 / draws, "chi2", args=(5,)).statistic
        assert statistic < stats.kstwo.ppf(0.99, draws.size)

    def test_draws_are_positive_definite(self):
        """Test draws are symmetric positive definite."""
        obs = WishartObservation(scatter=np.array([[5.0, 2.0], [2.0, 4.0]]), df=8)
        draw = sample_wishart_fiducial(obs, np.random.default_rng(3))
        assert np.allclose(draw, draw.T)
        assert np.linalg.eigvalsh(draw)[0] > 0

    def test_df_below_dimension(self):
        """Test df smaller than the dimension is rejected."""
        with pytest.raises(RankDeficientScatter):
            WishartObservation(scatter=np.eye(3), df=2)


class TestPredictorCovariance:
    """Tests for the predictor covariance pivot."""

    def test_scatter_about_zero(self):
        """Test the scatter uses a known zero mean with df = N."""
        predictors = PredictorSet(mu_alpha=np.arange(12, dtype=float).reshape(6, 1, 2) / 10)
        obs = predictor_scatter(predictors)
        stacked = predictors.stacked()
        assert obs.df == 6
        assert np.allclose(obs.scatter, stacked.T @ stacked)

    def test_rank_deficient(self):
        """Test too few subjects for the stacked dimension."""
        predictors = PredictorSet(mu_alpha=np.random.default_rng(0).normal(size=(3, 2, 2)))
        with pytest.raises(RankDeficientScatter):
            predictor_scatter(predictors)

    def test_joint_mask(self, two_rater, gaussian_fit):
        """Test joint mode targets every entry."""
        predictors = predict_conditional_means(gaussian_fit, two_rater.spec)
        target = sample_predictor_cov_fiducial(predictors, np.random.default_rng(1), DrawMode.JOINT)
        assert target.mask.all()
        assert len(target.target_indices()[0]) == 10

    def test_proxy_mask(self, two_rater, gaussian_fit):
        """Test proxy mode targets the diagonal blocks only."""
        predictors = predict_conditional_means(gaussian_fit, two_rater.spec)
        target = sample_predictor_cov_fiducial(predictors, np.random.default_rng(1), DrawMode.PROXY)
        assert target.mask[:2, :2].all() and target.mask[2:, 2:].all()
        assert not target.mask[:2, 2:].any()
        assert np.all(target.delta_tilde[:2, 2:] == 0)


class TestVarianceRecovery:
    """Tests for least-squares recovery of the variance components."""

    def test_substitution_returns_estimates(self, two_rater, gaussian_fit):
        """Test the implied covariance at the estimates recovers the estimates."""
        spec = two_rater.spec
        estimates = gaussian_fit.estimates
        delta = implied_predictor_covariance(spec, estimates, gaussian_fit.error_diag)
        target = PredictorCovTarget(delta_tilde=delta, mask=np.ones(delta.shape, dtype=bool))
        recovery = recover_variance_components(target, spec, estimates.dispersion, gaussian_fit)
        assert recovery.converged
        assert np.allclose(recovery.sigma_alpha, estimates.sigma_alpha, atol=1e-4)

    def test_pivot_error_diagonal(self, two_rater, gaussian_fit):
        """Test the Gaussian diagonal follows the dispersion pivot."""
        diag = pivot_error_diagonal(two_rater.spec, gaussian_fit, 0.2)
        assert np.all(diag == 0.2)


class TestFixedEffectPivot:
    """Tests for the fixed-effect pivot."""

    def test_zero_noise_returns_estimate(self, two_rater, gaussian_fit):
        """Test Z = 0 reproduces beta-hat exactly."""
        beta = sample_beta_fiducial(gaussian_fit, two_rater.spec, gaussian_fit.estimates, None, z=np.zeros(4))
        assert np.array_equal(beta, gaussian_fit.estimates.beta)

    def test_covariance_matches_gls(self, two_rater, gaussian_fit):
        """Test the pivot covariance at the estimates equals the GLS covariance."""
        cov = beta_pivot_covariance(gaussian_fit, two_rater.spec, gaussian_fit.estimates)
        assert np.allclose(cov, gaussian_fit.beta_covariance, rtol=1e-6, atol=1e-12)

    def test_symmetric_sqrt(self):
        """Test the spectral square root squares back."""
        m = np.array([[2.0, 0.5], [0.5, 1.0]])
        root = symmetric_sqrt(m)
        assert np.allclose(root @ root, m)
        assert np.allclose(root, root.T)


class TestDispersionPivot:
    """Tests for the dispersion pivots."""

    def test_gaussian_substitution(self):
        """Test U = m returns sigma2-hat."""
        assert gaussian_dispersion_pivot(40, 0.11, 40.0) == pytest.approx(0.11)

    def test_gamma_substitution(self):
        """Test Z = 0 returns tau-hat."""
        assert gamma_shape_pivot(25.0, 1.3, 0.0) == 25.0

    def test_gamma_standard_error(self):
        """Test the delta-method standard error."""
        assert gamma_shape_standard_error(25.0, 100) == pytest.approx(25.0 * np.sqrt((2 + 6 / 25) / 100))

    def test_gaussian_draw_law(self, two_rater, gaussian_fit):
        """Test m sigma2-hat / sigma2~ is chi2(m) on average."""
        rng = np.random.default_rng(4)
        m = gaussian_fit.dispersion_df
        draws = np.array([sample_dispersion_fiducial(gaussian_fit, two_rater.spec, rng) for _ in range(4000)])
        u = m * gaussian_fit.dispersion_estimate / draws
        assert u.mean() == pytest.approx(m, rel=0.02)

    def test_poisson_is_one(self, two_rater, gaussian_fit):
        """Test the Poisson dispersion is fixed at 1."""
        spec = two_rater.spec.model_copy(update={"family": Family.POISSON})
        assert sample_dispersion_fiducial(gaussian_fit, spec, np.random.default_rng(0)) == 1.0


class TestJointDraw:
    """Tests for complete fiducial draws."""

    def test_draw_is_valid(self, two_rater, gaussian_fit):
        """Test one draw yields a valid parameter set."""
        draw = sample_joint_draw(gaussian_fit, two_rater.spec, np.random.default_rng(9))
        params = draw.as_parameters()
        params.check_against(two_rater.spec)
        assert draw.solver.converged
        assert draw.dispersion_tilde > 0
        assert np.linalg.eigvalsh(params.sigma_alpha[0])[0] > 0

    def test_retries_are_deterministic(self, two_rater, gaussian_fit):
        """Test the same seed and index give the same draw."""
        predictors = predict_conditional_means(gaussian_fit, two_rater.spec)
        first, _ = draw_with_retries(gaussian_fit, two_rater.spec, 77, (3,), DrawMode.JOINT, predictors)
        again, _ = draw_with_retries(gaussian_fit, two_rater.spec, 77, (3,), DrawMode.JOINT, predictors)
        assert np.array_equal(first.beta_tilde, again.beta_tilde)
        assert np.array_equal(first.sigma_alpha_tilde, again.sigma_alpha_tilde)

    def test_parameter_intervals(self, two_rater, gaussian_fit):
        """Test equal-tailed intervals cover every named pivot."""
        draws = [sample_joint_draw(gaussian_fit, two_rater.spec, np.random.default_rng(i)) for i in range(5)]
        intervals = fiducial_parameter_intervals(draws, 0.1)
        assert set(intervals) == set(draws[0].flat())
        assert all(lo <= hi for lo, hi in intervals.values())
        assert fiducial_parameter_intervals([], 0.1) == {}
