"""
Tests for the finite-difference Newton-CG solver and the recovery objective gradient.
"""

import numpy as np
import pytest

from config.scenarios import list_scenarios, load_scenario
from core.covariance import error_diagonal, implied_predictor_covariance
from core.fiducial import RecoveryObjective
from core.models.base import Family
from core.models.results import PredictorCovTarget
from core.optimize import finite_difference_gradient, hessian_vector_product, newton_cg
from core.sampling import conditional_means
from core.simulation import truth_parameters


def rosenbrock(x):
    return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


def richardson_gradient(fun, x, h=1e-3):
    """Central differences at h and h/2 combined to cancel the h^2 error term."""
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1.0
        coarse = (fun(x + h * e) - fun(x - h * e)) / (2 * h)
        fine = (fun(x + 0.5 * h * e) - fun(x - 0.5 * h * e)) / h
        grad[i] = (4 * fine - coarse) / 3
    return grad


def truth_objective(name):
    """Recovery objective whose target is the implied predictor covariance at the scenario truth."""
    scenario = load_scenario(name)
    spec, truth = scenario.spec, truth_parameters(scenario)
    means = None
    if spec.family != Family.GAUSSIAN:
        eta = (truth.beta @ spec.fixed_design.T)[None]
        means = conditional_means(spec.family, eta).reshape(1, -1)
    diag = error_diagonal(spec, truth.dispersion, means)
    delta = implied_predictor_covariance(spec, truth, diag)
    target = PredictorCovTarget(delta_tilde=delta, mask=np.ones(delta.shape, dtype=bool))
    return RecoveryObjective(target, spec, diag), truth


class TestFiniteDifferences:
    """Tests for gradient and Hessian-vector approximations."""

    def test_gradient_of_quadratic(self):
        """Test the central-difference gradient of x^T A x."""
        a = np.array([[3.0, 1.0], [1.0, 2.0]])
        x = np.array([0.5, -1.5])
        grad = finite_difference_gradient(lambda z: float(z @ a @ z), x)
        assert grad == pytest.approx(2 * a @ x, rel=1e-6)

    def test_hessian_vector(self):
        """Test H d for a quadratic."""
        a = np.array([[3.0, 1.0], [1.0, 2.0]])
        hd = hessian_vector_product(lambda z: 2 * a @ z, np.zeros(2), np.array([1.0, 2.0]))
        assert hd == pytest.approx(2 * a @ np.array([1.0, 2.0]))

    def test_zero_direction(self):
        """Test a zero direction gives a zero product."""
        assert hessian_vector_product(lambda z: z, np.ones(2), np.zeros(2)).tolist() == [0.0, 0.0]


class TestNewtonCg:
    """Tests for the Newton-CG driver."""

    def test_quadratic(self):
        """Test convergence to the minimizer of a quadratic."""
        target = np.array([1.0, -2.0, 3.0])
        result = newton_cg(lambda x: float(np.sum((x - target) ** 2)), np.zeros(3))
        assert result.converged
        assert result.x == pytest.approx(target, abs=1e-6)

    def test_rosenbrock(self):
        """Test the line search carries Newton through a curved valley."""
        result = newton_cg(rosenbrock, np.array([-1.2, 1.0]), gtol=1e-5)
        assert result.converged
        assert result.x == pytest.approx([1.0, 1.0], abs=1e-4)
        assert result.fun < rosenbrock(np.array([-1.2, 1.0]))

    def test_start_at_minimum(self):
        """Test a stationary start returns without iterating."""
        result = newton_cg(lambda x: float(x @ x), np.zeros(2))
        assert result.converged
        assert result.iterations == 0

    def test_nonfinite_start(self):
        """Test a non-finite start reports failure."""
        result = newton_cg(lambda x: np.inf, np.zeros(2))
        assert not result.converged

    def test_iteration_limit(self):
        """Test the iteration cap is reported as non-convergence."""
        result = newton_cg(rosenbrock, np.array([-1.2, 1.0]), max_iter=2)
        assert not result.converged
        assert result.iterations <= 2


class TestRecoveryGradient:
    """Tests for the finite-difference gradient of the variance-recovery objective."""

    @pytest.mark.parametrize("name", list_scenarios())
    def test_matches_richardson_oracle(self, name):
        """Test the gradient at 10 random log-Cholesky points agrees with an extrapolated oracle."""
        objective, truth = truth_objective(name)
        center = objective.start(truth)
        rng = np.random.default_rng(17)
        for _ in range(10):
            v = center + rng.normal(scale=0.3, size=center.size)
            grad = objective.gradient(v)
            oracle = richardson_gradient(objective, v)
            assert np.linalg.norm(grad - oracle) < 1e-5 * np.linalg.norm(oracle)

    def test_vanishes_at_truth(self):
        """Test the noiseless target is a stationary point."""
        objective, truth = truth_objective("gaussian_two_rater")
        v = objective.start(truth)
        assert objective(v) == pytest.approx(0.0, abs=1e-12)
        assert np.max(np.abs(objective.gradient(v))) < 1e-6
