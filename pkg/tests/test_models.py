"""
Tests for core data models.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from core.exceptions import ConfigError, InsufficientRaters
from core.models.base import Family, ModelSpec, ParameterSet, RatingDataset
from core.models.results import CccBounds, FiducialDraw, IntervalMethod, IntervalResult, SolverDiagnostics
from core.models.run_config import Command, RunConfig
from core.models.scenario import Contaminant, ErrorModel, Scenario


class TestRatingDataset:
    """Tests for RatingDataset model."""

    def test_dims_and_stacking(self):
        """Test dims are (N, T, K, L) and stacking is rater-major."""
        ratings = np.arange(2 * 2 * 3 * 1, dtype=float).reshape(2, 2, 3, 1)
        data = RatingDataset(ratings=ratings)
        assert data.dims == (2, 3, 1, 2)
        assert data.stacked().shape == (2, 6)
        assert data.stacked()[0].tolist() == [0, 1, 2, 3, 4, 5]

    def test_rejects_wrong_rank(self):
        """Test a 3-d array is rejected."""
        with pytest.raises(ValidationError):
            RatingDataset(ratings=np.zeros((2, 2, 2)))

    def test_rejects_nan(self):
        """Test non-finite values are rejected."""
        ratings = np.zeros((2, 2, 2, 1))
        ratings[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            RatingDataset(ratings=ratings)

    def test_rejects_single_subject(self):
        """Test at least two subjects are required."""
        with pytest.raises(ValidationError):
            RatingDataset(ratings=np.zeros((1, 2, 2, 1)))

    def test_rejects_single_rater(self):
        """Test agreement data needs at least two raters."""
        with pytest.raises(InsufficientRaters):
            RatingDataset(ratings=np.zeros((3, 1, 2, 1)))

    def test_default_labels(self):
        """Test labels default to 1-based positions."""
        data = RatingDataset(ratings=np.zeros((3, 2, 1, 1)))
        assert data.subjects() == ["1", "2", "3"]
        assert data.raters() == ["1", "2"]

    def test_subset_keeps_labels(self):
        """Test subset selects raters and their labels."""
        ratings = np.random.default_rng(0).normal(size=(4, 3, 2, 1))
        data = RatingDataset(ratings=ratings, rater_labels=["a", "b", "c"])
        sub = data.subset([0, 2])
        assert sub.raters() == ["a", "c"]
        assert np.array_equal(sub.ratings, ratings[:, [0, 2]])

    def test_records_order(self):
        """Test long-format records run subject, time, replicate, rater."""
        data = RatingDataset(ratings=np.arange(8, dtype=float).reshape(2, 2, 2, 1))
        first = list(data.records())[:2]
        assert first[0] == ("1", 1, 1, "1", 0.0)
        assert first[1] == ("1", 1, 1, "2", 2.0)

    def test_check_family(self):
        """Test family support checks."""
        from core.exceptions import DomainError
        counts = RatingDataset(ratings=np.full((2, 2, 2, 1), 2.5))
        with pytest.raises(DomainError):
            counts.check_family(Family.POISSON)
        counts.check_family(Family.GAMMA)
        with pytest.raises(DomainError):
            RatingDataset(ratings=np.zeros((2, 2, 2, 1))).check_family(Family.GAMMA)


class TestModelSpec:
    """Tests for ModelSpec model."""

    def test_defaults(self):
        """Test default structure: Gaussian, two raters, random line."""
        spec = ModelSpec(n_times=4)
        assert spec.family == Family.GAUSSIAN
        assert spec.n_obs == 8
        assert spec.n_components == 2
        assert spec.has_interaction is False
        assert spec.n_predictor_blocks == 2

    def test_interaction_follows_replicates(self):
        """Test the subject-time effect is on by default only with replicates."""
        spec = ModelSpec(n_times=4, n_replicates=3)
        assert spec.has_interaction is True
        assert spec.n_predictor_blocks == 3
        assert ModelSpec(n_times=4, n_replicates=3, interaction=False).has_interaction is False

    def test_order_needs_time_points(self):
        """Test the spline order cannot exceed T - 1."""
        with pytest.raises(ValidationError):
            ModelSpec(n_times=2, spline_order=2)

    def test_stacked_design(self):
        """Test the stacked design repeats X per rater."""
        spec = ModelSpec(n_times=3, time_origin=0)
        assert spec.fixed_design.tolist() == [[1, 0], [1, 1], [1, 2]]
        assert spec.stacked_design.shape == (6, 4)

    def test_for_dataset(self):
        """Test dimensions are taken from the dataset."""
        data = RatingDataset(ratings=np.zeros((5, 3, 4, 2)))
        spec = ModelSpec.for_dataset(data, family=Family.POISSON)
        assert (spec.n_raters, spec.n_times, spec.n_replicates) == (3, 4, 2)
        assert spec.matches(data)


class TestParameterSet:
    """Tests for ParameterSet model."""

    def test_gamma_defaults_to_zero(self):
        """Test a missing subject-time covariance becomes zeros."""
        params = ParameterSet(beta=[[1, 0], [1, 0]], sigma_alpha=[[[1, 0], [0, 1]]])
        assert params.sigma_gamma.tolist() == [[0, 0], [0, 0]]
        assert params.spline_order == 0

    def test_rejects_asymmetric(self):
        """Test asymmetric covariances are rejected."""
        with pytest.raises(ValidationError):
            ParameterSet(beta=[[1], [1]], sigma_alpha=[[[1, 0.5], [0.2, 1]]])

    def test_rejects_indefinite(self):
        """Test indefinite covariances are rejected."""
        with pytest.raises(ValidationError):
            ParameterSet(beta=[[1], [1]], sigma_alpha=[[[1, 2], [2, 1]]])

    def test_rejects_shape_mismatch(self):
        """Test covariance size must match the number of raters."""
        with pytest.raises(ValidationError):
            ParameterSet(beta=[[1], [1], [1]], sigma_alpha=[[[1, 0], [0, 1]]])

    def test_check_against_spec(self):
        """Test parameters are checked against the model dimensions."""
        params = ParameterSet(beta=[[1], [1]], sigma_alpha=[[[1, 0], [0, 1]]])
        with pytest.raises(ValueError):
            params.check_against(ModelSpec(n_times=3))

    def test_subset_and_replace(self):
        """Test rater subsets and field replacement."""
        params = ParameterSet(
            beta=[[1, 0], [2, 0], [3, 0]],
            sigma_alpha=np.eye(3)[None] + 0.5,
            dispersion=0.2,
        )
        sub = params.subset([0, 2])
        assert sub.beta[:, 0].tolist() == [1, 3]
        assert sub.sigma_alpha[0].tolist() == [[1.5, 0.5], [0.5, 1.5]]
        assert params.replace(dispersion=0.4).dispersion == 0.4

    def test_round_trip_dict(self):
        """Test to_dict and from_dict agree."""
        params = ParameterSet(beta=[[1, 0], [2, 0]], sigma_alpha=[[[1, 0.2], [0.2, 1]]], dispersion=0.3)
        again = ParameterSet.from_dict(params.to_dict())
        assert np.array_equal(again.sigma_alpha, params.sigma_alpha)
        assert again.dispersion == 0.3


class TestResults:
    """Tests for interval and bound result models."""

    def test_bounds_symmetric(self):
        """Test bounds must be symmetric."""
        assert CccBounds(lower=-0.9, upper=0.9).contains(0.5)
        with pytest.raises(ValidationError):
            CccBounds(lower=-0.5, upper=0.9)

    def test_interval_ordering(self):
        """Test lower above upper is rejected."""
        with pytest.raises(ValidationError):
            IntervalResult(method=IntervalMethod.FISHER_Z, point=0.5, lower=0.6, upper=0.4, alpha=0.05)

    def test_interval_width_and_cover(self):
        """Test width and inclusion."""
        result = IntervalResult(method=IntervalMethod.FISHER_Z, point=0.5, lower=0.4, upper=0.7, alpha=0.05)
        assert result.width == pytest.approx(0.3)
        assert result.covers(0.4) and not result.covers(0.71)

    def test_draw_flat_names(self):
        """Test the flat view lists distinct entries only."""
        draw = FiducialDraw(
            beta_tilde=np.ones((2, 2)),
            sigma_alpha_tilde=np.stack([np.eye(2), np.eye(2)]),
            sigma_gamma_tilde=np.zeros((2, 2)),
            dispersion_tilde=0.1,
            solver=SolverDiagnostics(objective=0.0, iterations=1, converged=True, gradient_norm=0.0),
        )
        flat = draw.flat()
        assert len(flat) == 4 + 3 + 3 + 3 + 1
        assert flat["sigma_alpha1[12]"] == 0.0
        assert flat["dispersion"] == 0.1


class TestScenario:
    """Tests for Scenario and error models."""

    def test_family_must_match(self):
        """Test a Poisson error model cannot drive a Gaussian spec."""
        with pytest.raises(ValidationError):
            Scenario(
                name="bad",
                spec=ModelSpec(n_times=3),
                truth=ParameterSet(beta=[[1, 0], [1, 0]], sigma_alpha=np.stack([np.eye(2), np.eye(2)])),
                error_model=ErrorModel(kind="poisson"),
            )

    def test_mixture_needs_components(self):
        """Test an incomplete mixture is rejected."""
        with pytest.raises(ValidationError):
            ErrorModel(kind="mixture", weight=0.1)

    def test_contaminant_moments(self):
        """Test gamma and lognormal contaminant moments."""
        gamma = Contaminant(distribution="gamma", shape=0.5, scale=2.0)
        assert gamma.mean == 1.0
        assert gamma.variance == 2.0
        assert gamma.skewness == pytest.approx(2.828, abs=1e-3)
        lognormal = Contaminant(distribution="lognormal", loc=0.0, scale=0.5)
        assert lognormal.mean == pytest.approx(np.exp(0.125))

    def test_with_sizes(self, two_rater):
        """Test size overrides leave other fields alone."""
        small = two_rater.with_sizes([20], 5, 100)
        assert small.n_subjects == [20]
        assert small.n_replications == 5
        assert small.n_draws_per_interval == 100
        assert small.truth is two_rater.truth


class TestRunConfig:
    """Tests for RunConfig model."""

    def test_method_aliases(self):
        """Test method names accept aliases and strings."""
        config = RunConfig(command="interval", dataset="x.csv", methods="fiducial, fisher_z,bootstrap")
        assert config.methods == [IntervalMethod.FIDUCIAL_HDR, IntervalMethod.FISHER_Z, IntervalMethod.BOOTSTRAP_BC]

    def test_unknown_method(self):
        """Test unknown method names are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(command="interval", dataset="x.csv", methods="jackknife")

    def test_inputs_required(self):
        """Test data commands need a dataset and simulate a scenario."""
        with pytest.raises(ValidationError):
            RunConfig(command="fit")
        with pytest.raises(ValidationError):
            RunConfig(command="simulate")
        assert RunConfig(command=Command.SIMULATE, scenario="gaussian_two_rater").scenario == "gaussian_two_rater"

    def test_alpha_range(self):
        """Test alpha must lie in (0, 1)."""
        with pytest.raises(ValidationError):
            RunConfig(command="fit", dataset="x.csv", alpha=1.5)

    def test_unknown_key(self):
        """Test unknown settings are rejected."""
        with pytest.raises(ValidationError):
            RunConfig(command="fit", dataset="x.csv", n_draw=5)

    def test_with_seed(self):
        """Test a seed is generated once and kept."""
        config = RunConfig(command="fit", dataset="x.csv").with_seed()
        assert config.seed is not None
        assert config.with_seed().seed == config.seed

    def test_sizes_from_string(self):
        """Test study sizes parse from a comma list."""
        config = RunConfig(command="simulate", scenario="s", n_subjects="15, 30")
        assert config.n_subjects == [15, 30]

    def test_sizes_need_two_subjects(self):
        """Test every study size has at least two subjects."""
        with pytest.raises(ValidationError):
            RunConfig(command="simulate", scenario="s", n_subjects="1,30")

    def test_monte_carlo_floor(self):
        """Test n_mc below the minimum is rejected."""
        with pytest.raises(ValidationError):
            RunConfig(command="bounds", dataset="x.csv", n_mc=100)

    def test_model_spec_mismatch(self):
        """Test a spline order the dataset cannot carry is a configuration error."""
        config = RunConfig(command="fit", dataset="x.csv", spline_order=3)
        with pytest.raises(ConfigError):
            config.model_spec(RatingDataset(ratings=np.zeros((3, 2, 2, 1))))
