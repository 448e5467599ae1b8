"""
Simulation scenario and coverage report models.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from config.constants import DEFAULT_DRAWS_PER_INTERVAL, DEFAULT_REPLICATIONS
from .base import Family, ModelSpec, ParameterSet


# =============================================================================
# ERROR MODELS
# =============================================================================

class ErrorKind(str, Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    GAMMA = "gamma"
    MIXTURE = "mixture"


class Contaminant(BaseModel):
    """Skewed mixture component: gamma(shape, scale) or lognormal(loc, scale) on the log scale."""
    distribution: str = Field(pattern="^(gamma|lognormal)$")
    shape: Optional[float] = Field(default=None, gt=0)
    loc: Optional[float] = None
    scale: float = Field(gt=0)

    @model_validator(mode="after")
    def _parameters(self) -> "Contaminant":
        if self.distribution == "gamma" and self.shape is None:
            raise ValueError("gamma contaminant needs a shape")
        if self.distribution == "lognormal" and self.loc is None:
            raise ValueError("lognormal contaminant needs a loc")
        return self

    @property
    def mean(self) -> float:
        if self.distribution == "gamma":
            return self.shape * self.scale
        return float(np.exp(self.loc + self.scale ** 2 / 2))

    @property
    def variance(self) -> float:
        if self.distribution == "gamma":
            return self.shape * self.scale ** 2
        s2 = self.scale ** 2
        return float((np.exp(s2) - 1) * np.exp(2 * self.loc + s2))

    @property
    def skewness(self) -> float:
        if self.distribution == "gamma":
            return 2.0 / np.sqrt(self.shape)
        e = np.exp(self.scale ** 2)
        return float((e + 2) * np.sqrt(e - 1))

    def draw_centered(self, size: Any, rng: np.random.Generator) -> np.ndarray:
        if self.distribution == "gamma":
            x = rng.gamma(self.shape, self.scale, size=size)
        else:
            x = rng.lognormal(self.loc, self.scale, size=size)
        return x - self.mean


class ErrorModel(BaseModel):
    """How observations are drawn around the linear predictor."""
    kind: ErrorKind = ErrorKind.GAUSSIAN
    weight: Optional[float] = Field(default=None, gt=0, lt=1, description="Contaminant probability")
    gaussian_variance: Optional[float] = Field(default=None, gt=0)
    contaminant: Optional[Contaminant] = None

    @model_validator(mode="after")
    def _mixture_fields(self) -> "ErrorModel":
        if self.kind == ErrorKind.MIXTURE:
            if self.weight is None or self.gaussian_variance is None or self.contaminant is None:
                raise ValueError("mixture error model needs weight, gaussian_variance and contaminant")
        return self

    @property
    def family(self) -> Family:
        if self.kind == ErrorKind.MIXTURE:
            return Family.GAUSSIAN
        return Family(self.kind.value)


# =============================================================================
# SCENARIOS
# =============================================================================

class Scenario(BaseModel):
    """One simulation setting: model, true parameters, error law and study sizes."""
    name: str
    description: str = ""
    spec: ModelSpec
    truth: ParameterSet
    error_model: ErrorModel = Field(default_factory=ErrorModel)
    n_subjects: List[int] = Field(default_factory=lambda: [30])
    n_replications: int = Field(default=DEFAULT_REPLICATIONS, ge=1)
    n_draws_per_interval: int = Field(default=DEFAULT_DRAWS_PER_INTERVAL, ge=1)
    reported: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        self.truth.check_against(self.spec)
        if self.error_model.family != self.spec.family:
            raise ValueError(f"error model {self.error_model.kind.value} does not fit family {self.spec.family.value}")
        if any(n < 2 for n in self.n_subjects):
            raise ValueError("every study size needs at least 2 subjects")
        return self

    def with_sizes(self, n_subjects: Optional[List[int]] = None, n_replications: Optional[int] = None,
                   n_draws: Optional[int] = None) -> "Scenario":
        update: Dict[str, Any] = {}
        if n_subjects:
            update["n_subjects"] = list(n_subjects)
        if n_replications:
            update["n_replications"] = n_replications
        if n_draws:
            update["n_draws_per_interval"] = n_draws
        return self.model_copy(update=update)


# =============================================================================
# COVERAGE REPORTS
# =============================================================================

class CoverageRow(BaseModel):
    method: str
    n_subjects: int
    mean_lower: float
    mean_upper: float
    expected_width: float = Field(ge=0)
    coverage: float = Field(ge=0, le=1)
    coverage_ci: Tuple[float, float]
    n_completed: int
    n_failed: int = 0


class CoverageReport(BaseModel):
    scenario: str
    true_ccc: float
    seed: int
    n_replications: int
    rows: List[CoverageRow] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    def row(self, method: str, n_subjects: int) -> CoverageRow:
        for r in self.rows:
            if r.method == method and r.n_subjects == n_subjects:
                return r
        raise KeyError(f"no row for {method} at N={n_subjects}")
