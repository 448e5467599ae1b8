"""
Result models: fitted model, predictors, fiducial draws, CCC values and intervals.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from core.exceptions import DegenerateScatter, NotPositiveDefinite, RankDeficientScatter
from .base import ParameterSet

_ARRAYS = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _as_array(v: Any) -> Any:
    return None if v is None else np.asarray(v, dtype=float)


# =============================================================================
# MODEL CORE
# =============================================================================

class MarginalCovariance(BaseModel):
    """Sigma_{Y*}: L x L grid of KT x KT blocks plus the error diagonal it contains."""
    model_config = _ARRAYS

    sigma_ystar: np.ndarray
    error_diag: np.ndarray
    kt: int = Field(ge=1)

    chol_lower: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _factor(self) -> "MarginalCovariance":
        if self.chol_lower is None:
            try:
                factor = linalg.cholesky(self.sigma_ystar, lower=True, check_finite=True)
            except (linalg.LinAlgError, ValueError) as e:
                raise NotPositiveDefinite(f"Sigma_Y* is not positive definite: {e}") from e
            object.__setattr__(self, "chol_lower", factor)
        return self

    @property
    def n_raters(self) -> int:
        return self.sigma_ystar.shape[0] // self.kt

    def block(self, l: int, m: int) -> np.ndarray:
        kt = self.kt
        return self.sigma_ystar[l * kt:(l + 1) * kt, m * kt:(m + 1) * kt]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Sigma_{Y*}^{-1} rhs using the cached Cholesky factor."""
        return linalg.cho_solve((self.chol_lower, True), rhs)


# =============================================================================
# ESTIMATION
# =============================================================================

class FitResult(BaseModel):
    """Converged fit of the (linearized) mixed model."""
    model_config = _ARRAYS

    estimates: ParameterSet
    pseudo_obs: np.ndarray              # (N, KTL)
    fitted_means: np.ndarray            # (N, KTL) conditional means on the response scale
    linear_predictor: np.ndarray        # (N, KTL) conditional linear predictor
    residuals: np.ndarray               # (N, KTL) y* minus fixed and predicted random parts
    error_diag: np.ndarray              # (KTL,) plug-in error diagonal used downstream
    beta_covariance: np.ndarray         # (Ld, Ld) GLS covariance of beta-hat
    dispersion_estimate: float          # sigma^2 (residual), 1, or Pearson tau
    dispersion_df: int
    iterations: int = 0
    convergence_gap: float = 0.0
    reml_iterations: int = 0
    objective: float = 0.0
    trace: List[float] = Field(default_factory=list)

    @property
    def n_subjects(self) -> int:
        return self.pseudo_obs.shape[0]


class PredictorSet(BaseModel):
    """Conditional-mean predictors of the subject-level random effects."""
    model_config = _ARRAYS

    mu_alpha: np.ndarray                 # (N, S+1, L)
    mu_gamma: Optional[np.ndarray] = None   # (N, L); absent without a subject-time effect

    @field_validator("mu_alpha", "mu_gamma", mode="before")
    @classmethod
    def _coerce(cls, v: Any) -> Any:
        return _as_array(v)

    @property
    def n_subjects(self) -> int:
        return self.mu_alpha.shape[0]

    @property
    def n_raters(self) -> int:
        return self.mu_alpha.shape[2]

    @property
    def n_blocks(self) -> int:
        return self.mu_alpha.shape[1] + (0 if self.mu_gamma is None else 1)

    def stacked(self) -> np.ndarray:
        """(N, q) matrix: alpha_0 predictors, ..., alpha_S predictors, then gamma predictors."""
        parts = [self.mu_alpha.reshape(self.n_subjects, -1)]
        if self.mu_gamma is not None:
            parts.append(self.mu_gamma)
        return np.hstack(parts)

    def block(self, b: int) -> np.ndarray:
        """(N, L) predictors of block b."""
        if b < self.mu_alpha.shape[1]:
            return self.mu_alpha[:, b, :]
        return self.mu_gamma


# =============================================================================
# FIDUCIAL
# =============================================================================

class WishartObservation(BaseModel):
    """Scatter matrix S with its degrees of freedom and Cholesky factor t_s."""
    model_config = _ARRAYS

    scatter: np.ndarray
    df: int = Field(ge=1)
    chol_factor: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _factor(self) -> "WishartObservation":
        p = self.scatter.shape[0]
        if self.df < p:
            raise RankDeficientScatter(f"df {self.df} is smaller than the dimension {p}")
        if self.chol_factor is None:
            try:
                factor = np.linalg.cholesky(0.5 * (self.scatter + self.scatter.T))
            except np.linalg.LinAlgError as e:
                raise DegenerateScatter(f"scatter matrix is not positive definite: {e}") from e
            object.__setattr__(self, "chol_factor", factor)
        if np.any(np.diag(self.chol_factor) <= 0):
            raise DegenerateScatter("Cholesky factor has a non-positive diagonal")
        return self

    @property
    def dim(self) -> int:
        return self.scatter.shape[0]


class PredictorCovTarget(BaseModel):
    """One fiducial draw of the stacked predictor covariance, with the entries the fit should match."""
    model_config = _ARRAYS

    delta_tilde: np.ndarray
    mask: np.ndarray                # boolean (q, q): True where the entry is a fitting target

    @property
    def dim(self) -> int:
        return self.delta_tilde.shape[0]

    def target_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distinct (upper-triangular) entries used by the least-squares fit."""
        rows, cols = np.triu_indices(self.dim)
        keep = self.mask[rows, cols]
        return rows[keep], cols[keep]


class SolverDiagnostics(BaseModel):
    objective: float
    iterations: int
    converged: bool
    gradient_norm: float
    retries: int = 0


class FiducialDraw(BaseModel):
    """One joint realization of the parameter pivots."""
    model_config = _ARRAYS

    beta_tilde: np.ndarray              # (L, d)
    sigma_alpha_tilde: np.ndarray       # (S+1, L, L)
    sigma_gamma_tilde: np.ndarray       # (L, L)
    dispersion_tilde: float = Field(gt=0)
    solver: SolverDiagnostics

    def as_parameters(self) -> ParameterSet:
        return ParameterSet(beta=self.beta_tilde, sigma_alpha=self.sigma_alpha_tilde,
                            sigma_gamma=self.sigma_gamma_tilde, dispersion=self.dispersion_tilde)

    def flat(self) -> Dict[str, float]:
        """Named scalar pivots (distinct covariance entries only)."""
        out: Dict[str, float] = {}
        n_raters, d = self.beta_tilde.shape
        for l in range(n_raters):
            for c in range(d):
                out[f"beta[{l + 1}][{c}]"] = float(self.beta_tilde[l, c])
        rows, cols = np.triu_indices(n_raters)
        for s, m in enumerate(self.sigma_alpha_tilde):
            for r, c in zip(rows, cols):
                out[f"sigma_alpha{s}[{r + 1}{c + 1}]"] = float(m[r, c])
        for r, c in zip(rows, cols):
            out[f"sigma_gamma[{r + 1}{c + 1}]"] = float(self.sigma_gamma_tilde[r, c])
        out["dispersion"] = float(self.dispersion_tilde)
        return out


# =============================================================================
# CCC
# =============================================================================

class CccEvaluation(str, Enum):
    CLOSED_LMM = "closed_lmm"
    CLOSED_GAUSSIAN = "closed_gaussian"
    CLOSED_POISSON = "closed_poisson"
    MONTE_CARLO = "monte_carlo"


class CccValue(BaseModel):
    value: float
    method: CccEvaluation
    mc_std_error: Optional[float] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class CccBounds(BaseModel):
    lower: float = Field(ge=-1, le=0)
    upper: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _symmetric(self) -> "CccBounds":
        if abs(self.lower + self.upper) > 1e-12:
            raise ValueError("bounds must be symmetric about zero")
        return self

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


# =============================================================================
# INTERVALS
# =============================================================================

class IntervalMethod(str, Enum):
    FIDUCIAL_HDR = "fiducial_hdr"
    FISHER_Z = "fisher_z"
    BOOTSTRAP_BC = "bootstrap_bc"


class IntervalResult(BaseModel):
    """Interval for a CCC target with the diagnostics of the procedure that built it."""
    method: IntervalMethod
    point: float
    lower: float
    upper: float
    alpha: float = Field(gt=0, lt=1)
    n_draws: int = 0
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _ordered(self) -> "IntervalResult":
        if self.lower > self.upper:
            raise ValueError(f"lower limit {self.lower} exceeds upper limit {self.upper}")
        return self

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper
