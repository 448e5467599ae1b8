"""
Base data models for CCC Fiducial.
Defines ratings, model structure and parameters using Pydantic.
"""

from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from config.constants import DEFAULT_ALPHA, DEFAULT_ETA_FLOOR
from core.basis import build_basis, polynomial_design, time_values
from core.exceptions import DomainError, InsufficientRaters

SYMMETRY_TOL = 1e-8
PSD_TOL = 1e-10


# =============================================================================
# ENUMERATIONS
# =============================================================================

class Family(str, Enum):
    """Response family with its canonical link for this library."""
    GAUSSIAN = "gaussian"   # identity link
    POISSON = "poisson"     # log link
    GAMMA = "gamma"         # inverse link

    @property
    def link(self) -> str:
        return {"gaussian": "identity", "poisson": "log", "gamma": "inverse"}[self.value]


class CccNormalization(str, Enum):
    """Normalization of the CCC ratio."""
    TIME_SUM = "time_sum"               # factor 2, squared mean differences summed over time points
    TIME_MEAN = "time_mean"             # mean-difference term averaged over time points
    HALF_NUMERATOR = "half_numerator"   # numerator without the factor 2


class CccMethod(str, Enum):
    """How CCC values are evaluated at a parameter point."""
    AUTO = "auto"
    EXACT = "exact"
    NUMERICAL = "numerical"


class DrawMode(str, Enum):
    """Predictor-covariance pivot: one stacked Wishart or independent per-block Wisharts."""
    JOINT = "joint"
    PROXY = "proxy"


# =============================================================================
# RATINGS
# =============================================================================

class RatingDataset(BaseModel):
    """Balanced longitudinal ratings stored as an (N, L, T, K) array."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ratings: np.ndarray
    subject_labels: List[str] = Field(default_factory=list)
    rater_labels: List[str] = Field(default_factory=list)

    @field_validator("ratings", mode="before")
    @classmethod
    def _coerce_values(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=float)
        if arr.ndim != 4:
            raise ValueError(f"ratings must have shape (N, L, T, K), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ratings contain NaN or infinite entries")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_dims(self) -> "RatingDataset":
        n, l, t, k = self.ratings.shape
        if n < 2:
            raise ValueError(f"at least 2 subjects are required, got {n}")
        if l < 1 or t < 1 or k < 1:
            raise ValueError(f"empty rater/time/replicate axis in shape {self.ratings.shape}")
        if l < 2:
            # not a ValueError, so pydantic passes it through unwrapped
            raise InsufficientRaters(f"agreement needs at least 2 raters, the dataset has {l}")
        if self.subject_labels and len(self.subject_labels) != n:
            raise ValueError("subject_labels length does not match N")
        if self.rater_labels and len(self.rater_labels) != l:
            raise ValueError("rater_labels length does not match L")
        return self

    @property
    def n_subjects(self) -> int:
        return self.ratings.shape[0]

    @property
    def n_raters(self) -> int:
        return self.ratings.shape[1]

    @property
    def n_times(self) -> int:
        return self.ratings.shape[2]

    @property
    def n_replicates(self) -> int:
        return self.ratings.shape[3]

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        """(N, T, K, L)."""
        return self.n_subjects, self.n_times, self.n_replicates, self.n_raters

    def subjects(self) -> List[str]:
        return self.subject_labels or [str(i + 1) for i in range(self.n_subjects)]

    def raters(self) -> List[str]:
        return self.rater_labels or [str(l + 1) for l in range(self.n_raters)]

    def stacked(self) -> np.ndarray:
        """Per-subject KTL vectors (rater-major, then time, then replicate)."""
        return self.ratings.reshape(self.n_subjects, -1)

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, n_times: int, n_replicates: int, n_raters: int, **labels: Any) -> "RatingDataset":
        stacked = np.asarray(stacked, dtype=float)
        return cls(ratings=stacked.reshape(stacked.shape[0], n_raters, n_times, n_replicates), **labels)

    def records(self) -> Iterator[Tuple[str, int, int, str, float]]:
        """Long-format rows (subject, time, replicate, rater, value), 1-based indices."""
        subjects, raters = self.subjects(), self.raters()
        for i, subject in enumerate(subjects):
            for j in range(self.n_times):
                for k in range(self.n_replicates):
                    for l, rater in enumerate(raters):
                        yield subject, j + 1, k + 1, rater, float(self.ratings[i, l, j, k])

    def subset(self, raters: Sequence[int]) -> "RatingDataset":
        """Dataset restricted to the given 0-based rater indices."""
        idx = list(raters)
        labels = [self.raters()[l] for l in idx]
        return RatingDataset(ratings=self.ratings[:, idx], subject_labels=self.subject_labels, rater_labels=labels)

    def check_family(self, family: Family) -> None:
        """Raise DomainError when values fall outside the family's support."""
        v = self.ratings
        if family == Family.POISSON:
            if np.any(v < 0) or np.any(v != np.round(v)):
                bad = v[(v < 0) | (v != np.round(v))][0]
                raise DomainError(f"Poisson ratings must be nonnegative integers, found {bad}")
        elif family == Family.GAMMA:
            if np.any(v <= 0):
                raise DomainError(f"Gamma ratings must be strictly positive, found {v[v <= 0][0]}")


# =============================================================================
# MODEL STRUCTURE
# =============================================================================

class ModelSpec(BaseModel):
    """Family, design dimensions and basis conventions of the mixed model."""
    model_config = ConfigDict(frozen=True)

    family: Family = Family.GAUSSIAN
    n_times: int = Field(ge=1)
    n_replicates: int = Field(default=1, ge=1)
    n_raters: int = Field(default=2, ge=1)
    spline_order: int = Field(default=1, ge=0)
    fixed_order: int = Field(default=1, ge=0)
    time_origin: int = Field(default=1, ge=0, le=1)
    time_scale: float = Field(default=1.0, gt=0)
    interaction: Optional[bool] = Field(default=None, description="Subject-time effect; None means K > 1")
    alpha_level: float = Field(default=DEFAULT_ALPHA, gt=0, lt=1)
    normalization: CccNormalization = CccNormalization.TIME_SUM
    eta_floor: float = Field(default=DEFAULT_ETA_FLOOR, ge=0, description="Gamma linear predictors must exceed this")

    @model_validator(mode="after")
    def _check_rank(self) -> "ModelSpec":
        if self.spline_order + 1 > self.n_times:
            raise ValueError(f"spline order {self.spline_order} needs at least {self.spline_order + 1} time points")
        if self.fixed_order + 1 > self.n_times:
            raise ValueError(f"fixed order {self.fixed_order} needs at least {self.fixed_order + 1} time points")
        return self

    @property
    def kt(self) -> int:
        return self.n_times * self.n_replicates

    @property
    def n_obs(self) -> int:
        """Length of one subject's stacked vector (KTL)."""
        return self.kt * self.n_raters

    @property
    def n_fixed(self) -> int:
        return self.fixed_order + 1

    @property
    def n_components(self) -> int:
        """Number of subject-level random-effect orders (S + 1)."""
        return self.spline_order + 1

    @property
    def has_interaction(self) -> bool:
        if self.interaction is None:
            return self.n_replicates > 1
        return self.interaction

    @property
    def n_predictor_blocks(self) -> int:
        return self.n_components + (1 if self.has_interaction else 0)

    @property
    def times(self) -> np.ndarray:
        return time_values(self.n_times, self.time_origin, self.time_scale)

    @property
    def basis(self) -> List[np.ndarray]:
        return build_basis(self.n_times, self.n_replicates, self.spline_order, self.time_origin, self.time_scale)

    @property
    def fixed_design(self) -> np.ndarray:
        return polynomial_design(self.n_times, self.n_replicates, self.fixed_order, self.time_origin, self.time_scale)

    @property
    def stacked_design(self) -> np.ndarray:
        """Block-diagonal KTL x Ld design (one copy of X per rater)."""
        return np.kron(np.eye(self.n_raters), self.fixed_design)

    def for_raters(self, n_raters: int) -> "ModelSpec":
        return self.model_copy(update={"n_raters": n_raters})

    def matches(self, data: RatingDataset) -> bool:
        return (data.n_times, data.n_replicates, data.n_raters) == (self.n_times, self.n_replicates, self.n_raters)

    @classmethod
    def for_dataset(cls, data: RatingDataset, **kwargs: Any) -> "ModelSpec":
        return cls(n_times=data.n_times, n_replicates=data.n_replicates, n_raters=data.n_raters, **kwargs)


# =============================================================================
# PARAMETERS
# =============================================================================

def _symmetric_psd(name: str, m: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, atol=SYMMETRY_TOL * scale):
        raise ValueError(f"{name} is not symmetric")
    m = 0.5 * (m + m.T)
    if m.size and np.linalg.eigvalsh(m)[0] < -PSD_TOL * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return m


class ParameterSet(BaseModel):
    """Fixed effects, random-effect covariances and dispersion (sigma^2, 1 or tau)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: np.ndarray                    # (L, d)
    sigma_alpha: np.ndarray             # (S+1, L, L)
    sigma_gamma: Optional[np.ndarray] = None   # (L, L); zeros when absent
    dispersion: float = Field(default=1.0, ge=0)

    @field_validator("beta", "sigma_alpha", "sigma_gamma", mode="before")
    @classmethod
    def _coerce(cls, v: Any) -> Any:
        return None if v is None else np.array(v, dtype=float)

    @model_validator(mode="after")
    def _check(self) -> "ParameterSet":
        beta = np.atleast_2d(self.beta)
        if beta.ndim != 2:
            raise ValueError("beta must be an L x d matrix")
        n_raters = beta.shape[0]
        sigma_alpha = self.sigma_alpha
        if sigma_alpha.ndim == 2:
            sigma_alpha = sigma_alpha[None]
        if sigma_alpha.ndim != 3 or sigma_alpha.shape[1:] != (n_raters, n_raters):
            raise ValueError(f"sigma_alpha must have shape (S+1, {n_raters}, {n_raters}), got {sigma_alpha.shape}")
        sigma_alpha = np.stack([_symmetric_psd(f"sigma_alpha[{s}]", m) for s, m in enumerate(sigma_alpha)])
        sigma_gamma = np.zeros((n_raters, n_raters)) if self.sigma_gamma is None else self.sigma_gamma
        if sigma_gamma.shape != (n_raters, n_raters):
            raise ValueError(f"sigma_gamma must be {n_raters} x {n_raters}")
        sigma_gamma = _symmetric_psd("sigma_gamma", sigma_gamma)
        for arr in (beta, sigma_alpha, sigma_gamma):
            arr.setflags(write=False)
        # frozen model: write normalized arrays through object.__setattr__
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma_alpha", sigma_alpha)
        object.__setattr__(self, "sigma_gamma", sigma_gamma)
        return self

    @field_serializer("beta", "sigma_alpha", "sigma_gamma", when_used="json")
    def _to_lists(self, v: np.ndarray) -> list:
        return v.tolist()

    @property
    def n_raters(self) -> int:
        return self.beta.shape[0]

    @property
    def n_fixed(self) -> int:
        return self.beta.shape[1]

    @property
    def spline_order(self) -> int:
        return self.sigma_alpha.shape[0] - 1

    def covariance_blocks(self, include_gamma: bool) -> List[np.ndarray]:
        blocks = list(self.sigma_alpha)
        if include_gamma:
            blocks.append(self.sigma_gamma)
        return blocks

    def replace(self, **changes: Any) -> "ParameterSet":
        data = {"beta": self.beta, "sigma_alpha": self.sigma_alpha, "sigma_gamma": self.sigma_gamma,
                "dispersion": self.dispersion}
        data.update(changes)
        return ParameterSet(**data)

    def subset(self, raters: Sequence[int]) -> "ParameterSet":
        idx = np.asarray(list(raters))
        grid = np.ix_(idx, idx)
        return ParameterSet(beta=self.beta[idx], sigma_alpha=np.stack([m[grid] for m in self.sigma_alpha]),
                            sigma_gamma=self.sigma_gamma[grid], dispersion=self.dispersion)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta": self.beta.tolist(),
            "sigma_alpha": self.sigma_alpha.tolist(),
            "sigma_gamma": self.sigma_gamma.tolist(),
            "dispersion": float(self.dispersion),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ParameterSet":
        return cls(**data)

    def check_against(self, spec: ModelSpec) -> None:
        if self.n_raters != spec.n_raters or self.n_fixed != spec.n_fixed or self.spline_order != spec.spline_order:
            raise ValueError(
                f"parameters (L={self.n_raters}, d={self.n_fixed}, S={self.spline_order}) do not match "
                f"model (L={spec.n_raters}, d={spec.n_fixed}, S={spec.spline_order})"
            )
