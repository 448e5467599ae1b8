"""
Draws from the generalized linear mixed model: random effects, linear
predictors and observations. Shared by Monte Carlo CCC evaluation, the
parametric bootstrap and the simulation harness.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config.constants import MAX_SUBJECT_RESAMPLES, OVERFLOW_EXPONENT
from core.exceptions import DomainError, OverflowGuard
from core.models.base import Family, ModelSpec, ParameterSet
from core.models.scenario import ErrorKind, ErrorModel
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class RandomEffects:
    alpha: np.ndarray                   # (n, S+1, L)
    gamma: Optional[np.ndarray] = None  # (n, T, L)

    @property
    def n_subjects(self) -> int:
        return self.alpha.shape[0]


def _mvn(cov: np.ndarray, size: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    # eigh handles the singular covariances of perfect-agreement settings
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=size, method="eigh")


def draw_random_effects(spec: ModelSpec, params: ParameterSet, n: int, rng: np.random.Generator) -> RandomEffects:
    """alpha^s_i ~ N(0, Sigma^s) independently over s; gamma_ij ~ N(0, Sigma_gamma) when present."""
    alpha = np.stack([_mvn(m, (n,), rng) for m in params.sigma_alpha], axis=1)
    gamma = None
    if spec.has_interaction or np.any(params.sigma_gamma):
        gamma = _mvn(params.sigma_gamma, (n, spec.n_times), rng)
    return RandomEffects(alpha=alpha, gamma=gamma)


def linear_predictor(spec: ModelSpec, params: ParameterSet, effects: RandomEffects) -> np.ndarray:
    """eta with shape (n, L, T, K)."""
    n = effects.n_subjects
    fixed = params.beta @ spec.fixed_design.T                                 # (L, KT)
    basis = np.stack(spec.basis)                                              # (S+1, KT)
    eta = fixed[None] + np.einsum("nsl,sp->nlp", effects.alpha, basis)
    if effects.gamma is not None:
        eta += np.repeat(np.swapaxes(effects.gamma, 1, 2), spec.n_replicates, axis=2)
    return eta.reshape(n, spec.n_raters, spec.n_times, spec.n_replicates)


def draw_linear_predictor(spec: ModelSpec, params: ParameterSet, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """
    n subject linear predictors. For the Gamma family subjects with any eta at or
    below the floor are redrawn, up to MAX_SUBJECT_RESAMPLES rounds.
    Returns (eta, number of rejected subject draws).
    """
    eta = linear_predictor(spec, params, draw_random_effects(spec, params, n, rng))
    if spec.family != Family.GAMMA:
        return eta, 0
    rejected = 0
    bad = np.flatnonzero(eta.reshape(n, -1).min(axis=1) <= spec.eta_floor)
    for _ in range(MAX_SUBJECT_RESAMPLES):
        if bad.size == 0:
            break
        rejected += bad.size
        eta[bad] = linear_predictor(spec, params, draw_random_effects(spec, params, bad.size, rng))
        bad = bad[eta[bad].reshape(bad.size, -1).min(axis=1) <= spec.eta_floor]
    if bad.size:
        raise DomainError(
            f"{bad.size} subjects kept a Gamma linear predictor at or below {spec.eta_floor} "
            f"after {MAX_SUBJECT_RESAMPLES} resamples",
            rejected=rejected,
        )
    if rejected:
        logger.debug("rejected %d of %d Gamma subject draws", rejected, n + rejected)
    return eta, rejected


def conditional_means(family: Family, eta: np.ndarray) -> np.ndarray:
    """Response-scale means h(eta); OverflowGuard when exp(eta) would overflow."""
    if family == Family.GAUSSIAN:
        return eta
    if family == Family.POISSON:
        if np.max(eta) > OVERFLOW_EXPONENT:
            raise OverflowGuard(f"linear predictor {np.max(eta):.1f} exceeds {OVERFLOW_EXPONENT}")
        return np.exp(eta)
    return 1.0 / eta


def draw_errors(error_model: ErrorModel, dispersion: float, size: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian-family errors: N(0, sigma^2) or the two-component mixture."""
    if error_model.kind != ErrorKind.MIXTURE:
        return rng.normal(0.0, np.sqrt(dispersion), size=size)
    normal = rng.normal(0.0, np.sqrt(error_model.gaussian_variance), size=size)
    contaminated = rng.random(size) < error_model.weight
    out = normal
    out[contaminated] = error_model.contaminant.draw_centered(int(contaminated.sum()), rng)
    return out


def draw_observations(
    spec: ModelSpec,
    params: ParameterSet,
    eta: np.ndarray,
    rng: np.random.Generator,
    error_model: Optional[ErrorModel] = None,
) -> np.ndarray:
    """Observations given the linear predictor, same shape as eta."""
    mu = conditional_means(spec.family, eta)
    if spec.family == Family.GAUSSIAN:
        return mu + draw_errors(error_model or ErrorModel(), params.dispersion, eta.shape, rng)
    if spec.family == Family.POISSON:
        return rng.poisson(mu).astype(float)
    tau = params.dispersion
    return rng.gamma(tau, mu / tau)
