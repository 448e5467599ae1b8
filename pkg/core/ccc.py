"""
Longitudinal concordance correlation among L raters.

Every evaluation reduces to four sums over the KT cells of one subject:

    numerator   sum over rater pairs of cov(mu_l, mu_l')
    variance    sum over raters of var(mu_l)
    dispersion  sum over raters of phi E[zeta(mu_l)]
    mean_diff   sum over rater pairs of (E mu_l - E mu_l')^2

and CCC = 2 numerator / ((L - 1)(variance + dispersion) + mean_diff), with the
alternative normalizations selected by CccNormalization. Attainable bounds
are +-1 / (1 + dispersion / variance).
"""

from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np

from config.constants import DEFAULT_N_MC, MIN_N_MC, OVERFLOW_EXPONENT
from core.exceptions import ConfigError, OverflowGuard, ZeroDenominator
from core.models.base import CccMethod, CccNormalization, Family, ModelSpec, ParameterSet
from core.models.results import CccBounds, CccEvaluation, CccValue, FiducialDraw
from core.sampling import conditional_means, draw_linear_predictor
from utils.logger import get_logger
from utils.rng import as_generator

logger = get_logger(__name__)


# =============================================================================
# ASSEMBLY
# =============================================================================

@dataclass
class CccTerms:
    numerator: float
    variance: float
    dispersion: float
    mean_diff: float
    n_raters: int
    n_times: int

    def mean_diff_term(self, normalization: CccNormalization) -> float:
        if normalization == CccNormalization.TIME_MEAN:
            return self.mean_diff / self.n_times
        return self.mean_diff

    def denominator(self, normalization: CccNormalization) -> float:
        return (self.n_raters - 1) * (self.variance + self.dispersion) + self.mean_diff_term(normalization)

    def ratio(self, normalization: CccNormalization) -> float:
        factor = 1.0 if normalization == CccNormalization.HALF_NUMERATOR else 2.0
        den = self.denominator(normalization)
        if not den > 0:
            raise ZeroDenominator("CCC denominator vanishes: no variance, dispersion or mean difference")
        return float(np.clip(factor * self.numerator / den, -1.0, 1.0))

    def upper_bound(self) -> float:
        if not self.variance > 0:
            raise ZeroDenominator("total variance of the conditional means is zero")
        return 1.0 / (1.0 + self.dispersion / self.variance)


def rater_pairs(n_raters: int) -> List[Tuple[int, int]]:
    return list(combinations(range(n_raters), 2))


def _random_effect_moments(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """(L, L, KT) covariances of the random part of the linear predictor per cell."""
    params.check_against(spec)
    basis_sq = np.stack(spec.basis) ** 2
    cov = np.einsum("sab,sp->abp", params.sigma_alpha, basis_sq)
    return cov + params.sigma_gamma[:, :, None]


def _fixed_means(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    return params.beta @ spec.fixed_design.T


def _sum_terms(spec: ModelSpec, mean: np.ndarray, var: np.ndarray, cov: np.ndarray, dispersion: np.ndarray) -> CccTerms:
    pairs = rater_pairs(spec.n_raters)
    return CccTerms(
        numerator=float(sum(cov[l, m].sum() for l, m in pairs)),
        variance=float(var.sum()),
        dispersion=float(dispersion.sum()),
        mean_diff=float(sum(((mean[l] - mean[m]) ** 2).sum() for l, m in pairs)),
        n_raters=spec.n_raters,
        n_times=spec.n_times,
    )


# =============================================================================
# CLOSED FORMS
# =============================================================================

def lmm_terms(spec: ModelSpec, params: ParameterSet) -> CccTerms:
    cov = _random_effect_moments(spec, params)
    var = np.stack([cov[l, l] for l in range(spec.n_raters)])
    dispersion = np.full(var.shape, float(params.dispersion))
    return _sum_terms(spec, _fixed_means(spec, params), var, cov, dispersion)


def poisson_terms(spec: ModelSpec, params: ParameterSet) -> CccTerms:
    """Lognormal moments: E mu = exp(x beta + s/2), var = E mu^2 (e^s - 1), cov = E mu E mu' (e^c - 1)."""
    cov_eta = _random_effect_moments(spec, params)
    s = np.stack([cov_eta[l, l] for l in range(spec.n_raters)])
    exponent = _fixed_means(spec, params) + s / 2
    largest = max(float(np.max(exponent)), float(np.max(cov_eta)))
    if largest > OVERFLOW_EXPONENT:
        raise OverflowGuard(f"lognormal moment exponent {largest:.1f} exceeds {OVERFLOW_EXPONENT}")
    lam = np.exp(exponent)
    var = lam ** 2 * np.expm1(s)
    cov = lam[:, None, :] * lam[None, :, :] * np.expm1(cov_eta)
    return _sum_terms(spec, lam, var, cov, lam)


def _is_two_level_line(spec: ModelSpec) -> bool:
    return spec.spline_order == 1 and spec.n_replicates == 1 and not spec.has_interaction


def ccc_lmm(spec: ModelSpec, params: ParameterSet) -> CccValue:
    """Closed-form CCC of the Gaussian linear mixed model."""
    if spec.family != Family.GAUSSIAN:
        raise ConfigError(f"the linear mixed model closed form does not apply to the {spec.family.value} family")
    value = lmm_terms(spec, params).ratio(spec.normalization)
    method = CccEvaluation.CLOSED_GAUSSIAN if _is_two_level_line(spec) else CccEvaluation.CLOSED_LMM
    return CccValue(value=value, method=method)


def ccc_poisson_closed(spec: ModelSpec, params: ParameterSet) -> CccValue:
    if spec.family != Family.POISSON:
        raise ConfigError(f"the lognormal closed form does not apply to the {spec.family.value} family")
    return CccValue(value=poisson_terms(spec, params).ratio(spec.normalization), method=CccEvaluation.CLOSED_POISSON)


# =============================================================================
# MONTE CARLO
# =============================================================================

def _variance_function(spec: ModelSpec, params: ParameterSet, mu: np.ndarray) -> np.ndarray:
    """phi zeta(mu) per observation."""
    if spec.family == Family.GAUSSIAN:
        return np.full(mu.shape, float(params.dispersion))
    if spec.family == Family.POISSON:
        return mu
    return mu ** 2 / params.dispersion


def _monte_carlo_terms(spec: ModelSpec, params: ParameterSet, n_mc: int, rng: np.random.Generator):
    """Sample-moment terms plus per-subject influence values of the numerator and denominator parts."""
    eta, rejected = draw_linear_predictor(spec, params, n_mc, rng)
    n, n_raters = eta.shape[0], spec.n_raters
    mu = conditional_means(spec.family, eta.reshape(n, n_raters, spec.kt))
    v = _variance_function(spec, params, mu)
    mean = mu.mean(axis=0)
    centered = mu - mean
    sq = centered ** 2
    var = sq.mean(axis=0)
    ev = v.mean(axis=0)

    infl_num = np.zeros(n)
    infl_md = np.zeros(n)
    numerator = 0.0
    mean_diff = 0.0
    for l, m in rater_pairs(n_raters):
        prod = (centered[:, l] * centered[:, m]).sum(axis=1)
        numerator += float(prod.mean())
        infl_num += prod
        diff = mean[l] - mean[m]
        mean_diff += float(diff @ diff)
        infl_md += 2.0 * (centered[:, l] - centered[:, m]) @ diff
    infl_num -= numerator
    infl_vd = (sq.sum(axis=(1, 2)) - var.sum()) + (v.sum(axis=(1, 2)) - ev.sum())

    terms = CccTerms(numerator=numerator, variance=float(var.sum()), dispersion=float(ev.sum()),
                     mean_diff=mean_diff, n_raters=n_raters, n_times=spec.n_times)
    return terms, infl_num, infl_vd, infl_md, rejected


def ccc_monte_carlo(spec: ModelSpec, params: ParameterSet, n_mc: int = DEFAULT_N_MC,
                    rng: Optional[np.random.Generator] = None) -> CccValue:
    """CCC from simulated conditional means, with a delta-method standard error."""
    if n_mc < MIN_N_MC:
        raise ConfigError(f"n_mc must be at least {MIN_N_MC}, got {n_mc}")
    rng = as_generator(rng)
    params.check_against(spec)
    norm = spec.normalization
    terms, infl_num, infl_vd, infl_md, rejected = _monte_carlo_terms(spec, params, n_mc, rng)
    value = terms.ratio(norm)
    factor = 1.0 if norm == CccNormalization.HALF_NUMERATOR else 2.0
    md_scale = 1.0 / spec.n_times if norm == CccNormalization.TIME_MEAN else 1.0
    den = terms.denominator(norm)
    influence = (factor * infl_num - value * ((spec.n_raters - 1) * infl_vd + md_scale * infl_md)) / den
    std_error = float(influence.std(ddof=1) / np.sqrt(n_mc))
    return CccValue(value=value, method=CccEvaluation.MONTE_CARLO, mc_std_error=std_error,
                    diagnostics={"n_mc": n_mc, "rejected": rejected})


# =============================================================================
# DISPATCH, BOUNDS AND PIVOTS
# =============================================================================

def has_closed_form(family: Family) -> bool:
    return family in (Family.GAUSSIAN, Family.POISSON)


def ccc_value(spec: ModelSpec, params: ParameterSet, method: CccMethod = CccMethod.AUTO,
              n_mc: int = DEFAULT_N_MC, rng: Optional[np.random.Generator] = None) -> CccValue:
    """Closed form when available and allowed, Monte Carlo otherwise."""
    if method == CccMethod.EXACT and not has_closed_form(spec.family):
        raise ConfigError(f"no closed-form CCC for the {spec.family.value} family; use auto or numerical")
    if method == CccMethod.NUMERICAL or not has_closed_form(spec.family):
        return ccc_monte_carlo(spec, params, n_mc, rng)
    if spec.family == Family.GAUSSIAN:
        return ccc_lmm(spec, params)
    return ccc_poisson_closed(spec, params)


def ccc_bounds(spec: ModelSpec, params: ParameterSet, n_mc: int = DEFAULT_N_MC,
               rng: Optional[np.random.Generator] = None) -> CccBounds:
    """+-(1 + sum phi E zeta / sum var mu)^{-1}: exact for Gaussian, lognormal for Poisson, Monte Carlo for Gamma."""
    if spec.family == Family.GAUSSIAN:
        terms = lmm_terms(spec, params)
    elif spec.family == Family.POISSON:
        terms = poisson_terms(spec, params)
    else:
        if n_mc < MIN_N_MC:
            raise ConfigError(f"n_mc must be at least {MIN_N_MC}, got {n_mc}")
        terms = _monte_carlo_terms(spec, params, n_mc, as_generator(rng))[0]
    upper = terms.upper_bound()
    return CccBounds(lower=-upper, upper=upper)


def ccc_fiducial(draw: FiducialDraw, spec: ModelSpec, n_mc: int = DEFAULT_N_MC,
                 rng: Optional[np.random.Generator] = None, method: CccMethod = CccMethod.AUTO) -> float:
    """CCC evaluated at the pivot values of one draw."""
    return ccc_value(spec, draw.as_parameters(), method, n_mc, rng).value
