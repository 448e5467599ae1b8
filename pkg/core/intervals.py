"""
Confidence intervals for the CCC: fiducial highest-density intervals and the
Fisher-Z and bias-corrected parametric bootstrap baselines.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config.constants import (
    DEFAULT_N_BOOT,
    DEFAULT_N_DRAWS,
    DEFAULT_N_MC,
    MAX_BOOTSTRAP_FAILURE_RATE,
    MAX_DRAW_FAILURE_RATE,
    MIN_HDR_SAMPLES,
)
from core.ccc import ccc_fiducial, ccc_value, rater_pairs
from core.estimation import fit_model, predict_conditional_means
from core.exceptions import (
    AgreementError,
    ConfigError,
    DegenerateVariance,
    ExcessiveDrawFailures,
    FitFailure,
    TooFewSamples,
)
from core.fiducial import draw_with_retries, fiducial_parameter_intervals
from core.models.base import CccMethod, DrawMode, ModelSpec, RatingDataset
from core.models.results import FiducialDraw, FitResult, IntervalMethod, IntervalResult
from core.sampling import draw_linear_predictor, draw_observations
from utils.logger import get_logger
from utils.rng import STREAM_BOOTSTRAP, STREAM_MC, new_seed, substream

logger = get_logger(__name__)


# =============================================================================
# HIGHEST DENSITY INTERVAL
# =============================================================================

def hdr_interval(samples: Sequence[float], alpha: float) -> Tuple[float, float]:
    """
    Shortest window of ceil((1 - alpha) m) consecutive order statistics.
    Ties go to the smallest lower endpoint.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m < MIN_HDR_SAMPLES:
        raise TooFewSamples(f"{m} samples; at least {MIN_HDR_SAMPLES} are needed for an interval", n_samples=m)
    w = max(1, int(np.ceil((1 - alpha) * m - 1e-9)))
    widths = x[w - 1:] - x[:m - w + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + w - 1])


# =============================================================================
# FITTING AND POINT ESTIMATES
# =============================================================================

def fit_or_fail(data: RatingDataset, spec: ModelSpec) -> FitResult:
    """fit_model with every library failure reported as FitFailure."""
    try:
        return fit_model(data, spec)
    except AgreementError as e:
        raise FitFailure(f"model fit failed: {e.message}", cause=e) from e


def plug_in_ccc(fit: FitResult, spec: ModelSpec, method: CccMethod = CccMethod.AUTO, n_mc: int = DEFAULT_N_MC,
                seed: int = 0) -> float:
    return ccc_value(spec, fit.estimates, method, n_mc, substream(seed, STREAM_MC, 0)).value


# =============================================================================
# FIDUCIAL
# =============================================================================

@dataclass
class FiducialSample:
    """CCC values of the successful draws with the bookkeeping of the failed ones."""
    values: List[float] = field(default_factory=list)
    draws: List[FiducialDraw] = field(default_factory=list)
    n_requested: int = 0
    n_solver_failures: int = 0
    n_ccc_failures: int = 0
    n_retries: int = 0

    @property
    def n_failed(self) -> int:
        return self.n_solver_failures + self.n_ccc_failures

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_requested if self.n_requested else 0.0


def fiducial_ccc_samples(
    fit: FitResult,
    spec: ModelSpec,
    n_draws: int,
    seed: int,
    mode: DrawMode = DrawMode.JOINT,
    method: CccMethod = CccMethod.AUTO,
    n_mc: int = DEFAULT_N_MC,
) -> FiducialSample:
    """n_draws joint pivots, each mapped to a CCC value; draw i uses substreams keyed by i."""
    predictors = predict_conditional_means(fit, spec)
    sample = FiducialSample(n_requested=n_draws)
    for i in range(n_draws):
        draw, attempts = draw_with_retries(fit, spec, seed, (i,), mode, predictors)
        sample.n_retries += attempts - 1
        if draw is None:
            sample.n_solver_failures += 1
            continue
        try:
            value = ccc_fiducial(draw, spec, n_mc, substream(seed, STREAM_MC, i + 1), method)
        except AgreementError as e:
            logger.warning("CCC evaluation failed for draw %d: %s", i, e)
            sample.n_ccc_failures += 1
            continue
        sample.values.append(value)
        sample.draws.append(draw)
    logger.info("fiducial sampling: %d of %d draws usable (%d retries)", len(sample.values), n_draws, sample.n_retries)
    return sample


def fiducial_ccc_interval(
    data: RatingDataset,
    spec: ModelSpec,
    n_draws: int = DEFAULT_N_DRAWS,
    alpha: Optional[float] = None,
    mode: DrawMode = DrawMode.JOINT,
    seed: Optional[int] = None,
    method: CccMethod = CccMethod.AUTO,
    n_mc: int = DEFAULT_N_MC,
    fit: Optional[FitResult] = None,
) -> IntervalResult:
    """Fit, draw pivots, evaluate the CCC per draw and take the highest-density interval."""
    alpha = spec.alpha_level if alpha is None else alpha
    seed = new_seed() if seed is None else seed
    fit = fit or fit_or_fail(data, spec)
    point = plug_in_ccc(fit, spec, method, n_mc, seed)
    sample = fiducial_ccc_samples(fit, spec, n_draws, seed, mode, method, n_mc)
    if sample.failure_rate > MAX_DRAW_FAILURE_RATE:
        raise ExcessiveDrawFailures(
            f"{sample.n_failed} of {n_draws} fiducial draws failed ({sample.failure_rate:.1%})",
            failure_rate=sample.failure_rate, n_failed=sample.n_failed,
        )
    lower, upper = hdr_interval(sample.values, alpha)
    values = np.asarray(sample.values)
    quantiles = np.quantile(values, [alpha / 2, 0.5, 1 - alpha / 2])
    return IntervalResult(
        method=IntervalMethod.FIDUCIAL_HDR,
        point=point,
        lower=lower,
        upper=upper,
        alpha=alpha,
        n_draws=len(sample.values),
        diagnostics={
            "mode": mode.value,
            "n_requested": n_draws,
            "n_failed": sample.n_failed,
            "n_solver_failures": sample.n_solver_failures,
            "n_retries": sample.n_retries,
            "failure_rate": sample.failure_rate,
            "draw_quantiles": [float(q) for q in quantiles],
            "parameter_intervals": {k: list(v) for k, v in fiducial_parameter_intervals(sample.draws, alpha).items()},
            "fit_iterations": fit.iterations,
        },
    )


# =============================================================================
# FISHER-Z
# =============================================================================

def pooled_pair_moments(data: RatingDataset) -> Tuple[float, float]:
    """
    Pearson correlation r and squared location shift u^2 = (m_l - m_l')^2 / (s_l s_l')
    over all (subject, time, replicate) cells, averaged over rater pairs.
    """
    flat = data.ratings.transpose(1, 0, 2, 3).reshape(data.n_raters, -1)
    rs, u2s = [], []
    for l, m in rater_pairs(data.n_raters):
        x, y = flat[l], flat[m]
        sx, sy = x.std(), y.std()
        if sx == 0 or sy == 0:
            raise DegenerateVariance(f"raters {l + 1} and {m + 1} include a constant rating vector")
        rs.append(float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy)))
        u2s.append(float((x.mean() - y.mean()) ** 2 / (sx * sy)))
    return float(np.mean(rs)), float(np.mean(u2s))


def lin_z_variance(ccc: float, r: float, u2: float, n: int) -> float:
    """Asymptotic variance of atanh(CCC) for n paired units."""
    if abs(ccc) >= 1:
        raise DegenerateVariance(f"Fisher-Z variance is undefined at CCC = {ccc}")
    if r == 0:
        raise DegenerateVariance("Pearson correlation is zero")
    if n <= 2:
        raise DegenerateVariance(f"{n} subjects; at least 3 are needed")
    c2 = ccc ** 2
    one_minus = 1.0 - c2
    var = ((1 - r ** 2) * c2 / (one_minus * r ** 2)
           + 2 * ccc ** 3 * (1 - ccc) * u2 / (r * one_minus ** 2)
           - ccc ** 4 * u2 ** 2 / (2 * r ** 2 * one_minus ** 2)) / (n - 2)
    if var < 0:
        raise DegenerateVariance(f"Fisher-Z variance is negative ({var:.3g})")
    return float(var)


def fisher_z_limits(ccc: float, variance: float, alpha: float) -> Tuple[float, float]:
    z = np.arctanh(ccc)
    half = stats.norm.ppf(1 - alpha / 2) * np.sqrt(variance)
    return float(np.tanh(z - half)), float(np.tanh(z + half))


def fisher_z_interval(
    data: RatingDataset,
    spec: ModelSpec,
    alpha: Optional[float] = None,
    method: CccMethod = CccMethod.AUTO,
    n_mc: int = DEFAULT_N_MC,
    seed: Optional[int] = None,
    fit: Optional[FitResult] = None,
) -> IntervalResult:
    """tanh(atanh(CCC) +- z sigma_Z) around the model plug-in CCC."""
    alpha = spec.alpha_level if alpha is None else alpha
    seed = new_seed() if seed is None else seed
    fit = fit or fit_or_fail(data, spec)
    point = plug_in_ccc(fit, spec, method, n_mc, seed)
    r, u2 = pooled_pair_moments(data)
    variance = lin_z_variance(point, r, u2, data.n_subjects)
    lower, upper = fisher_z_limits(point, variance, alpha)
    return IntervalResult(
        method=IntervalMethod.FISHER_Z, point=point, lower=lower, upper=upper, alpha=alpha,
        diagnostics={"pearson_r": r, "location_shift_sq": u2, "z_variance": variance},
    )


# =============================================================================
# BIAS-CORRECTED PARAMETRIC BOOTSTRAP
# =============================================================================

def bias_corrected_limits(values: Sequence[float], point: float, alpha: float) -> Tuple[float, float, float]:
    """BC percentile limits; z0 from the share of bootstrap values below the point estimate."""
    values = np.asarray(values, dtype=float)
    b = values.size
    share = (np.sum(values < point) + 0.5 * np.sum(values == point)) / b
    share = float(np.clip(share, 0.5 / b, 1 - 0.5 / b))
    z0 = float(stats.norm.ppf(share))
    levels = stats.norm.cdf(2 * z0 + stats.norm.ppf([alpha / 2, 1 - alpha / 2]))
    lower, upper = np.quantile(values, levels)
    return float(lower), float(upper), z0


def bootstrap_interval(
    data: RatingDataset,
    spec: ModelSpec,
    n_boot: int = DEFAULT_N_BOOT,
    alpha: Optional[float] = None,
    seed: Optional[int] = None,
    method: CccMethod = CccMethod.AUTO,
    n_mc: int = DEFAULT_N_MC,
    fit: Optional[FitResult] = None,
) -> IntervalResult:
    """Refit on parametric resamples from the fitted model and apply the BC percentile method."""
    alpha = spec.alpha_level if alpha is None else alpha
    seed = new_seed() if seed is None else seed
    fit = fit or fit_or_fail(data, spec)
    point = plug_in_ccc(fit, spec, method, n_mc, seed)
    estimates = fit.estimates
    values: List[float] = []
    failures = 0
    for b in range(n_boot):
        rng = substream(seed, STREAM_BOOTSTRAP, b)
        try:
            eta, _ = draw_linear_predictor(spec, estimates, data.n_subjects, rng)
            resample = RatingDataset(ratings=draw_observations(spec, estimates, eta, rng))
            refit = fit_model(resample, spec)
            values.append(ccc_value(spec, refit.estimates, method, n_mc, substream(seed, STREAM_MC, b + 1)).value)
        except AgreementError as e:
            failures += 1
            logger.debug("bootstrap resample %d failed: %s", b, e)
    rate = failures / n_boot
    if rate > MAX_BOOTSTRAP_FAILURE_RATE:
        raise FitFailure(f"{failures} of {n_boot} bootstrap refits failed ({rate:.1%})", failure_rate=rate)
    lower, upper, z0 = bias_corrected_limits(values, point, alpha)
    return IntervalResult(
        method=IntervalMethod.BOOTSTRAP_BC, point=point, lower=lower, upper=upper, alpha=alpha, n_draws=len(values),
        diagnostics={"z0": z0, "n_failed": failures, "failure_rate": rate},
    )
