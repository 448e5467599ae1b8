"""
Simulation harness: synthetic datasets per scenario, coverage and width studies
for the interval methods, and a brute-force CCC oracle from raw sample moments.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config.constants import (
    DEFAULT_ALPHA,
    DEFAULT_N_BOOT,
    DEFAULT_N_MC,
    DEFAULT_N_MC_ORACLE,
    MAX_REPLICATION_FAILURE_RATE,
    MIN_ORACLE_SUBJECTS,
    MIN_REPLICATIONS,
    ORACLE_JACKKNIFE_GROUPS,
)
from core.ccc import CccTerms, ccc_value, rater_pairs
from core.exceptions import AgreementError, ConfigError, CoverageAborted
from core.intervals import bootstrap_interval, fiducial_ccc_interval, fisher_z_interval, fit_or_fail
from core.models.base import CccMethod, DrawMode, ParameterSet, RatingDataset
from core.models.results import IntervalMethod, IntervalResult
from core.models.scenario import CoverageReport, CoverageRow, ErrorKind, ErrorModel, Scenario
from core.sampling import draw_linear_predictor, draw_observations
from utils.logger import get_logger
from utils.rng import STREAM_DATA, STREAM_MC, STREAM_ORACLE, STREAM_REPLICATION, as_generator, child_seed, substream

logger = get_logger(__name__)


# =============================================================================
# DATA GENERATION
# =============================================================================

def generate_with_rejections(scenario: Scenario, n: int, rng: np.random.Generator) -> Tuple[RatingDataset, int]:
    eta, rejected = draw_linear_predictor(scenario.spec, scenario.truth, n, rng)
    y = draw_observations(scenario.spec, scenario.truth, eta, rng, scenario.error_model)
    return RatingDataset(ratings=y), rejected


def generate_dataset(scenario: Scenario, n: int, rng: Optional[np.random.Generator] = None) -> RatingDataset:
    """One dataset of n subjects drawn from the scenario's true model."""
    dataset, rejected = generate_with_rejections(scenario, n, as_generator(rng))
    if rejected:
        logger.info("%s: %d subject draws rejected for a non-positive Gamma mean", scenario.name, rejected)
    return dataset


# =============================================================================
# MIXTURE ERRORS AND TRUE VALUES
# =============================================================================

def mixture_error_moments(error_model: ErrorModel) -> Tuple[float, float]:
    """(variance, skewness) of the zero-mean two-component mixture error."""
    if error_model.kind != ErrorKind.MIXTURE:
        raise ValueError(f"{error_model.kind.value} error model is not a mixture")
    w = error_model.weight
    c = error_model.contaminant
    variance = (1 - w) * error_model.gaussian_variance + w * c.variance
    third = w * c.skewness * c.variance ** 1.5
    return variance, third / variance ** 1.5


def mixture_error_variance(error_model: ErrorModel, dispersion: Optional[float] = None) -> float:
    """Total error variance: the mixture variance, or the Gaussian dispersion when unmixed."""
    if error_model.kind == ErrorKind.MIXTURE:
        return mixture_error_moments(error_model)[0]
    if dispersion is None:
        raise ValueError("a plain Gaussian error model takes its variance from the dispersion")
    return float(dispersion)


def truth_parameters(scenario: Scenario) -> ParameterSet:
    """True parameters with the dispersion the CCC sees (mixture variance for contaminated errors)."""
    if scenario.error_model.kind == ErrorKind.MIXTURE:
        return scenario.truth.replace(dispersion=mixture_error_variance(scenario.error_model))
    return scenario.truth


def true_ccc(scenario: Scenario, seed: int = 0, n_mc: int = DEFAULT_N_MC_ORACLE) -> float:
    """True CCC of the scenario: closed form when available, otherwise a large Monte Carlo run."""
    rng = substream(seed, STREAM_ORACLE, 0)
    return ccc_value(scenario.spec, truth_parameters(scenario), CccMethod.AUTO, n_mc, rng).value


# =============================================================================
# SAMPLE-MOMENT ORACLE
# =============================================================================

def _terms_from_sums(scenario: Scenario, n: int, sums: np.ndarray, cross: np.ndarray) -> CccTerms:
    mean = sums / n                                        # (L, KT)
    cov = cross / n - mean[:, None, :] * mean[None, :, :]  # (L, L, KT)
    pairs = rater_pairs(scenario.spec.n_raters)
    return CccTerms(
        numerator=float(sum(cov[l, m].sum() for l, m in pairs)),
        variance=float(sum(cov[l, l].sum() for l in range(scenario.spec.n_raters))),
        dispersion=0.0,
        mean_diff=float(sum(((mean[l] - mean[m]) ** 2).sum() for l, m in pairs)),
        n_raters=scenario.spec.n_raters,
        n_times=scenario.spec.n_times,
    )


def ccc_sample_oracle(scenario: Scenario, n_large: int = DEFAULT_N_MC_ORACLE, rng: Optional[np.random.Generator] = None,
                      n_groups: int = ORACLE_JACKKNIFE_GROUPS) -> Tuple[float, float]:
    """
    CCC straight from sample cross-covariances, variances and mean differences of
    simulated ratings. Returns (value, grouped jackknife standard error).
    """
    if n_large < MIN_ORACLE_SUBJECTS:
        raise ConfigError(f"n_large must be at least {MIN_ORACLE_SUBJECTS}, got {n_large}")
    rng = as_generator(rng)
    spec = scenario.spec
    norm = spec.normalization
    sizes = np.full(n_groups, n_large // n_groups)
    sizes[: n_large % n_groups] += 1
    group_sums = np.zeros((n_groups, spec.n_raters, spec.kt))
    group_cross = np.zeros((n_groups, spec.n_raters, spec.n_raters, spec.kt))
    for g, size in enumerate(sizes):
        y = generate_dataset(scenario, int(size), rng).ratings.reshape(int(size), spec.n_raters, spec.kt)
        group_sums[g] = y.sum(axis=0)
        group_cross[g] = np.einsum("nlp,nmp->lmp", y, y)

    total_sums, total_cross = group_sums.sum(axis=0), group_cross.sum(axis=0)
    value = _terms_from_sums(scenario, n_large, total_sums, total_cross).ratio(norm)
    leave_out = np.array([
        _terms_from_sums(scenario, n_large - int(sizes[g]), total_sums - group_sums[g], total_cross - group_cross[g]).ratio(norm)
        for g in range(n_groups)
    ])
    se = float(np.sqrt((n_groups - 1) / n_groups * np.sum((leave_out - leave_out.mean()) ** 2)))
    return value, se


# =============================================================================
# COVERAGE STUDY
# =============================================================================

@dataclass
class StudySettings:
    methods: List[IntervalMethod] = field(default_factory=lambda: list(IntervalMethod))
    alpha: float = DEFAULT_ALPHA
    n_draws: Optional[int] = None
    n_boot: int = DEFAULT_N_BOOT
    n_mc: int = DEFAULT_N_MC
    mode: DrawMode = DrawMode.JOINT
    ccc_method: CccMethod = CccMethod.AUTO
    allow_few_replications: bool = False  # smoke runs below MIN_REPLICATIONS


@dataclass
class ReplicationOutcome:
    n_subjects: int
    replication: int
    intervals: Dict[str, IntervalResult] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    rejected: int = 0


def _interval(method: IntervalMethod, data: RatingDataset, scenario: Scenario, settings: StudySettings, seed: int, fit) -> IntervalResult:
    spec = scenario.spec
    if method == IntervalMethod.FIDUCIAL_HDR:
        return fiducial_ccc_interval(data, spec, settings.n_draws or scenario.n_draws_per_interval, settings.alpha,
                                     settings.mode, seed, settings.ccc_method, settings.n_mc, fit=fit)
    if method == IntervalMethod.FISHER_Z:
        return fisher_z_interval(data, spec, settings.alpha, settings.ccc_method, settings.n_mc, seed, fit=fit)
    return bootstrap_interval(data, spec, settings.n_boot, settings.alpha, seed, settings.ccc_method, settings.n_mc, fit=fit)


def run_replication(scenario: Scenario, n: int, replication: int, seed: int, settings: StudySettings) -> ReplicationOutcome:
    """One generate-fit-interval cycle; every random stream is keyed by (seed, n, replication)."""
    rep_seed = child_seed(seed, STREAM_REPLICATION, n, replication)
    data, rejected = generate_with_rejections(scenario, n, substream(rep_seed, STREAM_DATA))
    outcome = ReplicationOutcome(n_subjects=n, replication=replication, rejected=rejected)
    try:
        fit = fit_or_fail(data, scenario.spec)
    except AgreementError as e:
        outcome.failures = {m.value: type(e).__name__ for m in settings.methods}
        return outcome
    for method in settings.methods:
        try:
            outcome.intervals[method.value] = _interval(method, data, scenario, settings, child_seed(rep_seed, STREAM_MC), fit)
        except AgreementError as e:
            logger.warning("%s N=%d replication %d: %s failed: %s", scenario.name, n, replication, method.value, e)
            outcome.failures[method.value] = type(e).__name__
    return outcome


def _run_job(args: Tuple[Scenario, int, int, int, StudySettings]) -> ReplicationOutcome:
    return run_replication(*args)


def coverage_row(method: str, n: int, outcomes: Sequence[ReplicationOutcome], truth: float, alpha: float) -> CoverageRow:
    results = [o.intervals[method] for o in outcomes if method in o.intervals]
    failed = sum(1 for o in outcomes if method in o.failures)
    if not results:
        raise CoverageAborted(f"every replication of {method} at N={n} failed", method=method, n_subjects=n)
    covered = sum(r.covers(truth) for r in results)
    ci = stats.binomtest(covered, len(results)).proportion_ci(confidence_level=1 - alpha, method="exact")
    return CoverageRow(
        method=method,
        n_subjects=n,
        mean_lower=float(np.mean([r.lower for r in results])),
        mean_upper=float(np.mean([r.upper for r in results])),
        expected_width=float(np.mean([r.width for r in results])),
        coverage=covered / len(results),
        coverage_ci=(float(ci.low), float(ci.high)),
        n_completed=len(results),
        n_failed=failed,
    )


def coverage_study(
    scenario: Scenario,
    methods: Optional[Sequence[IntervalMethod]] = None,
    seed: int = 0,
    settings: Optional[StudySettings] = None,
    n_workers: int = 1,
) -> CoverageReport:
    """
    Replication loop over every study size: generate, build each interval, record
    inclusion of the true CCC and the width. Aborts when more than 10% of the
    replications of a method fail.
    """
    settings = settings or StudySettings()
    if methods is not None:
        settings = replace(settings, methods=list(methods))
    if scenario.n_replications < MIN_REPLICATIONS:
        if not settings.allow_few_replications:
            raise ConfigError(f"coverage studies need at least {MIN_REPLICATIONS} replications, got {scenario.n_replications}",
                              n_replications=scenario.n_replications)
        logger.warning("%d replications give a coarse coverage estimate (recommended: %d)",
                       scenario.n_replications, MIN_REPLICATIONS)
    truth = true_ccc(scenario, seed)
    logger.info("%s: true CCC %.4f", scenario.name, truth)

    jobs = [(scenario, n, rep, seed, settings) for n in scenario.n_subjects for rep in range(scenario.n_replications)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * n_workers))))
    else:
        outcomes = [_run_job(job) for job in jobs]

    report = CoverageReport(scenario=scenario.name, true_ccc=truth, seed=seed, n_replications=scenario.n_replications)
    for n in scenario.n_subjects:
        per_n = [o for o in outcomes if o.n_subjects == n]
        for method in settings.methods:
            failed = sum(1 for o in per_n if method.value in o.failures)
            rate = failed / len(per_n)
            if rate > MAX_REPLICATION_FAILURE_RATE:
                raise CoverageAborted(
                    f"{failed} of {len(per_n)} {method.value} replications failed at N={n} ({rate:.1%})",
                    method=method.value, n_subjects=n, failure_rate=rate,
                )
            report.rows.append(coverage_row(method.value, n, per_n, truth, settings.alpha))
            logger.info("%s N=%d %s: coverage %.3f", scenario.name, n, method.value, report.rows[-1].coverage)
    report.diagnostics["rejected_subject_draws"] = int(sum(o.rejected for o in outcomes))
    report.diagnostics["settings"] = {
        "alpha": settings.alpha,
        "n_draws": settings.n_draws or scenario.n_draws_per_interval,
        "n_boot": settings.n_boot,
        "n_mc": settings.n_mc,
        "mode": settings.mode.value,
        "ccc_method": settings.ccc_method.value,
        "allow_few_replications": settings.allow_few_replications,
    }
    return report
