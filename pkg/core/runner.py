"""
Command pipelines behind the CLI: fit, interval, bounds and simulate.
Each returns JSON-ready records; rendering and exit codes live in app.py.
"""

from itertools import combinations
from typing import Any, Dict, List, Tuple

import numpy as np

from config.constants import DEFAULT_N_DRAWS
from config.scenarios import load_scenario
from core.ccc import ccc_bounds
from core.estimation import predict_conditional_means
from core.exceptions import InsufficientRaters
from core.intervals import bootstrap_interval, fiducial_ccc_interval, fisher_z_interval, fit_or_fail, plug_in_ccc
from core.models.base import ModelSpec, RatingDataset
from core.models.results import FitResult, IntervalMethod, IntervalResult
from core.models.run_config import RunConfig
from core.models.scenario import CoverageReport
from core.parsers import parse_dataset_csv
from core.simulation import StudySettings, coverage_study
from utils.logger import get_logger
from utils.rng import STREAM_MC, STREAM_SUBSET, child_seed, substream

logger = get_logger(__name__)


# =============================================================================
# SHARED STEPS
# =============================================================================

def load_dataset(config: RunConfig) -> RatingDataset:
    return parse_dataset_csv(config.dataset, family=config.family)


def rater_subsets(n_raters: int) -> List[Tuple[int, ...]]:
    """Every rater pair, then all raters together when there are more than two."""
    if n_raters < 2:
        raise InsufficientRaters(f"agreement needs at least 2 raters, the dataset has {n_raters}")
    subsets = list(combinations(range(n_raters), 2))
    if n_raters > 2:
        subsets.append(tuple(range(n_raters)))
    return subsets


def _subset_context(config: RunConfig, data: RatingDataset, subset: Tuple[int, ...], index: int):
    sub = data.subset(subset)
    spec = config.model_spec(sub)
    return sub, spec, child_seed(config.seed, STREAM_SUBSET, index)


def _bounds_record(spec: ModelSpec, fit: FitResult, config: RunConfig, seed: int) -> Dict[str, float]:
    bounds = ccc_bounds(spec, fit.estimates, config.n_mc, substream(seed, STREAM_MC, 0))
    return {"lower": bounds.lower, "upper": bounds.upper}


# =============================================================================
# FIT
# =============================================================================

def _predictor_summary(fit: FitResult, spec: ModelSpec) -> Dict[str, Any]:
    predictors = predict_conditional_means(fit, spec)
    stacked = predictors.stacked()
    return {
        "n_blocks": predictors.n_blocks,
        "mean": np.round(stacked.mean(axis=0), 12).tolist(),
        "std": np.round(stacked.std(axis=0, ddof=1), 12).tolist(),
    }


def run_fit(config: RunConfig) -> Dict[str, Any]:
    """Estimates, dispersion and predictor summary for all raters."""
    data = load_dataset(config)
    spec = config.model_spec(data)
    fit = fit_or_fail(data, spec)
    return {
        "command": "fit",
        "family": spec.family.value,
        "raters": data.raters(),
        "dims": dict(zip(["N", "T", "K", "L"], data.dims)),
        "estimates": fit.estimates.to_dict(),
        "dispersion_estimate": fit.dispersion_estimate,
        "dispersion_df": fit.dispersion_df,
        "predictors": _predictor_summary(fit, spec),
        "diagnostics": {
            "iterations": fit.iterations,
            "reml_iterations": fit.reml_iterations,
            "convergence_gap": fit.convergence_gap,
            "objective": fit.objective,
        },
        "seed": config.seed,
    }


# =============================================================================
# INTERVALS AND BOUNDS
# =============================================================================

def build_interval(method: IntervalMethod, data: RatingDataset, spec: ModelSpec, config: RunConfig,
                   seed: int, fit: FitResult) -> IntervalResult:
    if method == IntervalMethod.FIDUCIAL_HDR:
        return fiducial_ccc_interval(data, spec, config.n_draws or DEFAULT_N_DRAWS, config.alpha, config.mode,
                                     seed, config.ccc_method, config.n_mc, fit=fit)
    if method == IntervalMethod.FISHER_Z:
        return fisher_z_interval(data, spec, config.alpha, config.ccc_method, config.n_mc, seed, fit=fit)
    return bootstrap_interval(data, spec, config.n_boot, config.alpha, seed, config.ccc_method, config.n_mc, fit=fit)


def run_interval(config: RunConfig) -> List[Dict[str, Any]]:
    """One record per rater subset and requested method."""
    data = load_dataset(config)
    records = []
    for index, subset in enumerate(rater_subsets(data.n_raters)):
        sub, spec, seed = _subset_context(config, data, subset, index)
        labels = sub.raters()
        logger.info("Rater subset %s", ",".join(labels))
        fit = fit_or_fail(sub, spec)
        bounds = _bounds_record(spec, fit, config, seed)
        for method in config.methods:
            result = build_interval(method, sub, spec, config, seed, fit)
            records.append({
                "method": result.method.value,
                "subset": labels,
                "point": result.point,
                "lower": result.lower,
                "upper": result.upper,
                "width": result.width,
                "alpha": result.alpha,
                "bounds": bounds,
                "seed": config.seed,
                "diagnostics": result.diagnostics,
            })
    return records


def run_bounds(config: RunConfig) -> List[Dict[str, Any]]:
    """Attainable CCC range and plug-in CCC per rater subset, before any interval."""
    data = load_dataset(config)
    records = []
    for index, subset in enumerate(rater_subsets(data.n_raters)):
        sub, spec, seed = _subset_context(config, data, subset, index)
        fit = fit_or_fail(sub, spec)
        records.append({
            "subset": sub.raters(),
            "point": plug_in_ccc(fit, spec, config.ccc_method, config.n_mc, seed),
            "bounds": _bounds_record(spec, fit, config, seed),
            "seed": config.seed,
        })
    return records


# =============================================================================
# SIMULATE
# =============================================================================

def run_simulate(config: RunConfig) -> CoverageReport:
    scenario = load_scenario(config.scenario).with_sizes(config.n_subjects, config.n_replications, config.n_draws)
    settings = StudySettings(
        methods=list(config.methods),
        alpha=config.alpha,
        n_draws=scenario.n_draws_per_interval,
        n_boot=config.n_boot,
        n_mc=config.n_mc,
        mode=config.mode,
        ccc_method=config.ccc_method,
        allow_few_replications=bool(config.allow_few_replications),
    )
    return coverage_study(scenario, seed=config.seed, settings=settings, n_workers=config.n_workers)
