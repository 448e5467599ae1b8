"""
Fiducial pivots for the parameters of the linearized mixed model.

A joint draw runs: dispersion pivot -> Wishart pivot for the covariance of the
stacked conditional-mean predictors -> least-squares recovery of the variance
components from that draw -> fixed-effect pivot at the recovered covariance.
Every pivot is written as a deterministic function of its auxiliary randoms so
that substituting the "observed" randoms returns the plug-in estimate.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from config.constants import MAX_DRAW_RETRIES
from core.covariance import (
    PredictorCovarianceModel,
    build_marginal_covariance,
    log_cholesky,
    n_log_cholesky,
    split_log_cholesky,
)
from core.estimation import predict_conditional_means
from core.exceptions import InsufficientDF, NotPositiveDefinite, RankDeficientScatter, SolverFailure
from core.models.base import DrawMode, Family, ModelSpec, ParameterSet
from core.models.results import (
    FiducialDraw,
    FitResult,
    PredictorCovTarget,
    PredictorSet,
    SolverDiagnostics,
    WishartObservation,
)
from core.optimize import NewtonResult, finite_difference_gradient, newton_cg
from utils.logger import get_logger
from utils.rng import STREAM_DRAW, substream

logger = get_logger(__name__)


# =============================================================================
# WISHART PIVOT
# =============================================================================

def bartlett_factor(dim: int, df: int, rng: np.random.Generator) -> np.ndarray:
    """Lower-triangular V with V_ii^2 ~ chi2(df - i + 1) and V_ij ~ N(0, 1) below the diagonal."""
    v = np.zeros((dim, dim))
    v[np.diag_indices(dim)] = np.sqrt(rng.chisquare(df - np.arange(dim)))
    rows, cols = np.tril_indices(dim, k=-1)
    v[rows, cols] = rng.standard_normal(rows.size)
    return v


def wishart_pivot(chol_factor: np.ndarray, v: np.ndarray) -> np.ndarray:
    """t_s (V^T V)^{-1} t_s^T for a lower-triangular V."""
    x = linalg.solve_triangular(v, chol_factor.T, lower=True, trans="T")
    sigma = x.T @ x
    return 0.5 * (sigma + sigma.T)


def sample_wishart_fiducial(obs: WishartObservation, rng: np.random.Generator) -> np.ndarray:
    """One fiducial draw of Sigma from a scatter matrix S ~ Wishart(Sigma, n)."""
    return wishart_pivot(obs.chol_factor, bartlett_factor(obs.dim, obs.df, rng))


# =============================================================================
# PREDICTOR COVARIANCE
# =============================================================================

def predictor_scatter(predictors: PredictorSet) -> WishartObservation:
    """Scatter of the stacked predictors about a known zero mean, df = N."""
    stacked = predictors.stacked()
    n, q = stacked.shape
    if n <= q:
        raise RankDeficientScatter(f"{n} subjects cannot give a full-rank scatter of {q} stacked predictors")
    return WishartObservation(scatter=stacked.T @ stacked, df=n)


def sample_predictor_cov_fiducial(
    predictors: PredictorSet, rng: np.random.Generator, mode: DrawMode = DrawMode.JOINT
) -> PredictorCovTarget:
    """
    Joint mode: one Wishart pivot for the whole stacked predictor vector.
    Proxy mode: independent pivots for each predictor block; cross-block entries are not targets.
    """
    if mode == DrawMode.JOINT:
        obs = predictor_scatter(predictors)
        delta = sample_wishart_fiducial(obs, rng)
        return PredictorCovTarget(delta_tilde=delta, mask=np.ones(delta.shape, dtype=bool))

    n_raters = predictors.n_raters
    q = predictors.n_blocks * n_raters
    delta = np.zeros((q, q))
    mask = np.zeros((q, q), dtype=bool)
    for b in range(predictors.n_blocks):
        block = predictors.block(b)
        if block.shape[0] <= n_raters:
            raise RankDeficientScatter(f"{block.shape[0]} subjects cannot give a full-rank {n_raters} x {n_raters} scatter")
        obs = WishartObservation(scatter=block.T @ block, df=block.shape[0])
        span = slice(b * n_raters, (b + 1) * n_raters)
        delta[span, span] = sample_wishart_fiducial(obs, rng)
        mask[span, span] = True
    return PredictorCovTarget(delta_tilde=delta, mask=mask)


# =============================================================================
# VARIANCE-COMPONENT RECOVERY
# =============================================================================

@dataclass
class VarianceRecovery:
    sigma_alpha: np.ndarray
    sigma_gamma: np.ndarray
    solver: NewtonResult

    @property
    def converged(self) -> bool:
        return self.solver.converged


def pivot_error_diagonal(spec: ModelSpec, fit: FitResult, dispersion_tilde: float) -> np.ndarray:
    """Error diagonal of Sigma_{Y*} with the dispersion replaced by its pivot."""
    if spec.family == Family.GAUSSIAN:
        return np.full(spec.n_obs, float(dispersion_tilde))
    if spec.family == Family.POISSON:
        return fit.error_diag
    # 1/(tau mu^2) rescaled from the fitted shape to the pivot shape
    return fit.error_diag * (fit.estimates.dispersion / float(dispersion_tilde))


class RecoveryObjective:
    """F(v) = sum over target entries of (Delta~ - M(v))^2, v in log-Cholesky coordinates."""

    def __init__(self, target: PredictorCovTarget, spec: ModelSpec, error_diag: np.ndarray):
        self.spec = spec
        self.model = PredictorCovarianceModel(spec, error_diag)
        if self.model.dim != target.dim:
            raise ValueError(f"target has dimension {target.dim}, model implies {self.model.dim}")
        self.rows, self.cols = target.target_indices()
        self.values = target.delta_tilde[self.rows, self.cols]
        self.n_blocks = spec.n_predictor_blocks

    def blocks(self, v: np.ndarray) -> List[np.ndarray]:
        return split_log_cholesky(v, self.spec.n_raters, self.n_blocks)

    def implied(self, v: np.ndarray) -> np.ndarray:
        blocks = self.blocks(v)
        gamma = blocks[-1] if self.spec.has_interaction else None
        return self.model.implied(blocks[:self.spec.n_components], gamma)

    def __call__(self, v: np.ndarray) -> float:
        residual = self.values - self.implied(v)[self.rows, self.cols]
        return float(residual @ residual)

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return finite_difference_gradient(self, v)

    def start(self, params: ParameterSet) -> np.ndarray:
        return np.concatenate([log_cholesky(m) for m in params.covariance_blocks(self.spec.has_interaction)])

    @property
    def n_parameters(self) -> int:
        return self.n_blocks * n_log_cholesky(self.spec.n_raters)


def recover_variance_components(
    target: PredictorCovTarget,
    spec: ModelSpec,
    dispersion_tilde: float,
    fit: FitResult,
    start: Optional[np.ndarray] = None,
) -> VarianceRecovery:
    """
    Least-squares match of the model-implied predictor covariance to the drawn
    target, solved by inexact Newton from the fitted components.
    """
    objective = RecoveryObjective(target, spec, pivot_error_diagonal(spec, fit, dispersion_tilde))
    x0 = objective.start(fit.estimates) if start is None else start
    result = newton_cg(objective, x0, gradient=objective.gradient)
    blocks = objective.blocks(result.x)
    sigma_alpha = np.stack(blocks[:spec.n_components])
    sigma_gamma = blocks[-1] if spec.has_interaction else np.zeros((spec.n_raters, spec.n_raters))
    if not result.converged:
        logger.debug("variance recovery stopped: %s (|g|=%.2e)", result.message, result.gradient_norm)
    return VarianceRecovery(sigma_alpha=sigma_alpha, sigma_gamma=sigma_gamma, solver=result)


# =============================================================================
# FIXED EFFECTS AND DISPERSION
# =============================================================================

def beta_pivot_covariance(fit: FitResult, spec: ModelSpec, components: ParameterSet) -> np.ndarray:
    """(X^T Sigma~_C^{-1} X)^{-1} with Sigma~_C = I_N kron Sigma~_{Y*}."""
    error_diag = pivot_error_diagonal(spec, fit, components.dispersion)
    cov = build_marginal_covariance(spec, components, error_diag)
    design = spec.stacked_design
    information = fit.n_subjects * design.T @ cov.solve(design)
    information = 0.5 * (information + information.T)
    try:
        return linalg.inv(information, check_finite=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"fixed-effect information matrix is singular: {e}") from e


def symmetric_sqrt(m: np.ndarray) -> np.ndarray:
    """Spectral square root of a symmetric positive definite matrix."""
    w, u = np.linalg.eigh(m)
    if w[0] <= 0:
        raise NotPositiveDefinite("matrix is not positive definite")
    return (u * np.sqrt(w)) @ u.T


def sample_beta_fiducial(
    fit: FitResult,
    spec: ModelSpec,
    components: ParameterSet,
    rng: np.random.Generator,
    z: Optional[np.ndarray] = None,
) -> np.ndarray:
    """beta~ = beta_hat - (X^T Sigma~_C^{-1} X)^{-1/2} Z_beta, returned as an L x d matrix."""
    root = symmetric_sqrt(beta_pivot_covariance(fit, spec, components))
    if z is None:
        z = rng.standard_normal(root.shape[0])
    beta = fit.estimates.beta.ravel() - root @ z
    return beta.reshape(spec.n_raters, spec.n_fixed)


def gamma_shape_standard_error(tau_hat: float, df: int) -> float:
    """Delta-method standard error of the Pearson shape estimator."""
    return tau_hat * np.sqrt((2.0 + 6.0 / tau_hat) / df)


def gaussian_dispersion_pivot(df: int, sigma2_hat: float, u: float) -> float:
    return df * sigma2_hat / u


def gamma_shape_pivot(tau_hat: float, std_error: float, z: float) -> float:
    return tau_hat + std_error * z


def sample_dispersion_fiducial(fit: FitResult, spec: ModelSpec, rng: np.random.Generator) -> float:
    """
    Gaussian: m sigma2_hat / U, U ~ chi2(m). Poisson: 1.
    Gamma: normal approximation around tau_hat, truncated to positive values.
    """
    if spec.family == Family.POISSON:
        return 1.0
    df = fit.dispersion_df
    if df <= 0:
        raise InsufficientDF(f"residual degrees of freedom {df} are not positive")
    if spec.family == Family.GAUSSIAN:
        return gaussian_dispersion_pivot(df, fit.dispersion_estimate, rng.chisquare(df))
    tau_hat = fit.dispersion_estimate
    se = gamma_shape_standard_error(tau_hat, df)
    z = stats.truncnorm.rvs(-tau_hat / se, np.inf, random_state=rng)
    return gamma_shape_pivot(tau_hat, se, float(z))


# =============================================================================
# JOINT DRAWS
# =============================================================================

def sample_joint_draw(
    fit: FitResult,
    spec: ModelSpec,
    rng: np.random.Generator,
    mode: DrawMode = DrawMode.JOINT,
    predictors: Optional[PredictorSet] = None,
) -> FiducialDraw:
    """One complete draw; raises SolverFailure when the variance recovery does not converge."""
    if predictors is None:
        predictors = predict_conditional_means(fit, spec)
    dispersion = sample_dispersion_fiducial(fit, spec, rng)
    target = sample_predictor_cov_fiducial(predictors, rng, mode)
    recovery = recover_variance_components(target, spec, dispersion, fit)
    solver = SolverDiagnostics(
        objective=recovery.solver.fun,
        iterations=recovery.solver.iterations,
        converged=recovery.converged,
        gradient_norm=recovery.solver.gradient_norm,
    )
    if not recovery.converged:
        raise SolverFailure(f"variance recovery did not converge: {recovery.solver.message}", result=solver)
    components = ParameterSet(beta=fit.estimates.beta, sigma_alpha=recovery.sigma_alpha,
                              sigma_gamma=recovery.sigma_gamma, dispersion=dispersion)
    beta = sample_beta_fiducial(fit, spec, components, rng)
    return FiducialDraw(beta_tilde=beta, sigma_alpha_tilde=recovery.sigma_alpha, sigma_gamma_tilde=recovery.sigma_gamma,
                        dispersion_tilde=dispersion, solver=solver)


def draw_with_retries(
    fit: FitResult,
    spec: ModelSpec,
    seed: int,
    index: Sequence[int],
    mode: DrawMode = DrawMode.JOINT,
    predictors: Optional[PredictorSet] = None,
) -> Tuple[Optional[FiducialDraw], int]:
    """
    Draw number ``index`` from its own substream, resampling up to MAX_DRAW_RETRIES
    times on solver failure. Returns (draw or None, attempts used).
    """
    for attempt in range(MAX_DRAW_RETRIES + 1):
        rng = substream(seed, STREAM_DRAW, *index, attempt)
        try:
            draw = sample_joint_draw(fit, spec, rng, mode, predictors)
        except SolverFailure as e:
            logger.debug("draw %s attempt %d failed: %s", tuple(index), attempt, e)
            continue
        if attempt:
            draw = draw.model_copy(update={"solver": draw.solver.model_copy(update={"retries": attempt})})
        return draw, attempt + 1
    logger.warning("draw %s failed after %d retries", tuple(index), MAX_DRAW_RETRIES)
    return None, MAX_DRAW_RETRIES + 1


def fiducial_parameter_intervals(draws: Sequence[FiducialDraw], alpha: float) -> Dict[str, Tuple[float, float]]:
    """Equal-tailed intervals for every scalar pivot across the draws."""
    if not draws:
        return {}
    flat = [d.flat() for d in draws]
    intervals = {}
    for name in flat[0]:
        values = np.array([f[name] for f in flat])
        lo, hi = np.quantile(values, [alpha / 2, 1 - alpha / 2])
        intervals[name] = (float(lo), float(hi))
    return intervals
