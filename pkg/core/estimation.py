"""
Model fitting: REML for the Gaussian mixed model and penalized quasi-likelihood
linearization for the Poisson (log) and Gamma (inverse) families.

All subjects share the fixed design, so one subject's pseudo-observations are a
KTL vector with covariance

    V_i = sum_c Sigma_c kron P_c + phi * diag(D_i)

where the P_c are the basis outer products z_s z_s^T and, with a subject-time
effect, I_T kron J_K.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import linalg, optimize

from config.constants import (
    LINEARIZATION_MAX_ITER,
    LINEARIZATION_TOL,
    MAX_STEP_HALVINGS,
    POISSON_START_OFFSET,
    REML_GTOL,
    REML_MAX_ITER,
    REML_RELAXED_GTOL,
)
from core.covariance import (
    build_marginal_covariance,
    cross_cov_matrix,
    error_diagonal,
    from_log_cholesky,
    log_cholesky,
    n_log_cholesky,
    subject_error_diagonals,
)
from core.exceptions import DomainError, InsufficientDF, NonConvergence, SingularDesign
from core.models.base import Family, ModelSpec, ParameterSet, RatingDataset
from core.models.results import FitResult, PredictorSet
from utils.logger import get_logger

logger = get_logger(__name__)

Responses = Union[RatingDataset, np.ndarray]


# =============================================================================
# LINK FUNCTIONS AND PSEUDO-OBSERVATIONS
# =============================================================================

def inverse_link(family: Family, eta: np.ndarray) -> np.ndarray:
    if family == Family.GAUSSIAN:
        return np.asarray(eta, dtype=float)
    if family == Family.POISSON:
        return np.exp(eta)
    with np.errstate(divide="ignore"):
        return 1.0 / np.asarray(eta, dtype=float)


def link(family: Family, mu: np.ndarray) -> np.ndarray:
    if family == Family.GAUSSIAN:
        return np.asarray(mu, dtype=float)
    if family == Family.POISSON:
        return np.log(mu)
    return 1.0 / np.asarray(mu, dtype=float)


def _stacked(data: Responses) -> np.ndarray:
    if isinstance(data, RatingDataset):
        return data.stacked()
    return np.atleast_2d(np.asarray(data, dtype=float))


def pseudo_observations(
    data: Responses,
    spec: ModelSpec,
    fitted_means: Optional[np.ndarray] = None,
    fitted_linear_predictors: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Linearized responses y* = eta + G'(mu) (y - mu), one KTL row per subject.

    Gaussian: y* = y. Poisson: y* = eta + (y - mu)/mu. Gamma: y* = eta - (y - mu)/mu^2.
    """
    y = _stacked(data)
    if spec.family == Family.GAUSSIAN:
        return y.copy()
    mu = np.broadcast_to(np.asarray(fitted_means, dtype=float), y.shape)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise DomainError(f"{spec.family.value} fitted means must be finite and positive")
    eta = link(spec.family, mu) if fitted_linear_predictors is None else np.broadcast_to(fitted_linear_predictors, y.shape)
    if spec.family == Family.POISSON:
        ystar = eta + (y - mu) / mu
    else:
        ystar = eta - (y - mu) / mu ** 2
    if not np.all(np.isfinite(ystar)):
        raise DomainError("pseudo-observations are not finite")
    return ystar


# =============================================================================
# RESTRICTED MAXIMUM LIKELIHOOD
# =============================================================================

@dataclass
class RemlSolution:
    """Quantities at the REML optimum of one (weighted) linear mixed model."""
    sigma_alpha: np.ndarray
    sigma_gamma: np.ndarray
    dispersion: float
    beta: np.ndarray            # (L, d)
    beta_covariance: np.ndarray
    linear_predictor: np.ndarray    # X beta + predicted random part, (N, KTL)
    residuals: np.ndarray           # y* - linear_predictor
    theta: np.ndarray
    objective: float
    iterations: int


class RemlProblem:
    """
    Restricted log-likelihood over log-Cholesky coordinates of every random-effect
    covariance and, optionally, the log of a common error scale phi.

    The objective is -2 l_R / N with the analytic gradient
    d(-2 l_R) = tr(G dV), G = sum_i [V_i^-1 - V_i^-1 X A^-1 X^T V_i^-1 - u_i u_i^T], u_i = V_i^-1 r_i.
    """

    def __init__(self, responses: np.ndarray, spec: ModelSpec, error_weights: np.ndarray, estimate_scale: bool):
        self.y = responses
        self.spec = spec
        self.n_subjects, self.p = responses.shape
        self.n_raters = spec.n_raters
        self.design = spec.stacked_design
        weights = np.atleast_2d(error_weights)
        self.shared = weights.shape[0] == 1 or bool(np.all(weights == weights[0]))
        self.weights = weights[:1] if self.shared else weights
        self.estimate_scale = estimate_scale
        self.patterns = [np.outer(z, z) for z in spec.basis]
        if spec.has_interaction:
            self.patterns.append(np.kron(np.eye(spec.n_times), np.ones((spec.n_replicates, spec.n_replicates))))
        self.block_size = n_log_cholesky(self.n_raters)
        self.n_theta = len(self.patterns) * self.block_size + (1 if estimate_scale else 0)
        self.history: List[float] = []

    # ---- parameter mapping ------------------------------------------------

    def components(self, theta: np.ndarray) -> List[np.ndarray]:
        size = self.block_size
        return [from_log_cholesky(theta[c * size:(c + 1) * size], self.n_raters) for c in range(len(self.patterns))]

    def scale(self, theta: np.ndarray) -> float:
        return float(np.exp(theta[-1])) if self.estimate_scale else 1.0

    def random_covariance(self, comps: List[np.ndarray]) -> np.ndarray:
        sigma = np.zeros((self.p, self.p))
        for m, pattern in zip(comps, self.patterns):
            sigma += np.kron(m, pattern)
        return sigma

    def _marginal(self, theta: np.ndarray) -> Tuple[List[np.ndarray], float, np.ndarray, np.ndarray]:
        comps = self.components(theta)
        phi = self.scale(theta)
        sigma_re = self.random_covariance(comps)
        v = np.repeat(sigma_re[None], self.weights.shape[0], axis=0)
        idx = np.arange(self.p)
        v[:, idx, idx] += phi * self.weights
        return comps, phi, sigma_re, v

    # ---- objective --------------------------------------------------------

    def _evaluate(self, theta: np.ndarray, with_gradient: bool = True):
        comps, phi, sigma_re, v = self._marginal(theta)
        chol = np.linalg.cholesky(v)
        logdet_v = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        v_inv = np.linalg.inv(v)
        v_inv = 0.5 * (v_inv + np.swapaxes(v_inv, 1, 2))
        vx = v_inv @ self.design                                    # (B, p, Ld)
        n = self.n_subjects
        if self.shared:
            a = n * self.design.T @ vx[0]
            rhs = self.design.T @ (v_inv[0] @ self.y.sum(axis=0))
        else:
            a = np.einsum("pa,ipb->ab", self.design, vx)
            rhs = np.einsum("ipa,ip->a", vx, self.y)
        a = 0.5 * (a + a.T)
        try:
            a_chol = linalg.cho_factor(a)
        except linalg.LinAlgError as e:
            raise SingularDesign(f"GLS normal equations are singular: {e}") from e
        beta = linalg.cho_solve(a_chol, rhs)
        r = self.y - self.design @ beta
        if self.shared:
            u = r @ v_inv[0]
            quad = float(np.sum(u * r))
            logdet_total = n * logdet_v[0]
        else:
            u = np.einsum("ipq,iq->ip", v_inv, r)
            quad = float(np.sum(u * r))
            logdet_total = float(logdet_v.sum())
        logdet_a = 2.0 * np.log(np.diag(a_chol[0])).sum()
        f = (logdet_total + logdet_a + quad) / n
        state = dict(comps=comps, phi=phi, sigma_re=sigma_re, v_inv=v_inv, vx=vx, a_chol=a_chol, beta=beta, r=r, u=u)
        if not with_gradient:
            return f, None, state

        proj = np.einsum("ipa,ab,iqb->ipq", vx, linalg.cho_solve(a_chol, np.eye(a.shape[0])), vx)
        if self.shared:
            g = n * (v_inv[0] - proj[0]) - u.T @ u
        else:
            g = (v_inv - proj).sum(axis=0) - u.T @ u
        g = 0.5 * (g + g.T)

        kt = self.spec.kt
        g4 = g.reshape(self.n_raters, kt, self.n_raters, kt)
        grad = np.zeros(self.n_theta)
        rows, cols = np.tril_indices(self.n_raters)
        on_diag = rows == cols
        for c, pattern in enumerate(self.patterns):
            h = np.einsum("apbq,pq->ab", g4, pattern)
            factor = self._factor_from_theta(theta, c)
            dl = 2.0 * h @ factor
            block = dl[rows, cols]
            block[on_diag] *= factor[rows[on_diag], cols[on_diag]]
            grad[c * self.block_size:(c + 1) * self.block_size] = block
        if self.estimate_scale:
            if self.shared:
                gd = float(np.sum(self.weights[0] * np.diag(g)))
            else:
                diag_inv = np.diagonal(v_inv, axis1=1, axis2=2)
                diag_proj = np.diagonal(proj, axis1=1, axis2=2)
                gd = float(np.sum(self.weights * (diag_inv - diag_proj - u ** 2)))
            grad[-1] = phi * gd
        return f, grad / n, state

    def _factor_from_theta(self, theta: np.ndarray, c: int) -> np.ndarray:
        size = self.block_size
        v = theta[c * size:(c + 1) * size].copy()
        rows, cols = np.tril_indices(self.n_raters)
        on_diag = rows == cols
        v[on_diag] = np.exp(v[on_diag])
        factor = np.zeros((self.n_raters, self.n_raters))
        factor[rows, cols] = v
        return factor

    def objective(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            f, grad, _ = self._evaluate(theta)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros(self.n_theta)
        self.history.append(float(f))
        return f, grad

    # ---- starting values and solution -------------------------------------

    def initial_theta(self) -> np.ndarray:
        beta_ols, *_ = np.linalg.lstsq(self.design, self.y.mean(axis=0), rcond=None)
        resid = (self.y - self.design @ beta_ols).reshape(self.n_subjects, self.n_raters, self.spec.kt)
        var = np.maximum(resid.var(axis=(0, 2)), 1e-6)
        subject_means = resid.mean(axis=2)
        start = [np.cov(subject_means, rowvar=False).reshape(self.n_raters, self.n_raters) + 0.05 * np.diag(var)]
        for z in self.spec.basis[1:]:
            start.append(0.1 * np.diag(var) / max(float(np.mean(z ** 2)), 1e-12))
        if self.spec.has_interaction:
            start.append(0.1 * np.diag(var))
        theta = [log_cholesky(m) for m in start]
        if self.estimate_scale:
            theta.append(np.array([np.log(0.3 * float(var.mean()))]))
        return np.concatenate(theta)

    def solution(self, theta: np.ndarray, iterations: int) -> RemlSolution:
        f, _, state = self._evaluate(theta, with_gradient=False)
        comps = state["comps"]
        n_alpha = self.spec.n_components
        sigma_alpha = np.stack(comps[:n_alpha])
        sigma_gamma = comps[n_alpha] if self.spec.has_interaction else np.zeros((self.n_raters, self.n_raters))
        # predicted random part Sigma_RE V_i^{-1} r_i
        random_part = state["u"] @ state["sigma_re"]
        fixed = self.design @ state["beta"]
        eta = fixed + random_part
        beta_cov = linalg.cho_solve(state["a_chol"], np.eye(self.design.shape[1]))
        return RemlSolution(
            sigma_alpha=sigma_alpha,
            sigma_gamma=sigma_gamma,
            dispersion=state["phi"],
            beta=state["beta"].reshape(self.n_raters, -1),
            beta_covariance=0.5 * (beta_cov + beta_cov.T),
            linear_predictor=eta,
            residuals=self.y - eta,
            theta=theta,
            objective=f,
            iterations=iterations,
        )


def fit_reml(
    responses: np.ndarray,
    spec: ModelSpec,
    error_weights: Optional[np.ndarray] = None,
    estimate_scale: bool = True,
    theta0: Optional[np.ndarray] = None,
) -> RemlSolution:
    """
    REML fit of the linear mixed model for stacked responses (N, KTL).

    error_weights are the per-observation error variances up to the scale phi
    (ones for the Gaussian model); phi is estimated when estimate_scale is set.
    """
    responses = np.atleast_2d(np.asarray(responses, dtype=float))
    if responses.shape[0] < 2:
        raise SingularDesign("at least two subjects are required")
    if np.ptp(responses) == 0:
        raise SingularDesign("responses are constant; variance components are not estimable")
    if np.linalg.matrix_rank(spec.fixed_design) < spec.n_fixed:
        raise SingularDesign("fixed-effect design is rank deficient")
    if error_weights is None:
        error_weights = np.ones((1, spec.n_obs))
    problem = RemlProblem(responses, spec, error_weights, estimate_scale)
    start = problem.initial_theta() if theta0 is None else np.asarray(theta0, dtype=float)

    result = optimize.minimize(
        problem.objective,
        start,
        jac=True,
        method="BFGS",
        options={"gtol": REML_GTOL, "maxiter": REML_MAX_ITER},
    )
    grad_norm = float(np.max(np.abs(result.jac))) if result.jac is not None else np.inf
    if not np.isfinite(result.fun):
        raise NonConvergence("REML objective is not finite at the returned point", trace=problem.history)
    if not result.success:
        if result.nit >= REML_MAX_ITER or grad_norm >= REML_RELAXED_GTOL:
            raise NonConvergence(
                f"REML did not converge after {result.nit} iterations (gradient {grad_norm:.2e}): {result.message}",
                trace=problem.history, iterations=int(result.nit),
            )
        logger.warning("REML stopped with '%s'; accepting gradient norm %.2e", result.message, grad_norm)
    logger.debug("REML converged in %d iterations, objective %.6f", result.nit, result.fun)
    return problem.solution(result.x, int(result.nit))


# =============================================================================
# DEGREES OF FREEDOM AND DISPERSION
# =============================================================================

def residual_df(spec: ModelSpec, n_subjects: int) -> int:
    """NTKL - dL - (S+1)NL - NTL, the last term only with a subject-time effect."""
    n, t, k, l = n_subjects, spec.n_times, spec.n_replicates, spec.n_raters
    df = n * t * k * l - spec.n_fixed * l - spec.n_components * n * l
    if spec.has_interaction:
        df -= n * t * l
    return df


def _pearson_shape_from_data(y: np.ndarray, mu: np.ndarray, df: int) -> float:
    pearson = float(np.sum(((y - mu) / mu) ** 2))
    if pearson <= 0:
        raise DomainError("Pearson statistic is zero; the Gamma shape is not estimable")
    return df / pearson


def _pearson_shape(fit_means: np.ndarray, ystar: np.ndarray, eta: np.ndarray, df: int) -> float:
    # (y - mu)/mu = -mu (y* - eta) for the inverse link
    pearson = np.sum((fit_means * (ystar - eta)) ** 2)
    if pearson <= 0:
        raise DomainError("Pearson statistic is zero; the Gamma shape is not estimable")
    return df / float(pearson)


def estimate_dispersion(fit: FitResult, spec: ModelSpec) -> float:
    """
    Gaussian: residual sum of squares over the residual df.
    Poisson: 1. Gamma: Pearson moment estimator of the shape tau.
    """
    if spec.family == Family.POISSON:
        return 1.0
    df = residual_df(spec, fit.n_subjects)
    if df <= 0:
        raise InsufficientDF(f"residual degrees of freedom {df} are not positive")
    if spec.family == Family.GAUSSIAN:
        return float(np.sum(fit.residuals ** 2)) / df
    return _pearson_shape(fit.fitted_means, fit.pseudo_obs, fit.linear_predictor, df)


# =============================================================================
# GAUSSIAN FIT
# =============================================================================

def fit_gaussian_lmm(data: RatingDataset, spec: ModelSpec) -> FitResult:
    """REML fit of the Gaussian linear mixed model; beta by generalized least squares."""
    if spec.family != Family.GAUSSIAN:
        raise ValueError("fit_gaussian_lmm requires the Gaussian family")
    if not spec.matches(data):
        raise ValueError("dataset dimensions do not match the model")
    y = data.stacked()
    sol = fit_reml(y, spec, estimate_scale=True)
    estimates = ParameterSet(beta=sol.beta, sigma_alpha=sol.sigma_alpha, sigma_gamma=sol.sigma_gamma, dispersion=sol.dispersion)
    df = residual_df(spec, data.n_subjects)
    if df <= 0:
        raise InsufficientDF(f"residual degrees of freedom {df} are not positive")
    fit = FitResult(
        estimates=estimates,
        pseudo_obs=y.copy(),
        fitted_means=sol.linear_predictor,
        linear_predictor=sol.linear_predictor,
        residuals=sol.residuals,
        error_diag=error_diagonal(spec, sol.dispersion),
        beta_covariance=sol.beta_covariance,
        dispersion_estimate=float(np.sum(sol.residuals ** 2)) / df,
        dispersion_df=df,
        iterations=1,
        reml_iterations=sol.iterations,
        objective=sol.objective,
    )
    logger.info("Gaussian REML fit: N=%d, sigma2=%.4g, %d iterations", data.n_subjects, sol.dispersion, sol.iterations)
    return fit


# =============================================================================
# LINEARIZED GLMM FIT
# =============================================================================

def _mean_is_valid(family: Family, eta: np.ndarray) -> bool:
    if not np.all(np.isfinite(eta)):
        return False
    if family == Family.GAMMA:
        return bool(np.all(eta > 0))
    return bool(np.all(eta < 700.0))


def _initial_means(family: Family, y: np.ndarray) -> np.ndarray:
    if family == Family.POISSON:
        return y + POISSON_START_OFFSET
    return y.copy()


def _initial_shape(y: np.ndarray) -> float:
    cell_means = y.mean(axis=0, keepdims=True)
    cv2 = float(np.mean(((y - cell_means) / cell_means) ** 2))
    return 1.0 / max(cv2, 1e-6)


def fit_glmm_linearized(data: RatingDataset, spec: ModelSpec) -> FitResult:
    """
    Penalized quasi-likelihood: alternate pseudo-observations, a weighted REML fit
    with the error diagonal at the current means, and the conditional-mode update
    of the linear predictor, until the linear predictor moves less than the tolerance.
    """
    if spec.family == Family.GAUSSIAN:
        raise ValueError("fit_glmm_linearized requires the Poisson or Gamma family")
    if not spec.matches(data):
        raise ValueError("dataset dimensions do not match the model")
    data.check_family(spec.family)
    y = data.stacked()
    df = residual_df(spec, data.n_subjects)
    if df <= 0:
        raise InsufficientDF(f"residual degrees of freedom {df} are not positive")

    family = spec.family
    mu = _initial_means(family, y)
    eta = link(family, mu)
    shape = _initial_shape(y) if family == Family.GAMMA else 1.0
    theta: Optional[np.ndarray] = None
    trace: List[float] = []
    sol: Optional[RemlSolution] = None

    for iteration in range(1, LINEARIZATION_MAX_ITER + 1):
        ystar = pseudo_observations(y, spec, mu, eta)
        weights = subject_error_diagonals(spec, shape, mu)
        sol = fit_reml(ystar, spec, error_weights=weights, estimate_scale=False, theta0=theta)
        theta = sol.theta

        step = sol.linear_predictor - eta
        for halving in range(MAX_STEP_HALVINGS + 1):
            candidate = eta + step * 0.5 ** halving
            if _mean_is_valid(family, candidate):
                break
        else:
            raise DomainError(f"linear predictor left the {family.value} mean domain after {MAX_STEP_HALVINGS} step halvings")
        if halving:
            logger.debug("linearization step halved %d times at iteration %d", halving, iteration)

        gap = float(np.max(np.abs(candidate - eta)))
        eta = candidate
        mu = inverse_link(family, eta)
        trace.append(gap)
        if family == Family.GAMMA:
            shape = _pearson_shape_from_data(y, mu, df)
        logger.debug("linearization iteration %d: gap %.3e", iteration, gap)
        if gap < LINEARIZATION_TOL:
            break
    else:
        raise NonConvergence(f"linearization did not converge in {LINEARIZATION_MAX_ITER} iterations", trace=trace)

    ystar = pseudo_observations(y, spec, mu, eta)
    estimates = ParameterSet(beta=sol.beta, sigma_alpha=sol.sigma_alpha, sigma_gamma=sol.sigma_gamma, dispersion=shape)
    fit = FitResult(
        estimates=estimates,
        pseudo_obs=ystar,
        fitted_means=mu,
        linear_predictor=eta,
        residuals=ystar - eta,
        error_diag=error_diagonal(spec, shape, mu),
        beta_covariance=sol.beta_covariance,
        dispersion_estimate=shape,
        dispersion_df=df,
        iterations=len(trace),
        convergence_gap=trace[-1],
        reml_iterations=sol.iterations,
        objective=sol.objective,
        trace=trace,
    )
    logger.info("%s linearized fit converged in %d iterations (gap %.2e)", family.value, len(trace), trace[-1])
    return fit


def fit_model(data: RatingDataset, spec: ModelSpec) -> FitResult:
    """Family dispatch between the Gaussian REML fit and the linearized GLMM fit."""
    if spec.family == Family.GAUSSIAN:
        return fit_gaussian_lmm(data, spec)
    return fit_glmm_linearized(data, spec)


# =============================================================================
# CONDITIONAL MEANS
# =============================================================================

def predict_conditional_means(fit: FitResult, spec: ModelSpec) -> PredictorSet:
    """mu_alpha_s,i = sigma^s_alpha Sigma_{Y*}^{-1} (Y*_i - X beta), one Cholesky solve for all s and gamma."""
    params = fit.estimates
    cov = build_marginal_covariance(spec, params, fit.error_diag)
    fixed = spec.stacked_design @ params.beta.ravel()
    weighted = cov.solve((fit.pseudo_obs - fixed).T)                 # (KTL, N)
    predictions = (cross_cov_matrix(spec, params) @ weighted).T      # (N, q)
    n_alpha = spec.n_components * spec.n_raters
    mu_alpha = predictions[:, :n_alpha].reshape(fit.n_subjects, spec.n_components, spec.n_raters)
    mu_gamma = predictions[:, n_alpha:] if spec.has_interaction else None
    return PredictorSet(mu_alpha=mu_alpha, mu_gamma=mu_gamma)
