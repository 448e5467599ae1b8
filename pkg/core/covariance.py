"""
Covariance algebra of the linearized mixed model.

One subject's pseudo-observations form a KTL vector laid out rater-major, so
Sigma_{Y*} is an L x L grid of KT x KT blocks:

    block(l, l') = sum_s sigma^s_{alpha,ll'} z_s z_s^T + sigma_{gamma,ll'} (I_T kron J_K) [+ error diagonal if l = l']
"""

from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from config.constants import LOG_CHOLESKY_FLOOR
from core.basis import build_basis
from core.exceptions import DomainError, NotPositiveDefinite
from core.models.base import Family, ModelSpec, ParameterSet
from core.models.results import MarginalCovariance

__all__ = [
    "build_basis",
    "error_diagonal",
    "subject_error_diagonals",
    "build_marginal_covariance",
    "build_cross_cov_alpha",
    "build_cross_cov_gamma",
    "cross_cov_matrix",
    "PredictorCovarianceModel",
    "implied_predictor_covariance",
    "log_cholesky",
    "from_log_cholesky",
]


# =============================================================================
# ERROR DIAGONAL
# =============================================================================

def subject_error_diagonals(spec: ModelSpec, dispersion: float, fitted_means: np.ndarray) -> np.ndarray:
    """Per-subject error variances of y*: sigma^2, 1/mu (Poisson) or 1/(tau mu^2) (Gamma)."""
    mu = np.atleast_2d(np.asarray(fitted_means, dtype=float))
    if spec.family == Family.GAUSSIAN:
        return np.full(mu.shape, float(dispersion))
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise DomainError("fitted means must be finite and positive for the error diagonal")
    if spec.family == Family.POISSON:
        return 1.0 / mu
    return 1.0 / (float(dispersion) * mu ** 2)


def error_diagonal(spec: ModelSpec, dispersion: float, fitted_means: Optional[np.ndarray] = None) -> np.ndarray:
    """Plug-in KTL error diagonal: subject-averaged error variances at the fitted means."""
    if spec.family == Family.GAUSSIAN:
        return np.full(spec.n_obs, float(dispersion))
    if fitted_means is None:
        raise ValueError(f"{spec.family.value} error diagonal needs fitted means")
    return subject_error_diagonals(spec, dispersion, fitted_means).mean(axis=0)


# =============================================================================
# MARGINAL COVARIANCE AND CROSS-COVARIANCES
# =============================================================================

def _interaction_pattern(spec: ModelSpec) -> np.ndarray:
    return np.kron(np.eye(spec.n_times), np.ones((spec.n_replicates, spec.n_replicates)))


def random_effect_covariance(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """Sigma_{Y*} without the error diagonal."""
    sigma = np.zeros((spec.n_obs, spec.n_obs))
    for s, z in enumerate(spec.basis):
        sigma += np.kron(params.sigma_alpha[s], np.outer(z, z))
    if np.any(params.sigma_gamma):
        sigma += np.kron(params.sigma_gamma, _interaction_pattern(spec))
    return sigma


def build_marginal_covariance(spec: ModelSpec, params: ParameterSet, error_diag: np.ndarray) -> MarginalCovariance:
    """Assemble Sigma_{Y*}; raises NotPositiveDefinite when the Cholesky factorization fails."""
    params.check_against(spec)
    error_diag = np.broadcast_to(np.asarray(error_diag, dtype=float), (spec.n_obs,)).copy()
    sigma = random_effect_covariance(spec, params)
    sigma[np.diag_indices_from(sigma)] += error_diag
    return MarginalCovariance(sigma_ystar=sigma, error_diag=error_diag, kt=spec.kt)


def _check_rater(spec: ModelSpec, l: int) -> None:
    if not 0 <= l < spec.n_raters:
        raise IndexError(f"rater index {l} out of range for L={spec.n_raters}")


def build_cross_cov_alpha(spec: ModelSpec, params: ParameterSet, s: int, l: int) -> np.ndarray:
    """cov(alpha^s_l, Y*): rater-l' segment equals sigma^s_{alpha,ll'} z_s (0-based s and l)."""
    if not 0 <= s <= spec.spline_order:
        raise IndexError(f"basis order {s} out of range for S={spec.spline_order}")
    _check_rater(spec, l)
    return np.kron(params.sigma_alpha[s][l], spec.basis[s])


def build_cross_cov_gamma(spec: ModelSpec, params: ParameterSet, l: int) -> np.ndarray:
    """cov(sum_j gamma_jl, Y*): rater-l' segment equals sigma_{gamma,ll'} 1_KT."""
    _check_rater(spec, l)
    return np.kron(params.sigma_gamma[l], np.ones(spec.kt))


def cross_cov_matrix(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """(q, KTL) rows in predictor order: alpha_0 raters, ..., alpha_S raters, gamma raters."""
    rows = [build_cross_cov_alpha(spec, params, s, l) for s in range(spec.n_components) for l in range(spec.n_raters)]
    if spec.has_interaction:
        rows.extend(build_cross_cov_gamma(spec, params, l) for l in range(spec.n_raters))
    return np.vstack(rows)


# =============================================================================
# IMPLIED PREDICTOR COVARIANCE
# =============================================================================

class PredictorCovarianceModel:
    """
    Covariance of the stacked conditional-mean predictors as a function of the
    random-effect covariances, for a fixed error diagonal.

    With b the vector of all random effects (alpha blocks, then gamma_j per time),
    Y* = Z b + e, G = cov(b) and D the error diagonal,

        cov(E[b | Y*]) = G Z^T V^{-1} Z G = G (I + Q G)^{-1} Q G,   Q = Z^T D^{-1} Z,

    so each evaluation only solves an r x r system instead of factoring V.
    """

    def __init__(self, spec: ModelSpec, error_diag: np.ndarray):
        error_diag = np.broadcast_to(np.asarray(error_diag, dtype=float), (spec.n_obs,))
        if np.any(error_diag <= 0) or not np.all(np.isfinite(error_diag)):
            raise NotPositiveDefinite("error diagonal must be finite and strictly positive")
        self.spec = spec
        n_raters = spec.n_raters
        eye = np.eye(n_raters)
        columns = [np.kron(eye, z[:, None]) for z in spec.basis]
        if spec.has_interaction:
            for j in range(spec.n_times):
                slot = np.zeros(spec.kt)
                slot[j * spec.n_replicates:(j + 1) * spec.n_replicates] = 1.0
                columns.append(np.kron(eye, slot[:, None]))
        self.design = np.hstack(columns)                      # Z: (KTL, r)
        self.precision_gram = self.design.T @ (self.design / error_diag[:, None])   # Q
        n_alpha = spec.n_components * n_raters
        blocks = [np.eye(n_alpha)]
        if spec.has_interaction:
            blocks.append(np.tile(eye, (1, spec.n_times)))
        self.aggregation = linalg.block_diag(*blocks)         # A: (q, r)

    @property
    def dim(self) -> int:
        return self.aggregation.shape[0]

    def effect_covariance(self, sigma_alpha: Sequence[np.ndarray], sigma_gamma: Optional[np.ndarray]) -> np.ndarray:
        blocks = list(sigma_alpha)
        if self.spec.has_interaction:
            blocks.append(np.kron(np.eye(self.spec.n_times), sigma_gamma))
        return linalg.block_diag(*blocks)

    def implied(self, sigma_alpha: Sequence[np.ndarray], sigma_gamma: Optional[np.ndarray] = None) -> np.ndarray:
        g = self.effect_covariance(sigma_alpha, sigma_gamma)
        qg = self.precision_gram @ g
        full = g @ np.linalg.solve(np.eye(qg.shape[0]) + qg, qg)
        m = self.aggregation @ full @ self.aggregation.T
        return 0.5 * (m + m.T)


def implied_predictor_covariance(spec: ModelSpec, params: ParameterSet, error_diag: np.ndarray) -> np.ndarray:
    """Model-implied covariance of the stacked predictors (alpha_0..alpha_S[, gamma])."""
    model = PredictorCovarianceModel(spec, error_diag)
    return model.implied(params.sigma_alpha, params.sigma_gamma)


# =============================================================================
# LOG-CHOLESKY COORDINATES
# =============================================================================

def log_cholesky(m: np.ndarray, floor: float = LOG_CHOLESKY_FLOOR) -> np.ndarray:
    """Lower-triangular Cholesky entries, row by row, with the diagonal on the log scale."""
    m = np.asarray(m, dtype=float)
    dim = m.shape[0]
    scale = max(float(np.trace(m)) / dim, 1.0) if dim else 1.0
    factor = np.linalg.cholesky(m + floor * scale * np.eye(dim))
    rows, cols = np.tril_indices(dim)
    v = factor[rows, cols].copy()
    on_diag = rows == cols
    v[on_diag] = np.log(v[on_diag])
    return v


def from_log_cholesky(v: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of log_cholesky: L L^T with L rebuilt from the coordinates."""
    factor = np.zeros((dim, dim))
    rows, cols = np.tril_indices(dim)
    values = np.asarray(v, dtype=float).copy()
    on_diag = rows == cols
    values[on_diag] = np.exp(values[on_diag])
    factor[rows, cols] = values
    return factor @ factor.T


def n_log_cholesky(dim: int) -> int:
    return dim * (dim + 1) // 2


def split_log_cholesky(v: np.ndarray, dim: int, n_blocks: int) -> List[np.ndarray]:
    size = n_log_cholesky(dim)
    return [from_log_cholesky(v[b * size:(b + 1) * size], dim) for b in range(n_blocks)]
