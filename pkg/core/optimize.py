"""
Hessian-free Newton-CG for smooth unconstrained least squares.

scipy's Newton-CG drives the iteration (truncated CG inner solve, Wolfe line
search). Gradients come from central differences of the objective and
Hessian-vector products from central differences of that gradient.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from config.constants import (
    FD_GRADIENT_STEP,
    FD_HESSIAN_STEP,
    NEWTON_GTOL,
    NEWTON_MAX_ITER,
    NEWTON_RELAXED_GTOL,
    NEWTON_XTOL,
)
from utils.logger import get_logger

logger = get_logger(__name__)

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]


@dataclass
class NewtonResult:
    x: np.ndarray
    fun: float
    gradient_norm: float
    iterations: int
    converged: bool
    message: str


def finite_difference_gradient(fun: Objective, x: np.ndarray, step: float = FD_GRADIENT_STEP) -> np.ndarray:
    """Central-difference gradient with steps scaled by max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return grad


def hessian_vector_product(gradient: Gradient, x: np.ndarray, d: np.ndarray, step: float = FD_HESSIAN_STEP) -> np.ndarray:
    """H d by central differences of the gradient along d."""
    norm = float(np.linalg.norm(d))
    if norm == 0:
        return np.zeros_like(d)
    eps = step * max(1.0, float(np.linalg.norm(x))) / norm
    return (gradient(x + eps * d) - gradient(x - eps * d)) / (2.0 * eps)


def newton_cg(
    fun: Objective,
    x0: np.ndarray,
    gtol: float = NEWTON_GTOL,
    max_iter: int = NEWTON_MAX_ITER,
    gradient: Optional[Gradient] = None,
) -> NewtonResult:
    """
    Minimize fun from x0. Converged when the gradient infinity-norm drops below
    gtol, or below NEWTON_RELAXED_GTOL once scipy reports step convergence.
    """
    grad_fn = gradient or (lambda z: finite_difference_gradient(fun, z))
    x0 = np.asarray(x0, dtype=float)
    f0 = float(fun(x0))
    if not np.isfinite(f0):
        return NewtonResult(x0, f0, np.inf, 0, False, "objective is not finite at the starting point")
    g0 = float(np.max(np.abs(grad_fn(x0))))
    if g0 < gtol:
        return NewtonResult(x0.copy(), f0, g0, 0, True, "gradient tolerance reached at the start")

    result = optimize.minimize(
        fun,
        x0,
        method="Newton-CG",
        jac=grad_fn,
        hessp=lambda x, p: hessian_vector_product(grad_fn, x, p),
        options={"xtol": NEWTON_XTOL, "maxiter": max_iter},
    )
    gnorm = float(np.max(np.abs(result.jac))) if result.jac is not None else np.inf
    f = float(result.fun)
    converged = bool(np.isfinite(f) and (gnorm < gtol or (result.success and gnorm < NEWTON_RELAXED_GTOL)))
    if not converged:
        logger.debug("Newton-CG stopped after %d iterations: %s (|g|=%.2e)", result.nit, result.message, gnorm)
    return NewtonResult(result.x, f, gnorm, int(result.nit), converged, str(result.message))
