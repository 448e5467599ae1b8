"""
Time axis and polynomial bases shared by the random-effect and fixed-effect designs.

Observations of one rater are laid out time-major, replicate-minor:
position ``(j - 1) * K + k`` holds time point ``j`` and replicate ``k``.
"""

from typing import List

import numpy as np


def time_values(n_times: int, origin: int = 1, scale: float = 1.0) -> np.ndarray:
    """Time points t_j = (j - 1 + origin) * scale for j = 1..T."""
    return (np.arange(n_times, dtype=float) + origin) * scale


def build_basis(n_times: int, n_replicates: int, spline_order: int, origin: int = 1, scale: float = 1.0) -> List[np.ndarray]:
    """
    Monomial basis z_0..z_S over the KT layout.

    z_0 is the all-ones vector; z_s[(j-1)K + k] = t_j ** s.
    """
    if n_times < 1 or n_replicates < 1 or spline_order < 0:
        raise ValueError(f"invalid basis dimensions T={n_times}, K={n_replicates}, S={spline_order}")
    t = np.repeat(time_values(n_times, origin, scale), n_replicates)
    basis = [np.ones(n_times * n_replicates)]
    basis.extend(t ** s for s in range(1, spline_order + 1))
    return basis


def polynomial_design(n_times: int, n_replicates: int, order: int, origin: int = 1, scale: float = 1.0) -> np.ndarray:
    """KT x (order+1) fixed-effect design with columns 1, t, ..., t^order."""
    return np.column_stack(build_basis(n_times, n_replicates, order, origin, scale))
