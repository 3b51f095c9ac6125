"""
Channel correlation metric η with resolution of the blind ambiguities
(global phase per user, admissible integer delay shift, user permutation)
and empirical CCDF tables.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from tools.logger import AppLogger


_logger = AppLogger("metrics.log")

EXHAUSTIVE_PERMUTATION_LIMIT = 8


class MetricError(Exception):
    """Raised on invalid metric inputs."""
    pass


@dataclass
class EtaResult:
    """
    Attributes:
        eta_per_user (np.ndarray): η_k in [0, 1] for every true user k.
        best_delay_shift (np.ndarray): Delay shift d_k of the matched estimate.
        permutation (np.ndarray): Estimate column assigned to each true user.
        method_label (str): Estimator name.
        zero_estimate (np.ndarray): True where the matched estimate has zero norm.
    """
    eta_per_user: np.ndarray
    best_delay_shift: np.ndarray
    permutation: np.ndarray
    method_label: str = ""
    zero_estimate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass
class CcdfTable:
    """Empirical Pr(η ≥ threshold) on a grid of thresholds."""
    thresholds: np.ndarray
    prob: np.ndarray
    n_samples: int


def _check_pair(H_hat: np.ndarray, H_true: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    H_hat = np.asarray(H_hat, dtype=complex)
    H_true = np.asarray(H_true, dtype=complex)
    if H_hat.shape != H_true.shape or H_true.ndim != 3:
        raise MetricError(f"estimate shape {H_hat.shape} does not match channel shape {H_true.shape}")
    return H_hat, H_true


def _eta_matrix(H_hat: np.ndarray, H_true: np.ndarray, T_D: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """η and best shift for every (true user, estimate column) pair."""
    T = H_true.shape[0]
    inner = np.einsum("tnk,tnj->tkj", H_true.conj(), H_hat)
    shifts = np.arange(-T_D, T_D + 1)
    phase = np.exp(2j * np.pi * np.outer(shifts, np.arange(T)) / T)
    corr = np.abs(np.einsum("dt,tkj->dkj", phase, inner))
    best = np.argmax(corr, axis=0)
    norm_true = np.sum(np.abs(H_true) ** 2, axis=(0, 1))
    norm_hat = np.sum(np.abs(H_hat) ** 2, axis=(0, 1))
    denominator = np.sqrt(np.outer(norm_true, norm_hat))
    zero = denominator == 0
    eta = np.divide(np.max(corr, axis=0), denominator, out=np.zeros_like(denominator), where=~zero)
    return np.clip(eta, 0.0, 1.0), shifts[best], np.broadcast_to(norm_hat == 0, eta.shape)


def eta_metric(H_hat: np.ndarray, H_true: np.ndarray, T_D: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    η_k = max_{|d| ≤ T_D} |Σ_m h_k[m]^H ĥ_k[m] e^{j2πdm/T}| / √(Σ‖h_k‖² Σ‖ĥ_k‖²)
    for matched columns.

    Returns:
        (eta, shift): per-user η and the shift d at which Ĥ[m] ≈ H[m]e^{−j2πdm/T}.
        A zero-norm estimate yields η = 0.

    Raises:
        MetricError: On shape mismatch.
    """
    H_hat, H_true = _check_pair(H_hat, H_true)
    eta, shift, zero = _eta_matrix(H_hat, H_true, T_D)
    diagonal = np.arange(H_true.shape[2])
    if np.any(zero[diagonal, diagonal]):
        _logger.warning("Zero-norm channel estimate, eta set to 0")
    return eta[diagonal, diagonal], shift[diagonal, diagonal]


def resolve_permutation(
    H_hat: np.ndarray,
    H_true: np.ndarray,
    T_D: int,
    method_label: str = "",
) -> EtaResult:
    """
    Assign estimate columns to users so that Σ_k η_k is maximal.

    Exhaustive search up to EXHAUSTIVE_PERMUTATION_LIMIT users (ties keep the
    first permutation in lexicographic order, the identity first), linear
    assignment above.
    """
    H_hat, H_true = _check_pair(H_hat, H_true)
    K = H_true.shape[2]
    eta, shift, zero = _eta_matrix(H_hat, H_true, T_D)

    if K <= EXHAUSTIVE_PERMUTATION_LIMIT:
        best_total = -np.inf
        permutation: Optional[Tuple[int, ...]] = None
        users = np.arange(K)
        for candidate in itertools.permutations(range(K)):
            total = eta[users, list(candidate)].sum()
            if total > best_total:
                best_total, permutation = total, candidate
        assignment = np.array(permutation)
    else:
        rows, cols = linear_sum_assignment(eta, maximize=True)
        assignment = cols[np.argsort(rows)]

    users = np.arange(K)
    return EtaResult(
        eta_per_user=eta[users, assignment],
        best_delay_shift=shift[users, assignment],
        permutation=assignment,
        method_label=method_label,
        zero_estimate=zero[users, assignment],
    )


def eta_grid(points: int) -> np.ndarray:
    """points thresholds evenly spaced on [0, 1]."""
    if points < 2:
        raise MetricError(f"eta grid needs at least 2 points, got {points}")
    return np.linspace(0.0, 1.0, points)


def ccdf(values: np.ndarray, grid: np.ndarray) -> CcdfTable:
    """
    Empirical Pr(X ≥ t) for every threshold t of the grid.

    Raises:
        MetricError: If the grid or the sample is empty.
    """
    values = np.asarray(values, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise MetricError("empty threshold grid")
    if values.size == 0:
        raise MetricError("no samples")
    prob = np.mean(values[None, :] >= grid[:, None], axis=1)
    return CcdfTable(thresholds=grid, prob=prob, n_samples=int(values.size))
