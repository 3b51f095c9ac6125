"""
Blind ℓ1-regularized maximum-likelihood channel estimation from unquantized
observations y[m] = F_m S x[m] + z[m].

With Q_m = ρF_mSS^HF_m^H + I the log-likelihood is

    L(S) = −Σ_m y[m]^H Q_m^{−1} y[m] − Σ_m log|Q_m|,

evaluated through K×K quantities: P1 = F_mS, M = ρP1^HP1 + I,
Q_m^{−1}F_mS = P1 M^{−1} and log|Q_m| = log|M|.
"""
from __future__ import annotations

import sys
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from models.channel import Dictionary
from models.txrx import RxBlock
from services.thresholding import (
    SolverConfig,
    SparseEstimate,
    proximal_ascent,
    stationarity_residual,
)
from tools.logger import AppLogger


_logger = AppLogger("blind_ideal.log")


class BlindEstimationError(Exception):
    """Raised on invalid inputs to the unquantized blind estimator."""
    pass


def _hermitian(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def _observations(rx: RxBlock, dictionary: Dictionary) -> np.ndarray:
    if rx.y_freq is None:
        raise BlindEstimationError("received block carries no unquantized observations")
    y = np.asarray(rx.y_freq)
    if y.shape != (dictionary.T, dictionary.N):
        raise BlindEstimationError(
            f"observations have shape {y.shape}, dictionary expects {(dictionary.T, dictionary.N)}"
        )
    if not np.all(np.isfinite(y)):
        raise BlindEstimationError("observations contain non-finite values")
    return y


def _check_coefficients(S: np.ndarray, dictionary: Dictionary, rho: float) -> np.ndarray:
    S = np.asarray(S, dtype=complex)
    if S.ndim != 2 or S.shape[0] != dictionary.n_coeffs:
        raise BlindEstimationError(f"S has shape {S.shape}, expected ({dictionary.n_coeffs}, K)")
    if not np.all(np.isfinite(S)):
        raise BlindEstimationError("S contains non-finite values")
    if not rho > 0:
        raise BlindEstimationError(f"rho must be positive, got {rho}")
    return S


def covariance_terms(S: np.ndarray, F: np.ndarray, rho: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-bin K×K quantities shared by likelihoods and gradients.

    Returns:
        (P1, Minv, logdet): F_mS of shape (T, N, K), (ρP1^HP1 + I)^{−1} of
        shape (T, K, K) and log|Q_m| of shape (T,).
    """
    P1 = np.matmul(F, S)
    K = S.shape[1]
    M = rho * np.matmul(_hermitian(P1), P1) + np.eye(K)
    _, logdet = np.linalg.slogdet(M)
    return P1, np.linalg.inv(M), logdet


def backproject(F: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Σ_m F_m^H X[m] for X of shape (T, N, K)."""
    return np.conj(np.einsum("tnp,tnk->pk", F, np.conj(X)))


def _loglikelihood(S: np.ndarray, y: np.ndarray, F: np.ndarray, rho: float) -> float:
    P1, Minv, logdet = covariance_terms(S, F, rho)
    b = np.einsum("tnk,tn->tk", np.conj(P1), y)
    quad = np.einsum("tk,tkl,tl->", np.conj(b), Minv, b).real
    return float(-np.sum(np.abs(y) ** 2) + rho * quad - np.sum(logdet))


def _gradient(S: np.ndarray, y: np.ndarray, F: np.ndarray, rho: float) -> np.ndarray:
    P1, Minv, _ = covariance_terms(S, F, rho)
    P4 = np.matmul(P1, Minv)                                  # Q^{-1} F S
    b = np.einsum("tnk,tn->tk", np.conj(P1), y)
    w = y - rho * np.einsum("tnk,tk->tn", P4, b)              # Q^{-1} y
    c = np.einsum("tnk,tn->tk", np.conj(P4), y)               # (y^H Q^{-1} F S)^H
    inner = P4 - w[:, :, None] * np.conj(c)[:, None, :]
    return rho * backproject(F, inner)


def loglikelihood(S: np.ndarray, rx: RxBlock, dictionary: Dictionary, rho: float) -> float:
    """
    Log-likelihood L(S) of the unquantized observations (K×K evaluation).

    Raises:
        BlindEstimationError: On dimension mismatch or non-finite input.
    """
    y = _observations(rx, dictionary)
    S = _check_coefficients(S, dictionary, rho)
    return _loglikelihood(S, y, dictionary.F, rho)


def loglikelihood_full(S: np.ndarray, rx: RxBlock, dictionary: Dictionary, rho: float) -> float:
    """Same likelihood evaluated with N×N covariances (reference form)."""
    y = _observations(rx, dictionary)
    S = _check_coefficients(S, dictionary, rho)
    H = np.matmul(dictionary.F, S)
    Q = rho * np.matmul(H, _hermitian(H)) + np.eye(dictionary.N)
    _, logdet = np.linalg.slogdet(Q)
    solved = np.linalg.solve(Q, y[..., None])[..., 0]
    quad = np.einsum("tn,tn->", np.conj(y), solved).real
    return float(-quad - np.sum(logdet))


def loglikelihood_lowsnr(S: np.ndarray, rx: RxBlock, dictionary: Dictionary, rho: float) -> float:
    """
    First-order low-SNR likelihood −Σ‖y‖² + ρΣ tr(S^HF_m^H(yy^H − I)F_mS),
    the objective maximized by subspace_init.
    """
    y = _observations(rx, dictionary)
    S = _check_coefficients(S, dictionary, rho)
    P1 = np.matmul(dictionary.F, S)
    b = np.einsum("tnk,tn->tk", np.conj(P1), y)
    return float(-np.sum(np.abs(y) ** 2) + rho * (np.sum(np.abs(b) ** 2) - np.sum(np.abs(P1) ** 2)))


def gradient(S: np.ndarray, rx: RxBlock, dictionary: Dictionary, rho: float) -> np.ndarray:
    """
    Δ = −∂L/∂S* = ρΣ_m F_m^H (Q_m^{−1}F_mS − Q_m^{−1}y y^HQ_m^{−1}F_mS).

    Raises:
        BlindEstimationError: On dimension mismatch or non-finite input.
    """
    y = _observations(rx, dictionary)
    S = _check_coefficients(S, dictionary, rho)
    return _gradient(S, y, dictionary.F, rho)


def projected_covariance(samples: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Σ_m F_m^H(v[m]v[m]^H − I)F_m for rows v[m] of samples."""
    z = np.einsum("tnp,tn->tp", np.conj(F), samples)
    gram = np.einsum("tnp,tnq->pq", np.conj(F), F)
    M = z.T @ np.conj(z) - gram
    return 0.5 * (M + M.conj().T)


def principal_subspace(M: np.ndarray, K: int, scale: float) -> Tuple[np.ndarray, bool]:
    """
    scale·V_K·√([σ_K]₊) from the K largest eigenpairs of a Hermitian matrix.

    Returns:
        (S0, rank_deficient): rank_deficient is True when fewer than K of the
        retained eigenvalues are positive.
    """
    if K < 1 or K > M.shape[0]:
        raise BlindEstimationError(f"K={K} must lie in [1, {M.shape[0]}]")
    eigenvalues, eigenvectors = scipy.linalg.eigh(M)
    order = np.argsort(-eigenvalues, kind="stable")[:K]
    sigma = np.maximum(eigenvalues[order], 0.0)
    S0 = scale * eigenvectors[:, order] * np.sqrt(sigma)[None, :]
    return S0, bool(np.count_nonzero(sigma > 0) < K)


def subspace_init(rx: RxBlock, dictionary: Dictionary, rho: float, K: int) -> np.ndarray:
    """
    Closed-form initializer S0 = V_K √([Σ_K]₊)/√(Tρ) from the top-K eigenpairs
    of M = Σ_m F_m^H(y[m]y[m]^H − I)F_m.
    """
    S0, _ = _subspace_init(rx, dictionary, rho, K)
    return S0


def _subspace_init(rx: RxBlock, dictionary: Dictionary, rho: float, K: int) -> Tuple[np.ndarray, bool]:
    if not rho > 0:
        raise BlindEstimationError(f"rho must be positive, got {rho}")
    y = _observations(rx, dictionary)
    M = projected_covariance(y, dictionary.F)
    S0, rank_deficient = principal_subspace(M, K, 1.0 / np.sqrt(dictionary.T * rho))
    if rank_deficient:
        _logger.warning(f"Subspace initializer: fewer than K={K} positive eigenvalues")
    return S0, rank_deficient


def kkt_residual(S: np.ndarray, rx: RxBlock, dictionary: Dictionary, rho: float, lam: float) -> float:
    """Optimality-condition violation of L(S) − λ‖S‖₁,₁ at S."""
    return stationarity_residual(S, gradient(S, rx, dictionary, rho), lam)


def active_users(S_hat: np.ndarray, rel_threshold: float = 1e-3) -> np.ndarray:
    """
    Users whose coefficient column holds at least rel_threshold of the total
    estimated energy. All users are inactive for an all-zero estimate.
    """
    energy = np.sum(np.abs(np.asarray(S_hat)) ** 2, axis=0)
    total = energy.sum()
    if total == 0:
        return np.zeros(energy.shape, dtype=bool)
    return energy / total >= rel_threshold


def complexity_per_iteration(N: int, K: int, T: int, T_D: int) -> int:
    """
    Complex multiplications of one gradient evaluation with the K×K inverse:
    F_mS, the K×K Gram, its inverse, Q^{−1}F_mS, the y-dependent rank-one
    terms and the back-projection F_m^H(·), summed over T bins.
    """
    P = N * (T_D + 1)
    per_bin = 2 * N * P * K + 2 * N * K * K + K ** 3 + 3 * N * K
    return int(T * per_bin)


def estimate_blind(
    rx: RxBlock,
    dictionary: Dictionary,
    rho: float,
    config: SolverConfig,
    K: Optional[int] = None,
    S0: Optional[np.ndarray] = None,
) -> SparseEstimate:
    """
    Maximize L(S) − λ‖S‖₁,₁ by backtracking iterative soft thresholding,
    started from the subspace initializer.

    Args:
        rx (RxBlock): Unquantized block.
        dictionary (Dictionary): Delay-angle dictionary.
        rho (float): Linear SNR.
        config (SolverConfig): Loop settings.
        K (int, optional): Number of users; defaults to rx.K.
        S0 (np.ndarray, optional): Custom starting point.

    Returns:
        SparseEstimate: Ŝ with the objective trace and KKT residual.

    Raises:
        BlindEstimationError: On invalid inputs or an unexpected failure.
    """
    try:
        y = _observations(rx, dictionary)
        K = K or rx.K
        rank_deficient = False
        if S0 is None:
            S0, rank_deficient = _subspace_init(rx, dictionary, rho, K)
        S0 = _check_coefficients(S0, dictionary, rho)
        F = dictionary.F

        _logger.debug(
            f"Sparse blind estimation: N={dictionary.N}, K={K}, T={dictionary.T}, "
            f"T_D={dictionary.T_D}, lam={config.lam}, "
            f"~{complexity_per_iteration(dictionary.N, K, dictionary.T, dictionary.T_D)} mults/iteration"
        )
        estimate = proximal_ascent(
            S0,
            objective=lambda S, _: _loglikelihood(S, y, F, rho),
            gradient=lambda S, _: _gradient(S, y, F, rho),
            config=config,
            logger=_logger,
            label="sparse_blind",
        )
        estimate.kkt_residual = stationarity_residual(
            estimate.S_hat, _gradient(estimate.S_hat, y, F, rho), config.lam
        )
        estimate.rank_deficient = rank_deficient
        return estimate
    except BlindEstimationError:
        raise
    except Exception as e:
        _, _, exec_tb = sys.exc_info()
        line_number = exec_tb.tb_lineno if exec_tb else "unknown"
        function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
        _logger.error(f"Unexpected error in '{function_name}' at line {line_number}: {e}")
        raise BlindEstimationError("Sparse blind estimation failed") from e
