"""
Reference estimators that use pilots: ℓ1-regularized least squares on the
pilot observations only, and semi-blind maximum likelihood combining the
pilots with the unlabelled data observations. Both assume a frequency-flat
channel H = F S.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from models.channel import Dictionary
from services.blind_ideal import principal_subspace
from services.thresholding import SolverConfig, SparseEstimate, proximal_ascent
from tools.logger import AppLogger


_logger = AppLogger("baselines.log")


class BaselineError(Exception):
    """Raised on invalid pilot configurations or observation shapes."""
    pass


@dataclass
class SemiblindEstimate:
    """
    Attributes:
        H_hat (np.ndarray): (N, K) unstructured channel estimate.
        objective_trace (List[float]): Objective after every accepted step.
        iterations (int): Accepted iterations.
        converged (bool): Relative-gain test fired.
        stop_reason (str): Why the loop ended.
        H_init (np.ndarray, optional): Pilot-aligned subspace starting point.
    """
    H_hat: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    H_init: Optional[np.ndarray] = None


def pilot_symbols(K: int, T_T: int, rho: float) -> np.ndarray:
    """
    Orthogonal pilots √(ρT_T)·(first K rows of the unitary T_T-point DFT):
    unit-modulus sequences of per-symbol power ρ with X X^H = ρT_T·I.

    Returns:
        np.ndarray: (K, T_T) complex.

    Raises:
        BaselineError: If T_T < K.
    """
    if T_T < K:
        raise BaselineError(f"pilot length T_T={T_T} must be at least K={K}")
    t = np.arange(T_T)
    rows = np.exp(-2j * np.pi * np.outer(np.arange(K), t) / T_T)
    return np.sqrt(rho) * rows


def _flat_dictionary(dictionary: Dictionary) -> np.ndarray:
    if not dictionary.is_flat:
        raise BaselineError("pilot baselines are defined for frequency-flat dictionaries only")
    return np.asarray(dictionary.F[0])


def pilot_ls_estimate(
    Y_T: np.ndarray,
    X_T: np.ndarray,
    dictionary: Dictionary,
    lam: float,
    config: Optional[SolverConfig] = None,
) -> SparseEstimate:
    """
    Minimize ‖F S X_T − Y_T‖² + λ‖S‖₁,₁ by thresholding from the
    least-squares solution.

    Args:
        Y_T (np.ndarray): (N, T_T) pilot observations.
        X_T (np.ndarray): (K, T_T) pilot symbols.
        dictionary (Dictionary): Flat dictionary.
        lam (float): ℓ1 weight; overrides config.lam.
        config (SolverConfig, optional): Loop settings.

    Returns:
        SparseEstimate: objective_trace holds −‖FSX − Y‖² − λ‖S‖₁,₁, so it is
        non-decreasing; rank_deficient flags pilots with rank below K.
    """
    F = _flat_dictionary(dictionary)
    Y_T = np.asarray(Y_T, dtype=complex)
    X_T = np.asarray(X_T, dtype=complex)
    if Y_T.shape[0] != F.shape[0] or Y_T.shape[1] != X_T.shape[1]:
        raise BaselineError(f"pilot observations {Y_T.shape} do not match pilots {X_T.shape}")
    K = X_T.shape[0]
    base = config or SolverConfig()
    config = SolverConfig(lam=lam, mu0=base.mu0, beta=base.beta, max_iters=base.max_iters,
                          tol_rel_obj=base.tol_rel_obj, min_step=base.min_step)

    rank_deficient = np.linalg.matrix_rank(X_T) < K
    if rank_deficient:
        _logger.warning(f"Pilot matrix has rank below K={K}")

    H_ls = scipy.linalg.lstsq(X_T.T, Y_T.T)[0].T
    S0 = scipy.linalg.lstsq(F, H_ls)[0]

    def objective(S: np.ndarray, _) -> float:
        return -float(np.sum(np.abs(F @ S @ X_T - Y_T) ** 2))

    def gradient(S: np.ndarray, _) -> np.ndarray:
        return F.conj().T @ (F @ S @ X_T - Y_T) @ X_T.conj().T

    estimate = proximal_ascent(S0, objective, gradient, config, logger=_logger, label="pilot_ls")
    estimate.rank_deficient = bool(rank_deficient)
    return estimate


def semiblind_objective(H: np.ndarray, Y_T: np.ndarray, Y_D: np.ndarray, X_T: np.ndarray, rho: float) -> float:
    """
    −tr(Y_D^HQ^{−1}Y_D) − n_D log|Q| − ‖HX_T − Y_T‖² with Q = ρHH^H + I.

    Y_D holds the n_D data observations as columns (N, n_D).
    """
    H = np.asarray(H, dtype=complex)
    Y_D = np.asarray(Y_D, dtype=complex)
    return _semiblind_objective(H, Y_T, Y_D @ Y_D.conj().T, Y_D.shape[1], X_T, rho)


def _semiblind_objective(H, Y_T, R_D, n_D, X_T, rho) -> float:
    N = H.shape[0]
    Q = rho * H @ H.conj().T + np.eye(N)
    _, logdet = np.linalg.slogdet(Q)
    data = np.real(np.trace(np.linalg.solve(Q, R_D)))
    pilot = np.sum(np.abs(H @ X_T - Y_T) ** 2)
    return float(-data - n_D * logdet - pilot)


def _semiblind_gradient(H, Y_T, R_D, n_D, X_T, rho) -> np.ndarray:
    N = H.shape[0]
    Q = rho * H @ H.conj().T + np.eye(N)
    QinvH = np.linalg.solve(Q, H)
    ascent = (rho * np.linalg.solve(Q, R_D @ QinvH)
              - n_D * rho * QinvH
              - (H @ X_T - Y_T) @ X_T.conj().T)
    return -ascent


def semiblind_gradient(H: np.ndarray, Y_T: np.ndarray, Y_D: np.ndarray, X_T: np.ndarray, rho: float) -> np.ndarray:
    """Δ = −∂/∂H* of semiblind_objective."""
    Y_D = np.asarray(Y_D, dtype=complex)
    return _semiblind_gradient(np.asarray(H, dtype=complex), np.asarray(Y_T, dtype=complex),
                               Y_D @ Y_D.conj().T, Y_D.shape[1], np.asarray(X_T, dtype=complex), rho)


def semiblind_estimate(
    Y_T: np.ndarray,
    Y_D: np.ndarray,
    X_T: np.ndarray,
    rho: float,
    config: Optional[SolverConfig] = None,
) -> SemiblindEstimate:
    """
    Local maximization of semiblind_objective over unstructured H.

    The starting point is the data subspace estimate V_K√([σ]₊)/√(n_Dρ) of
    Σ(y y^H − I), rotated by the K×K matrix that best fits it to the pilots.

    Args:
        Y_T (np.ndarray): (N, T_T) pilot observations.
        Y_D (np.ndarray): (N, n_D) data observations.
        X_T (np.ndarray): (K, T_T) pilot symbols.
        rho (float): Linear SNR.
        config (SolverConfig, optional): Loop settings; lam is ignored.

    Raises:
        BaselineError: On shape mismatch or an unexpected failure.
    """
    Y_T = np.asarray(Y_T, dtype=complex)
    Y_D = np.asarray(Y_D, dtype=complex)
    X_T = np.asarray(X_T, dtype=complex)
    if Y_T.shape[1] != X_T.shape[1] or Y_T.shape[0] != Y_D.shape[0]:
        raise BaselineError(f"shapes Y_T {Y_T.shape}, Y_D {Y_D.shape}, X_T {X_T.shape} are inconsistent")
    if not rho > 0:
        raise BaselineError(f"rho must be positive, got {rho}")
    base = config or SolverConfig()
    config = SolverConfig(lam=0.0, mu0=base.mu0, beta=base.beta, max_iters=base.max_iters,
                          tol_rel_obj=base.tol_rel_obj, min_step=base.min_step)
    try:
        K = X_T.shape[0]
        N, n_D = Y_D.shape
        R_D = Y_D @ Y_D.conj().T

        H0, _ = principal_subspace(R_D - n_D * np.eye(N), K, 1.0 / np.sqrt(max(n_D, 1) * rho))
        if X_T.shape[1] > 0:
            # vec(H0 R X) = (X^T ⊗ H0) vec(R)
            design = np.kron(X_T.T, H0)
            R = scipy.linalg.lstsq(design, Y_T.reshape(-1, order="F"))[0].reshape(K, K, order="F")
            H0 = H0 @ R

        result = proximal_ascent(
            H0,
            objective=lambda H, _: _semiblind_objective(H, Y_T, R_D, n_D, X_T, rho),
            gradient=lambda H, _: _semiblind_gradient(H, Y_T, R_D, n_D, X_T, rho),
            config=config,
            logger=_logger,
            label="semiblind",
        )
        return SemiblindEstimate(
            H_hat=result.S_hat,
            objective_trace=result.objective_trace,
            iterations=result.iterations,
            converged=result.converged,
            stop_reason=result.stop_reason,
            H_init=H0,
        )
    except Exception as e:
        _, _, exec_tb = sys.exc_info()
        line_number = exec_tb.tb_lineno if exec_tb else "unknown"
        function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
        _logger.error(f"Unexpected error in '{function_name}' at line {line_number}: {e}")
        raise BaselineError("Semi-blind estimation failed") from e
