"""
Blind channel estimation from one-bit observations.

The EM iteration alternates an E-step, which rebuilds the spectral covariance
Φ̂_y[m] of the unquantized signal from the sample autocorrelation of the
sign samples (arcsine law, rescaled by the per-antenna power implied by the
previous estimate), and an M-step, one backtracking soft-thresholding step on
the surrogate objective

    L(S | Φ̂) = −Σ_m tr(Q_m^{−1} Φ̂_y[m]) − Σ_m log|Q_m|.
"""
from __future__ import annotations

import sys
import itertools
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.fft

from models.channel import Dictionary
from models.txrx import RxBlock
from services.blind_ideal import (
    backproject,
    covariance_terms,
    principal_subspace,
    projected_covariance,
)
from services.thresholding import (
    SolverConfig,
    SparseEstimate,
    proximal_ascent,
    stationarity_residual,
)
from tools.logger import AppLogger


_logger = AppLogger("blind_onebit.log")

MAX_ENUMERATION_ANTENNAS = 8

Window = Literal["rectangular", "triangular"]


class OneBitEstimationError(Exception):
    """Raised on invalid inputs to the one-bit estimator and its utilities."""
    pass


@dataclass
class QuantizedCovariance:
    """
    Attributes:
        C_r (np.ndarray): (T, N, N) windowed sample autocorrelation of r̃[n].
        Phi_y (np.ndarray, optional): (T, N, N) reconstructed spectral
            covariance of the unquantized signal.
    """
    C_r: np.ndarray
    Phi_y: Optional[np.ndarray] = None


def _hermitian(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def _onebit_observations(rx: RxBlock, dictionary: Dictionary) -> Tuple[np.ndarray, np.ndarray]:
    if rx.r_time is None or rx.r_freq is None:
        raise OneBitEstimationError("received block carries no one-bit samples")
    if rx.r_time.shape != (dictionary.T, dictionary.N):
        raise OneBitEstimationError(
            f"one-bit samples have shape {rx.r_time.shape}, dictionary expects {(dictionary.T, dictionary.N)}"
        )
    return np.asarray(rx.r_time), np.asarray(rx.r_freq)


def onebit_subspace_init(rx: RxBlock, dictionary: Dictionary, rho: float, K: int) -> np.ndarray:
    """
    Initializer from the top-K eigenpairs of Σ_m F_m^H(r[m]r[m]^H − I)F_m,
    scaled by √(π/(2Tρ)).
    """
    S0, _ = _onebit_subspace_init(rx, dictionary, rho, K)
    return S0


def _onebit_subspace_init(rx: RxBlock, dictionary: Dictionary, rho: float, K: int) -> Tuple[np.ndarray, bool]:
    if not rho > 0:
        raise OneBitEstimationError(f"rho must be positive, got {rho}")
    _, r_freq = _onebit_observations(rx, dictionary)
    M = projected_covariance(r_freq, dictionary.F)
    S0, rank_deficient = principal_subspace(M, K, np.sqrt(np.pi / (2.0 * dictionary.T * rho)))
    if rank_deficient:
        _logger.warning(f"One-bit subspace initializer: fewer than K={K} positive eigenvalues")
    return S0, rank_deficient


def sample_quantized_autocorr(r_time: np.ndarray, T_D: int, window: Window = "rectangular") -> np.ndarray:
    """
    Circular sample autocorrelation Ĉ_r[n] = (1/T)Σ_t r̃[t+n] r̃[t]^H.

    Lags 0…T_D are estimated, lags T − T_D…T − 1 are their conjugate
    transposes and all others are zero. The triangular window tapers the
    retained lags linearly, w_n = 1 − n/(T_D + 1).

    Returns:
        np.ndarray: (T, N, N) complex.

    Raises:
        OneBitEstimationError: If T ≤ 2·T_D or the window is unknown.
    """
    r = np.asarray(r_time, dtype=complex)
    T, N = r.shape
    if T_D < 0 or T <= 2 * T_D:
        raise OneBitEstimationError(f"lag window T_D={T_D} too long for block length T={T}")
    if window not in ("rectangular", "triangular"):
        raise OneBitEstimationError(f"unknown lag window '{window}'")

    C = np.zeros((T, N, N), dtype=complex)
    for n in range(T_D + 1):
        weight = 1.0 if window == "rectangular" else 1.0 - n / (T_D + 1)
        lag = weight * (np.roll(r, -n, axis=0).T @ np.conj(r)) / T
        C[n] = lag
        if n > 0:
            C[T - n] = lag.conj().T
    C[0] = 0.5 * (C[0] + C[0].conj().T)
    return C


def arcsine_forward(C_y: np.ndarray) -> np.ndarray:
    """
    Sign-sample correlation (2/π)(arcsin Re c + j arcsin Im c) of a
    Gaussian correlation normalized to unit diagonal.

    A (T, N, N) sequence is normalized by the diagonal of its lag-0 matrix.

    Raises:
        OneBitEstimationError: If a normalized entry has |Re| or |Im| above 1.
    """
    C_y = np.asarray(C_y, dtype=complex)
    lag0 = C_y if C_y.ndim == 2 else C_y[0]
    power = np.real(np.diagonal(lag0))
    if np.any(power <= 0):
        raise OneBitEstimationError("correlation diagonal must be positive")
    scale = 1.0 / np.sqrt(power)
    normalized = C_y * scale[:, None] * scale[None, :]
    re, im = normalized.real, normalized.imag
    if np.any(np.abs(re) > 1 + 1e-12) or np.any(np.abs(im) > 1 + 1e-12):
        raise OneBitEstimationError("normalized correlation entries exceed 1 in modulus")
    return (2.0 / np.pi) * (np.arcsin(np.clip(re, -1, 1)) + 1j * np.arcsin(np.clip(im, -1, 1)))


def arcsine_inverse(C_r: np.ndarray) -> np.ndarray:
    """sin((π/2)Re c) + j sin((π/2)Im c), entrywise."""
    C_r = np.asarray(C_r, dtype=complex)
    return np.sin(0.5 * np.pi * C_r.real) + 1j * np.sin(0.5 * np.pi * C_r.imag)


def _sin_spectrum(C_r: np.ndarray) -> np.ndarray:
    C_r = np.asarray(C_r, dtype=complex)
    if not np.allclose(C_r[0], C_r[0].conj().T, atol=1e-10):
        raise OneBitEstimationError("lag-0 sign autocorrelation is not Hermitian")
    return scipy.fft.fft(arcsine_inverse(C_r), axis=0)


def _antenna_power(S: np.ndarray, F: np.ndarray, rho: float) -> np.ndarray:
    """(1/T)Σ_m diag(ρF_mSS^HF_m^H + I)."""
    P1 = np.matmul(F, S)
    return 1.0 + rho * np.mean(np.sum(np.abs(P1) ** 2, axis=2), axis=0)


def _rescale(spectrum: np.ndarray, power: np.ndarray) -> np.ndarray:
    root = np.sqrt(power)
    return spectrum * root[None, :, None] * root[None, None, :]


def estep_cov(C_r: np.ndarray, S_prev: np.ndarray, dictionary: Dictionary, rho: float) -> np.ndarray:
    """
    Φ̂_y[m] = D^{1/2} DFT{sin((π/2)Ĉ_r[n])}[m] D^{1/2} with
    D = (1/T)Σ_m diag(ρF_mS_prevS_prev^HF_m^H + I).

    Raises:
        OneBitEstimationError: On a non-Hermitian lag-0 matrix or non-finite S_prev.
    """
    S_prev = np.asarray(S_prev, dtype=complex)
    if not np.all(np.isfinite(S_prev)):
        raise OneBitEstimationError("S_prev contains non-finite values")
    spectrum = _sin_spectrum(C_r)
    return _rescale(spectrum, _antenna_power(S_prev, dictionary.F, rho))


def quantized_covariance(
    rx: RxBlock,
    S_prev: np.ndarray,
    dictionary: Dictionary,
    rho: float,
    window: Window = "rectangular",
) -> QuantizedCovariance:
    """Sign autocorrelation of a block together with its E-step covariance."""
    r_time, _ = _onebit_observations(rx, dictionary)
    C_r = sample_quantized_autocorr(r_time, dictionary.T_D, window)
    return QuantizedCovariance(C_r=C_r, Phi_y=estep_cov(C_r, S_prev, dictionary, rho))


def _surrogate(S: np.ndarray, Phi: np.ndarray, F: np.ndarray, rho: float) -> float:
    P1, Minv, logdet = covariance_terms(S, F, rho)
    W = _hermitian(P1) @ Phi @ P1
    trace_phi = np.real(np.trace(Phi, axis1=1, axis2=2)).sum()
    correction = np.real(np.einsum("tkl,tlk->", Minv, W))
    return float(-(trace_phi - rho * correction) - np.sum(logdet))


def _em_gradient(S: np.ndarray, Phi: np.ndarray, F: np.ndarray, rho: float) -> np.ndarray:
    P1, Minv, _ = covariance_terms(S, F, rho)
    P4 = np.matmul(P1, Minv)                      # Q^{-1} F S
    Z = Phi @ P4
    QZ = Z - rho * P4 @ (_hermitian(P1) @ Z)      # Q^{-1} Φ Q^{-1} F S
    return rho * backproject(F, P4 - QZ)


def surrogate_loglikelihood(S: np.ndarray, Phi_y: np.ndarray, dictionary: Dictionary, rho: float) -> float:
    """−Σ_m tr(Q_m^{−1}Φ̂_y[m]) − Σ_m log|Q_m| for a fixed E-step covariance."""
    return _surrogate(np.asarray(S, dtype=complex), np.asarray(Phi_y), dictionary.F, rho)


def em_gradient(S_prev: np.ndarray, Phi_y: np.ndarray, dictionary: Dictionary, rho: float) -> np.ndarray:
    """
    Δ = ρΣ_m F_m^H(Q_m^{−1}F_mS − Q_m^{−1}Φ̂_y[m]Q_m^{−1}F_mS).

    Raises:
        OneBitEstimationError: On dimension mismatch.
    """
    S_prev = np.asarray(S_prev, dtype=complex)
    Phi_y = np.asarray(Phi_y)
    if Phi_y.shape != (dictionary.T, dictionary.N, dictionary.N):
        raise OneBitEstimationError(f"Phi_y has shape {Phi_y.shape}, expected (T, N, N)")
    if S_prev.ndim != 2 or S_prev.shape[0] != dictionary.n_coeffs:
        raise OneBitEstimationError(f"S has shape {S_prev.shape}, expected ({dictionary.n_coeffs}, K)")
    return _em_gradient(S_prev, Phi_y, dictionary.F, rho)


def estimate_blind_onebit(
    rx: RxBlock,
    dictionary: Dictionary,
    rho: float,
    config: SolverConfig,
    K: Optional[int] = None,
    S0: Optional[np.ndarray] = None,
    window: Window = "rectangular",
) -> SparseEstimate:
    """
    EM estimation of S from one-bit observations.

    The sign autocorrelation and its arcsine-inverted spectrum are computed
    once; every accepted iterate refreshes only the per-antenna power D of
    the E-step. Backtracking within an iteration uses that iteration's Φ̂_y.

    Args:
        rx (RxBlock): Block with r_time and r_freq.
        dictionary (Dictionary): Delay-angle dictionary; its T_D sets the lag window.
        rho (float): Linear SNR.
        config (SolverConfig): Loop settings.
        K (int, optional): Number of users; defaults to rx.K.
        S0 (np.ndarray, optional): Custom starting point.
        window (str): Lag window of the sample autocorrelation.

    Returns:
        SparseEstimate: Ŝ, the surrogate objective trace and KKT residual
        with respect to the final E-step.

    Raises:
        OneBitEstimationError: On invalid inputs or an unexpected failure.
    """
    try:
        r_time, _ = _onebit_observations(rx, dictionary)
        K = K or rx.K
        rank_deficient = False
        if S0 is None:
            S0, rank_deficient = _onebit_subspace_init(rx, dictionary, rho, K)
        S0 = np.asarray(S0, dtype=complex)
        if S0.shape != (dictionary.n_coeffs, K):
            raise OneBitEstimationError(f"S0 has shape {S0.shape}, expected ({dictionary.n_coeffs}, {K})")

        F = dictionary.F
        spectrum = _sin_spectrum(sample_quantized_autocorr(r_time, dictionary.T_D, window))

        estimate = proximal_ascent(
            S0,
            objective=lambda S, Phi: _surrogate(S, Phi, F, rho),
            gradient=lambda S, Phi: _em_gradient(S, Phi, F, rho),
            config=config,
            prepare=lambda S: _rescale(spectrum, _antenna_power(S, F, rho)),
            logger=_logger,
            label="onebit_sparse_blind",
        )
        Phi_final = _rescale(spectrum, _antenna_power(estimate.S_hat, F, rho))
        estimate.kkt_residual = stationarity_residual(
            estimate.S_hat, _em_gradient(estimate.S_hat, Phi_final, F, rho), config.lam
        )
        estimate.rank_deficient = rank_deficient
        return estimate
    except OneBitEstimationError:
        raise
    except Exception as e:
        _, _, exec_tb = sys.exc_info()
        line_number = exec_tb.tb_lineno if exec_tb else "unknown"
        function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
        _logger.error(f"Unexpected error in '{function_name}' at line {line_number}: {e}")
        raise OneBitEstimationError("One-bit blind estimation failed") from e


def onebit_prob_firstorder(
    r: np.ndarray,
    H: np.ndarray,
    rho: float,
    form: Literal["trace", "nondiag"] = "trace",
) -> float:
    """
    First-order low-SNR approximation of P(r | H) for one flat-fading sample.

    'trace':   (1/4^N)(1 + ρ(2/π) tr(H^H(rr^H − I)H))
    'nondiag': (1/4^N)(1 + ρ(2/π) r^H nondiag(HH^H) r)

    Args:
        r (np.ndarray): (N,) sign vector with entries (±1 ± j)/√2.
        H (np.ndarray): (N, K) channel.
        rho (float): Linear SNR.
        form (str): Which of the two equal expressions to evaluate.
    """
    r = np.asarray(r, dtype=complex)
    H = np.asarray(H, dtype=complex)
    N = r.shape[0]
    if form == "trace":
        term = np.trace(H.conj().T @ (np.outer(r, r.conj()) - np.eye(N)) @ H)
    elif form == "nondiag":
        gram = H @ H.conj().T
        term = r.conj() @ (gram - np.diag(np.diag(gram))) @ r
    else:
        raise OneBitEstimationError(f"unknown form '{form}'")
    return float(np.real(1.0 + rho * (2.0 / np.pi) * term) / 4.0 ** N)


def sign_alphabet(N: int) -> np.ndarray:
    """All 4^N vectors in {(±1 ± j)/√2}^N, shape (4^N, N)."""
    if N < 1 or N > MAX_ENUMERATION_ANTENNAS:
        raise OneBitEstimationError(f"enumeration needs 1 <= N <= {MAX_ENUMERATION_ANTENNAS}, got {N}")
    symbols = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    return np.array(list(itertools.product(symbols, repeat=N)))


def sign_enumeration_identity(D: np.ndarray, B: np.ndarray, N: Optional[int] = None) -> Tuple[complex, complex]:
    """
    Both sides of (1/4^N)Σ_r r^HDr·r^HBr = tr(D·nondiag(B)) + tr(D)tr(B).

    Returns:
        (lhs, rhs): complex values for general D, B.

    Raises:
        OneBitEstimationError: If N exceeds the enumeration limit.
    """
    D = np.asarray(D, dtype=complex)
    B = np.asarray(B, dtype=complex)
    N = N or D.shape[0]
    if D.shape != (N, N) or B.shape != (N, N):
        raise OneBitEstimationError(f"D and B must be {N}x{N}")
    R = sign_alphabet(N)
    quad_D = np.einsum("ri,ij,rj->r", R.conj(), D, R)
    quad_B = np.einsum("ri,ij,rj->r", R.conj(), B, R)
    lhs = np.mean(quad_D * quad_B)
    rhs = np.trace(D @ (B - np.diag(np.diag(B)))) + np.trace(D) * np.trace(B)
    return lhs, rhs
