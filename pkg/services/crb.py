"""
Clairvoyant Cramér-Rao bounds for the sparse coefficients and the η_CRB
performance predictor.

Fisher matrices use the user-major layout: entry (k·P + i, k'·P + i') for
coefficient i of user k, with P = N(T_D + 1) coefficients per user.
"""
from __future__ import annotations

from enum import Enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from models.channel import Dictionary
from tools.logger import AppLogger


_logger = AppLogger("crb.log")

WIDEBAND_TRACE_GUARD = 2048
CONDITION_LIMIT = 1e12


class CrbError(Exception):
    """Raised on invalid inputs to the bound computations."""
    pass


class FisherKind(str, Enum):
    IDEAL_EXACT = "ideal_exact"
    IDEAL_LOW_SNR = "ideal_low_snr"
    ONEBIT_LOW_SNR_FLAT = "onebit_low_snr_flat"
    ONEBIT_LOW_SNR_WIDEBAND = "onebit_low_snr_wideband"


@dataclass
class FisherMatrix:
    """
    Attributes:
        J (np.ndarray): Hermitian PSD Fisher information.
        kind (FisherKind): Which model produced it.
        n_coeffs (int): Coefficients per user, P.
        support (np.ndarray, optional): Layout indices kept by reduce_support;
            None for the full matrix.
    """
    J: np.ndarray
    kind: FisherKind
    n_coeffs: int
    support: Optional[np.ndarray] = None

    @property
    def indices(self) -> np.ndarray:
        if self.support is None:
            return np.arange(self.J.shape[0])
        return self.support

    def is_hermitian(self, atol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.J)))) if self.J.size else 1.0
        return bool(np.allclose(self.J, self.J.conj().T, atol=atol * scale))

    def is_psd(self, rtol: float = 1e-8) -> bool:
        if self.J.size == 0:
            return True
        eigenvalues = scipy.linalg.eigvalsh(0.5 * (self.J + self.J.conj().T))
        return bool(eigenvalues.min() >= -rtol * max(np.abs(eigenvalues).max(), 1.0))


@dataclass
class CrbResult:
    """
    Per-user η_CRB with diagnostics.

    singular is set when J̃ cannot be inverted (η_CRB reported as 0);
    reliable is False when the condition number exceeds CONDITION_LIMIT.
    """
    eta: np.ndarray
    singular: bool
    reliable: bool
    condition: float


def _transfer_matrices(H: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim == 2:
        H = np.broadcast_to(H, (dictionary.T,) + H.shape)
    if H.ndim != 3 or H.shape[:2] != (dictionary.T, dictionary.N):
        raise CrbError(f"H has shape {H.shape}, expected (T, N, K) = ({dictionary.T}, {dictionary.N}, K)")
    return H


def _hermitian(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def _kron_sum(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Σ_m A_m^T ⊗ B_m for A of shape (T, K, K) and B of shape (T, P, P)."""
    K = A.shape[1]
    P = B.shape[1]
    return np.einsum("tlk,tij->kilj", A, B).reshape(K * P, K * P)


def fisher_ideal(H: np.ndarray, dictionary: Dictionary, rho: float) -> FisherMatrix:
    """
    J = ρ²Σ_m (H[m]^HQ_m^{−1}H[m])^T ⊗ F_m^HQ_m^{−1}F_m with Q_m = ρH[m]H[m]^H + I.

    Raises:
        CrbError: On dimension mismatch or non-positive rho.
    """
    if not rho > 0:
        raise CrbError(f"rho must be positive, got {rho}")
    H = _transfer_matrices(H, dictionary)
    F = dictionary.F
    Q = rho * np.matmul(H, _hermitian(H)) + np.eye(dictionary.N)
    QinvH = np.linalg.solve(Q, H)
    QinvF = np.linalg.solve(Q, F)
    A = np.matmul(_hermitian(H), QinvH)
    B = np.matmul(_hermitian(F), QinvF)
    J = rho ** 2 * _kron_sum(A, B)
    return FisherMatrix(J=0.5 * (J + J.conj().T), kind=FisherKind.IDEAL_EXACT, n_coeffs=dictionary.n_coeffs)


def fisher_ideal_lowsnr(H: np.ndarray, dictionary: Dictionary, rho: float) -> FisherMatrix:
    """J = ρ²Σ_m (H[m]^HH[m])^T ⊗ F_m^HF_m (Q_m ≈ I)."""
    H = _transfer_matrices(H, dictionary)
    F = dictionary.F
    A = np.matmul(_hermitian(H), H)
    B = np.matmul(_hermitian(F), F)
    return FisherMatrix(J=rho ** 2 * _kron_sum(A, B), kind=FisherKind.IDEAL_LOW_SNR,
                        n_coeffs=dictionary.n_coeffs)


def fisher_ideal_trace(H: np.ndarray, dictionary: Dictionary, rho: float) -> np.ndarray:
    """
    Entry-by-entry Σ_m tr(Q_m^{−1}(ρh_kf_i^H)Q_m^{−1}(ρf_{i'}h_{k'}^H)),
    the derivative form of the Gaussian Fisher information. Small instances only.
    """
    H = _transfer_matrices(H, dictionary)
    T, N, K = H.shape
    P = dictionary.n_coeffs
    J = np.zeros((K * P, K * P), dtype=complex)
    for m in range(T):
        Qinv = np.linalg.inv(rho * H[m] @ H[m].conj().T + np.eye(N))
        F = dictionary.F[m]
        for k, i, k2, i2 in np.ndindex(K, P, K, P):
            dQ_conj = rho * np.outer(H[m][:, k], F[:, i].conj())
            dQ = rho * np.outer(F[:, i2], H[m][:, k2].conj())
            J[k * P + i, k2 * P + i2] += np.trace(Qinv @ dQ_conj @ Qinv @ dQ)
    return J


def reduce_support(fisher: FisherMatrix, S_true: np.ndarray) -> FisherMatrix:
    """
    Rows and columns of J on the support {k·P + i : s_{i,k} ≠ 0}.

    Raises:
        CrbError: If the support is empty or S does not match the layout.
    """
    S_true = np.asarray(S_true)
    if S_true.shape[0] != fisher.n_coeffs or S_true.size != fisher.J.shape[0]:
        raise CrbError(f"S has shape {S_true.shape}, incompatible with J of size {fisher.J.shape[0]}")
    support = np.flatnonzero(S_true.T.ravel() != 0)
    if support.size == 0:
        raise CrbError("empty support")
    return FisherMatrix(J=fisher.J[np.ix_(support, support)], kind=fisher.kind,
                        n_coeffs=fisher.n_coeffs, support=support)


def _flat_matrices(H: np.ndarray, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    H = np.asarray(H, dtype=complex)
    F = np.asarray(F)
    if H.ndim == 3:
        if not np.allclose(H, H[:1]):
            raise CrbError("flat one-bit Fisher needs a frequency-flat channel")
        H = H[0]
    if F.ndim == 3:
        if not np.allclose(F, F[:1]):
            raise CrbError("flat one-bit Fisher needs a frequency-flat dictionary")
        F = F[0]
    if H.shape[0] != F.shape[0]:
        raise CrbError(f"H has {H.shape[0]} rows, F has {F.shape[0]}")
    return H, F


def fisher_onebit_flat(H: np.ndarray, F: np.ndarray, rho: float, T: int) -> FisherMatrix:
    """
    Low-SNR one-bit Fisher information for flat fading:

        J = T(2ρ/π)²[(H^HH)^T ⊗ F^HF − (I ⊗ F^H) Bd (I ⊗ F)],

    where block (k, k') of Bd is diag(h_k ∘ h_{k'}^*). Amplitude information
    lost in the quantizer removes the diagonal terms.

    Raises:
        CrbError: If the channel or dictionary varies over frequency.
    """
    H, F = _flat_matrices(H, F)
    N, K = H.shape
    P = F.shape[1]
    c = T * (2.0 * rho / np.pi) ** 2
    first = np.kron((H.conj().T @ H).T, F.conj().T @ F)
    # block (k, k'): F^H diag(h_k ∘ conj(h_k')) F
    cross = H[:, :, None] * H.conj()[:, None, :]
    second = np.einsum("ni,nkl,nj->kilj", F.conj(), cross, F).reshape(K * P, K * P)
    J = c * (first - second)
    return FisherMatrix(J=0.5 * (J + J.conj().T), kind=FisherKind.ONEBIT_LOW_SNR_FLAT, n_coeffs=P)


def fisher_onebit_flat_trace(H: np.ndarray, F: np.ndarray, rho: float, T: int) -> np.ndarray:
    """Entry-by-entry T(2ρ/π)² tr(h_kf_i^H nondiag(f_{i'}h_{k'}^H))."""
    H, F = _flat_matrices(H, F)
    N, K = H.shape
    P = F.shape[1]
    c = T * (2.0 * rho / np.pi) ** 2
    J = np.zeros((K * P, K * P), dtype=complex)
    for k, i, k2, i2 in np.ndindex(K, P, K, P):
        X = np.outer(F[:, i2], H[:, k2].conj())
        J[k * P + i, k2 * P + i2] = c * np.trace(np.outer(H[:, k], F[:, i].conj()) @ (X - np.diag(np.diag(X))))
    return J


def fisher_onebit_wideband(H: np.ndarray, dictionary: Dictionary, rho: float) -> FisherMatrix:
    """
    Low-SNR one-bit Fisher information for frequency-selective channels:

        J = (2ρ/π)²[Σ_m (H[m]^HH[m])^T ⊗ F_m^HF_m − (1/T)Σ_n g_n g_n^H],

    with g_n[k·P + i] = Σ_m h_k[m]_n (F_m)_{n,i}^*. Equal to the time-domain
    trace form of fisher_onebit_wideband_trace without materializing NT×NT
    matrices.
    """
    H = _transfer_matrices(H, dictionary)
    F = dictionary.F
    T, N, K = H.shape
    P = dictionary.n_coeffs
    c = (2.0 * rho / np.pi) ** 2
    first = _kron_sum(np.matmul(_hermitian(H), H), np.matmul(_hermitian(F), F))
    G = np.einsum("tnk,tni->nki", H, F.conj()).reshape(N, K * P)
    second = (G.T @ G.conj()) / T
    J = c * (first - second)
    return FisherMatrix(J=0.5 * (J + J.conj().T), kind=FisherKind.ONEBIT_LOW_SNR_WIDEBAND, n_coeffs=P)


def fisher_onebit_wideband_trace(
    H: np.ndarray,
    dictionary: Dictionary,
    rho: float,
    guard: int = WIDEBAND_TRACE_GUARD,
) -> np.ndarray:
    """
    Entry-by-entry (2ρ/π)² tr(Ū^HH̄_kĒ_i^HŪ nondiag(Ū^HĒ_{i'}H̄_{k'}^HŪ)) with
    Ū = U_T ⊗ I_N and block-diagonal H̄_k, Ē_i built from h_k[m] and the
    dictionary columns f_{m,i}.

    Raises:
        CrbError: If NT exceeds the guard.
    """
    H = _transfer_matrices(H, dictionary)
    T, N, K = H.shape
    P = dictionary.n_coeffs
    if N * T > guard:
        raise CrbError(f"NT={N * T} exceeds the materialization guard {guard}")
    U_T = np.fft.fft(np.eye(T)) / np.sqrt(T)
    U = np.kron(U_T, np.eye(N))
    c = (2.0 * rho / np.pi) ** 2

    def block_diag(columns: np.ndarray) -> np.ndarray:
        return scipy.linalg.block_diag(*[columns[m][:, None] for m in range(T)])

    H_bar = [block_diag(H[:, :, k]) for k in range(K)]
    E_bar = [block_diag(dictionary.F[:, :, i]) for i in range(P)]
    J = np.zeros((K * P, K * P), dtype=complex)
    for k, i in np.ndindex(K, P):
        X = U.conj().T @ H_bar[k] @ E_bar[i].conj().T @ U
        for k2, i2 in np.ndindex(K, P):
            Y = U.conj().T @ E_bar[i2] @ H_bar[k2].conj().T @ U
            J[k * P + i, k2 * P + i2] = c * np.trace(X @ (Y - np.diag(np.diag(Y))))
    return J


def eta_crb(fisher: FisherMatrix, H: np.ndarray, dictionary: Dictionary) -> CrbResult:
    """
    η_CRB,k = 1/√(1 + Σ_m tr(F_mΠ_kJ̃^{−1}Π_k^HF_m^H) / Σ_m‖h_k[m]‖²).

    Args:
        fisher (FisherMatrix): Support-reduced (or full) Fisher matrix.
        H (np.ndarray): (T, N, K) channel the matrix was evaluated at.
        dictionary (Dictionary): Dictionary of the coefficient layout.

    Returns:
        CrbResult: η_CRB per user; zeros with singular=True when J̃ is not
        invertible.
    """
    H = _transfer_matrices(H, dictionary)
    K = H.shape[2]
    P = dictionary.n_coeffs
    J = fisher.J
    indices = fisher.indices

    condition = float(np.linalg.cond(J)) if J.size else float("inf")
    try:
        J_inv = scipy.linalg.solve(J, np.eye(J.shape[0]), assume_a="her")
    except (np.linalg.LinAlgError, ValueError) as e:
        _logger.warning(f"Singular Fisher matrix ({fisher.kind.value}): {e}")
        return CrbResult(eta=np.zeros(K), singular=True, reliable=False, condition=condition)
    if not np.all(np.isfinite(J_inv)):
        _logger.warning(f"Singular Fisher matrix ({fisher.kind.value})")
        return CrbResult(eta=np.zeros(K), singular=True, reliable=False, condition=condition)

    reliable = condition <= CONDITION_LIMIT
    if not reliable:
        _logger.warning(f"Ill-conditioned Fisher matrix ({fisher.kind.value}), cond={condition:.3e}")

    signal = np.sum(np.abs(H) ** 2, axis=(0, 1))
    eta = np.zeros(K)
    for k in range(K):
        sel = np.flatnonzero(indices // P == k)
        if sel.size == 0 or signal[k] == 0:
            eta[k] = 1.0 if signal[k] > 0 else 0.0
            continue
        cols = indices[sel] % P
        Fk = dictionary.F[:, :, cols]
        error = np.real(np.einsum("tni,ij,tnj->", Fk, J_inv[np.ix_(sel, sel)], Fk.conj()))
        eta[k] = 1.0 / np.sqrt(1.0 + max(error, 0.0) / signal[k])
    return CrbResult(eta=eta, singular=False, reliable=reliable, condition=condition)
