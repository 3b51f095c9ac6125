"""
Uplink block transmission: symbols, noise, unitary DFT and the one-bit ADC.

One transform convention is used everywhere: the unitary DFT along the
time/frequency axis (axis 0), 1/√T in both directions. Blocks are stored
as (T, N) arrays, row m being y[m].
"""
from __future__ import annotations

from enum import Enum
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.fft

from tools.logger import AppLogger


_logger = AppLogger("txrx.log")


class TxRxError(Exception):
    """Raised on dimension mismatches or missing block fields."""
    pass


class SymbolDistribution(str, Enum):
    GAUSSIAN = "gaussian"
    QPSK = "qpsk"


@dataclass
class SymbolBlock:
    """Frequency-domain transmit symbols x[m], stored as (T, K)."""
    x_freq: np.ndarray
    distribution: SymbolDistribution
    rho: float


@dataclass
class RxBlock:
    """
    One coherence block at the receiver.

    Attributes:
        y_freq (np.ndarray): (T, N) unquantized DFT-domain observations.
        rho (float): Linear SNR (per-user symbol variance, unit noise).
        dims (Tuple[int, int, int, int]): (N, K, T, T_D).
        r_time (np.ndarray, optional): (T, N) one-bit samples r̃[n].
        r_freq (np.ndarray, optional): (T, N) unitary DFT of r_time.
    """
    y_freq: Optional[np.ndarray]
    rho: float
    dims: Tuple[int, int, int, int]
    r_time: Optional[np.ndarray] = None
    r_freq: Optional[np.ndarray] = None

    @property
    def is_onebit(self) -> bool:
        return self.r_time is not None

    @property
    def N(self) -> int:
        return self.dims[0]

    @property
    def K(self) -> int:
        return self.dims[1]

    @property
    def T(self) -> int:
        return self.dims[2]

    @property
    def T_D(self) -> int:
        return self.dims[3]


def dft_block(vectors: np.ndarray) -> np.ndarray:
    """Unitary DFT over axis 0 (time → frequency)."""
    return scipy.fft.fft(np.asarray(vectors, dtype=complex), axis=0, norm="ortho")


def idft_block(vectors: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT over axis 0 (frequency → time)."""
    return scipy.fft.ifft(np.asarray(vectors, dtype=complex), axis=0, norm="ortho")


def _complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_symbols(
    K: int,
    T: int,
    rho: float,
    distribution: SymbolDistribution | str,
    rng: np.random.Generator,
) -> SymbolBlock:
    """
    Draw a block of i.i.d. user symbols of variance ρ.

    Gaussian symbols are drawn CN(0, ρ) directly in the frequency domain.
    QPSK symbols √ρ(±1 ± j)/√2 are drawn in the time domain and transformed.

    Raises:
        TxRxError: If rho is not positive.
    """
    if not rho > 0:
        raise TxRxError(f"rho must be positive, got {rho}")
    distribution = SymbolDistribution(distribution)
    if distribution is SymbolDistribution.GAUSSIAN:
        x_freq = _complex_normal(rng, (T, K), rho)
    else:
        bits = rng.integers(0, 2, size=(T, K, 2))
        x_time = np.sqrt(rho / 2.0) * ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1]))
        x_freq = dft_block(x_time)
    return SymbolBlock(x_freq=x_freq, distribution=distribution, rho=float(rho))


def simulate_rx(
    channel: np.ndarray,
    symbols: SymbolBlock,
    rng: np.random.Generator,
    T_D: int = 0,
    noise: bool = True,
) -> RxBlock:
    """
    y[m] = H[m] x[m] + z[m] with z[m] i.i.d. CN(0, I).

    Args:
        channel (np.ndarray): (T, N, K) transfer matrices H[m].
        symbols (SymbolBlock): Transmit block, x_freq of shape (T, K).
        rng (np.random.Generator): Noise stream.
        T_D (int): Delay spread recorded in the block dims.
        noise (bool): Disable to obtain the noise-free signal (tests).

    Raises:
        TxRxError: On dimension mismatch.
    """
    H = np.asarray(channel)
    x = np.asarray(symbols.x_freq)
    if H.ndim != 3 or x.ndim != 2 or H.shape[0] != x.shape[0] or H.shape[2] != x.shape[1]:
        raise TxRxError(f"channel shape {H.shape} does not match symbol shape {x.shape}")
    T, N, K = H.shape
    y = np.einsum("tnk,tk->tn", H, x)
    if noise:
        y = y + _complex_normal(rng, (T, N))
    return RxBlock(y_freq=y, rho=symbols.rho, dims=(N, K, T, T_D))


def onebit_sign(samples: np.ndarray) -> np.ndarray:
    """(sign(Re) + j sign(Im))/√2 entrywise, with sign(0) := +1."""
    re = np.where(np.real(samples) >= 0, 1.0, -1.0)
    im = np.where(np.imag(samples) >= 0, 1.0, -1.0)
    return (re + 1j * im) / np.sqrt(2.0)


def quantize_onebit(rx: RxBlock) -> RxBlock:
    """
    One-bit ADC applied to the time-domain samples of a block.

    ỹ[n] is the unitary inverse DFT of y[m]; r̃[n] is its entrywise
    quantization and r[m] the unitary DFT of r̃[n].

    Returns:
        RxBlock: Copy of rx with r_time and r_freq populated.

    Raises:
        TxRxError: If y_freq is missing.
    """
    if rx.y_freq is None:
        raise TxRxError("cannot quantize a block without y_freq")
    r_time = onebit_sign(idft_block(rx.y_freq))
    return replace(rx, r_time=r_time, r_freq=dft_block(r_time))


def onebit_block(r_time: np.ndarray, rho: float, dims: Tuple[int, int, int, int]) -> RxBlock:
    """Block built from stored one-bit samples only (no unquantized data)."""
    r_time = np.asarray(r_time, dtype=complex)
    if not np.allclose(np.abs(r_time.real), 1 / np.sqrt(2)) or not np.allclose(np.abs(r_time.imag), 1 / np.sqrt(2)):
        _logger.warning("One-bit samples are not on the {±1±j}/√2 alphabet")
    return RxBlock(y_freq=None, rho=rho, dims=dims, r_time=r_time, r_freq=dft_block(r_time))
