"""
Sparse multipath channels and the frequency-dependent delay-angle dictionary.

Conventions used throughout the package:
    * angular frequencies ω in rad/s, carrier f_c and bandwidth B in Hz;
    * the steering phase of element (n1, n2) is
      2π d (n1 u1 + n2 u2)(1 + ω / (2π f_c)) with direction cosines
      u1 = sinθ sinφ, u2 = sinθ cosφ (ULA: u1 = sinθ, no n2 term);
    * dictionary column index d·N + n (tap-major, angle-minor), so that
      F_m = [1, e^{−jω_m/B}, …, e^{−jT_D ω_m/B}] ⊗ A(ω_m).
"""
from __future__ import annotations

from enum import Enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from tools.logger import AppLogger
from tools.utils import centered_fraction


_logger = AppLogger("channel.log")

FLATNESS_THRESHOLD = 0.1


class ChannelError(Exception):
    """Raised on invalid geometry, dictionary or channel dimensions."""
    pass


class ArrayKind(str, Enum):
    ULA = "ula"
    UPA = "upa"


@dataclass(frozen=True)
class ArrayGeometry:
    """
    Receive array description.

    Attributes:
        kind (ArrayKind): ULA or UPA.
        n1 (int): Elements along dimension 1.
        n2 (int): Elements along dimension 2 (1 for a ULA).
        spacing_d (float): Element spacing in carrier wavelengths.
        carrier_fc (float): Carrier frequency in Hz.
        bandwidth_B (float): Signal bandwidth in Hz.
    """
    kind: ArrayKind = ArrayKind.ULA
    n1: int = 32
    n2: int = 1
    spacing_d: float = 0.5
    carrier_fc: float = 60.5e9
    bandwidth_B: float = 7e9

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ArrayKind(self.kind))
        if self.n1 < 1 or self.n2 < 1:
            raise ChannelError(f"antenna counts must be >= 1, got n1={self.n1}, n2={self.n2}")
        if self.kind is ArrayKind.ULA and self.n2 != 1:
            raise ChannelError(f"a ULA has n2 = 1, got n2={self.n2}")
        if not self.spacing_d > 0:
            raise ChannelError(f"spacing_d must be positive, got {self.spacing_d}")
        if not (self.carrier_fc > 0 and self.bandwidth_B > 0):
            raise ChannelError("carrier_fc and bandwidth_B must be positive")

    @property
    def N(self) -> int:
        return self.n1 * self.n2

    def element_indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """(n1, n2) index of every element, element order n1·N2 + n2."""
        n1, n2 = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        return n1.ravel().astype(float), n2.ravel().astype(float)

    def is_frequency_flat(self) -> bool:
        """True when √N·B/f_c is below the flatness threshold."""
        return np.sqrt(self.N) * self.bandwidth_B / self.carrier_fc < FLATNESS_THRESHOLD


@dataclass
class Dictionary:
    """
    Per-frequency delay-angle dictionaries.

    Attributes:
        F (np.ndarray): (T, N, N·(T_D+1)) complex, one matrix per DFT bin.
        omega (np.ndarray): (T,) angular frequencies of the bins.
        geometry (ArrayGeometry): Array the dictionary was built for.
        T_D (int): Maximum delay spread in symbols.
        frequency_dependent (bool): Whether A(ω) was evaluated per bin.
    """
    F: np.ndarray
    omega: np.ndarray
    geometry: ArrayGeometry
    T_D: int
    frequency_dependent: bool

    @property
    def T(self) -> int:
        return self.F.shape[0]

    @property
    def N(self) -> int:
        return self.F.shape[1]

    @property
    def n_coeffs(self) -> int:
        return self.F.shape[2]

    @property
    def n_taps(self) -> int:
        return self.T_D + 1

    @property
    def is_flat(self) -> bool:
        """Same matrix at every bin (no beam squint and no delay taps)."""
        return (not self.frequency_dependent) and self.T_D == 0


@dataclass
class ChannelRealization:
    """
    Ground-truth multipath parameters of all users.

    Path arrays have shape (K, L). Delays are in seconds. S is the
    (N·(T_D+1), K) coefficient matrix: exactly sparse for on-grid draws,
    the least-squares projection onto the dictionary otherwise (diagnostic
    only; the error metric always uses exact_transfer).
    """
    theta: np.ndarray
    phi: np.ndarray
    delay_s: np.ndarray
    gain: np.ndarray
    T_D: int
    on_grid: bool
    S: Optional[np.ndarray] = None

    @property
    def paths_per_user(self) -> np.ndarray:
        return np.full(self.gain.shape[0], self.gain.shape[1], dtype=int)

    @property
    def K(self) -> int:
        return self.gain.shape[0]


def _direction_cosines(geometry: ArrayGeometry, theta, phi) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if geometry.kind is ArrayKind.ULA:
        return np.sin(theta), np.zeros_like(theta)
    return np.sin(theta) * np.sin(phi), np.sin(theta) * np.cos(phi)


def _steering_columns(geometry: ArrayGeometry, u1: np.ndarray, u2: np.ndarray, omega: float) -> np.ndarray:
    """(N, G) steering vectors for G direction-cosine pairs at one frequency."""
    n1, n2 = geometry.element_indices()
    squint = 1.0 + omega / (2.0 * np.pi * geometry.carrier_fc)
    phase = np.outer(n1, np.ravel(u1)) + np.outer(n2, np.ravel(u2))
    return np.exp(-2j * np.pi * geometry.spacing_d * squint * phase) / np.sqrt(geometry.N)


def steering_vector(geometry: ArrayGeometry, theta: float, phi: float, omega: float) -> np.ndarray:
    """
    Broadband steering vector a(θ, φ, ω) of unit 2-norm.

    Args:
        geometry (ArrayGeometry): Receive array.
        theta (float): Angle θ in radians.
        phi (float): Angle φ in radians (ignored for a ULA).
        omega (float): Baseband angular frequency in rad/s.

    Returns:
        np.ndarray: (N,) complex vector.
    """
    u1, u2 = _direction_cosines(geometry, theta, phi)
    return _steering_columns(geometry, u1, u2, omega)[:, 0]


def frequency_grid(T: int, B: float) -> np.ndarray:
    """ω_m = 2πB(m/T − ⌊m/T + 1/2⌋) for 0 ≤ m < T, all in [−πB, πB)."""
    if T < 1:
        raise ChannelError(f"block length T must be >= 1, got {T}")
    return 2.0 * np.pi * B * centered_fraction(np.arange(T) / T)


def angular_grid(geometry: ArrayGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    Direction cosines (u1, u2) of the N angular grid points.

    The grid is uniform in spatial frequency, ν_i = i/N − ⌊i/N + 1/2⌋ and
    u = ν/d, which makes the flat dictionary the unitary DFT matrix
    (U_N1 ⊗ U_N2 for a UPA).
    """
    nu1 = centered_fraction(np.arange(geometry.n1) / geometry.n1) / geometry.spacing_d
    nu2 = centered_fraction(np.arange(geometry.n2) / geometry.n2) / geometry.spacing_d
    u1, u2 = np.meshgrid(nu1, nu2, indexing="ij")
    if geometry.kind is ArrayKind.ULA:
        return u1.ravel(), np.zeros(geometry.N)
    return u1.ravel(), u2.ravel()


def build_dictionary(
    geometry: ArrayGeometry,
    T: int,
    T_D: int,
    frequency_dependent: Optional[bool] = None,
) -> Dictionary:
    """
    Build F_m = [1, e^{−jω_m/B}, …, e^{−jT_D ω_m/B}] ⊗ A(ω_m) for every bin.

    Args:
        geometry (ArrayGeometry): Receive array.
        T (int): Block length (number of DFT bins).
        T_D (int): Maximum delay spread in symbols.
        frequency_dependent (bool, optional): Evaluate A at every ω_m. None
            applies the automatic rule √N·B/f_c ≥ 0.1.

    Returns:
        Dictionary: The per-bin dictionaries.

    Raises:
        ChannelError: If T_D < 0 or T_D ≥ T (cyclic prefix assumption).
    """
    if T_D < 0 or T_D >= T:
        raise ChannelError(f"delay spread T_D={T_D} must satisfy 0 <= T_D < T={T}")
    if frequency_dependent is None:
        frequency_dependent = not geometry.is_frequency_flat()

    omega = frequency_grid(T, geometry.bandwidth_B)
    u1, u2 = angular_grid(geometry)
    N = geometry.N

    if frequency_dependent:
        A = np.stack([_steering_columns(geometry, u1, u2, w) for w in omega])
    else:
        A = np.broadcast_to(_steering_columns(geometry, u1, u2, 0.0), (T, N, N))

    taps = np.exp(-1j * np.outer(omega / geometry.bandwidth_B, np.arange(T_D + 1)))
    F = (taps[:, None, :, None] * A[:, :, None, :]).reshape(T, N, (T_D + 1) * N)

    _logger.debug(
        f"Dictionary built: N={N}, T={T}, T_D={T_D}, frequency_dependent={frequency_dependent}"
    )
    return Dictionary(F=F, omega=omega, geometry=geometry, T_D=T_D,
                      frequency_dependent=bool(frequency_dependent))


def _visible_grid(geometry: ArrayGeometry) -> np.ndarray:
    u1, u2 = angular_grid(geometry)
    return np.flatnonzero(u1 ** 2 + u2 ** 2 <= 1.0 + 1e-12)


def _grid_angles(geometry: ArrayGeometry, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u1, u2 = angular_grid(geometry)
    u1, u2 = u1[idx], u2[idx]
    if geometry.kind is ArrayKind.ULA:
        return np.arcsin(np.clip(u1, -1.0, 1.0)), np.full(u1.shape, np.pi / 2)
    radius = np.clip(np.sqrt(u1 ** 2 + u2 ** 2), 0.0, 1.0)
    return np.arcsin(radius), np.arctan2(u1, u2)


def draw_channel(
    geometry: ArrayGeometry,
    K: int,
    L: int,
    T_D: int,
    on_grid: bool,
    rng: np.random.Generator,
    dictionary: Optional[Dictionary] = None,
) -> ChannelRealization:
    """
    Draw L paths for each of K users.

    Gains are CN(0, 1). Off-grid draws use continuous angles (ULA: θ uniform
    on the half-plane [−π/2, π/2); UPA: θ uniform on [0, π/2), φ uniform on
    [0, 2π)) and delays uniform on [0, T_D]/B. On-grid draws pick L distinct
    (tap, angle) atoms per user, so column k of S has exactly L nonzeros.

    Args:
        geometry (ArrayGeometry): Receive array.
        K (int): Number of users.
        L (int): Paths per user.
        T_D (int): Maximum delay spread in symbols.
        on_grid (bool): Snap angles and delays to the dictionary grid.
        rng (np.random.Generator): Random stream.
        dictionary (Dictionary, optional): Used to project off-grid channels
            onto the grid; S stays None for off-grid draws without it.

    Returns:
        ChannelRealization: The ground-truth channel.
    """
    if K < 1 or L < 1:
        raise ChannelError(f"K and L must be >= 1, got K={K}, L={L}")
    N = geometry.N
    B = geometry.bandwidth_B

    if on_grid:
        visible = _visible_grid(geometry)
        n_atoms = visible.size * (T_D + 1)
        if L > n_atoms:
            raise ChannelError(f"L={L} exceeds the {n_atoms} available grid atoms")
        picks = np.stack([rng.choice(n_atoms, size=L, replace=False) for _ in range(K)])
        taps, angle_pos = np.divmod(picks, visible.size)
        theta, phi = _grid_angles(geometry, visible[angle_pos])
        delay_s = taps / B
    else:
        if geometry.kind is ArrayKind.ULA:
            theta = rng.uniform(-np.pi / 2, np.pi / 2, size=(K, L))
            phi = np.full((K, L), np.pi / 2)
        else:
            theta = rng.uniform(0.0, np.pi / 2, size=(K, L))
            phi = rng.uniform(0.0, 2 * np.pi, size=(K, L))
        delay_s = rng.uniform(0.0, T_D, size=(K, L)) / B

    gain = (rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))) / np.sqrt(2)
    realization = ChannelRealization(theta=theta, phi=phi, delay_s=delay_s, gain=gain,
                                     T_D=T_D, on_grid=on_grid)

    if on_grid:
        S = np.zeros((N * (T_D + 1), K), dtype=complex)
        cols = np.repeat(np.arange(K), L)
        S[(taps * N + visible[angle_pos]).ravel(), cols] = gain.ravel()
        realization.S = S
    elif dictionary is not None:
        realization.S = project_channel(realization, dictionary)
    return realization


def channel_transfer(S: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """
    H[m] = F_m · S for every bin.

    Returns:
        np.ndarray: (T, N, K) complex.

    Raises:
        ChannelError: On a row-count mismatch between S and the dictionary.
    """
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != dictionary.n_coeffs:
        raise ChannelError(
            f"S has shape {S.shape}, expected ({dictionary.n_coeffs}, K)"
        )
    return np.matmul(dictionary.F, S)


def exact_transfer(realization: ChannelRealization, geometry: ArrayGeometry, omega: np.ndarray) -> np.ndarray:
    """
    Continuous-parameter transfer function h_k(ω) = Σ_ℓ s a(θ, φ, ω) e^{−jωt}.

    Returns:
        np.ndarray: (T, N, K) complex, evaluated at the given frequencies.
    """
    omega = np.asarray(omega, dtype=float)
    u1, u2 = _direction_cosines(geometry, realization.theta, realization.phi)
    n1, n2 = geometry.element_indices()
    squint = 1.0 + omega / (2.0 * np.pi * geometry.carrier_fc)
    # (N, K, L) spatial phase, scaled per bin
    spatial = n1[:, None, None] * u1[None] + n2[:, None, None] * u2[None]
    phase = -2.0 * np.pi * geometry.spacing_d * squint[:, None, None, None] * spatial[None]
    delay = np.exp(-1j * omega[:, None, None] * realization.delay_s[None])
    paths = np.exp(1j * phase) * realization.gain[None, None] * delay[:, None]
    return paths.sum(axis=-1) / np.sqrt(geometry.N)


def snap_to_grid(realization: ChannelRealization, dictionary: Dictionary) -> np.ndarray:
    """
    Sparse coefficient matrix with every path moved to its nearest
    angular atom and nearest integer tap; gains of colliding paths add up.
    """
    geometry = dictionary.geometry
    u1, u2 = _direction_cosines(geometry, realization.theta, realization.phi)
    d = geometry.spacing_d
    i1 = np.mod(np.rint(u1 * d * geometry.n1), geometry.n1).astype(int)
    i2 = np.mod(np.rint(u2 * d * geometry.n2), geometry.n2).astype(int)
    angle_idx = i1 * geometry.n2 + i2
    taps = np.clip(np.rint(realization.delay_s * geometry.bandwidth_B), 0, dictionary.T_D).astype(int)

    S = np.zeros((dictionary.n_coeffs, realization.K), dtype=complex)
    rows = (taps * geometry.N + angle_idx).ravel()
    cols = np.repeat(np.arange(realization.K), realization.gain.shape[1])
    np.add.at(S, (rows, cols), realization.gain.ravel())
    return S


def project_channel(realization: ChannelRealization, dictionary: Dictionary) -> np.ndarray:
    """Least-squares coefficients S minimizing Σ_m ‖F_m S − H_exact[m]‖²."""
    H = exact_transfer(realization, dictionary.geometry, dictionary.omega)
    T, N, P = dictionary.F.shape
    S, residues, _, _ = scipy.linalg.lstsq(dictionary.F.reshape(T * N, P), H.reshape(T * N, -1))
    _logger.debug(f"Off-grid projection residual energy: {np.sum(np.atleast_1d(residues)):.4e}")
    return S
