import numpy as np
import pytest

from models.channel import ArrayGeometry, build_dictionary, channel_transfer
from services.crb import (
    CrbError,
    FisherKind,
    eta_crb,
    fisher_ideal,
    fisher_ideal_lowsnr,
    fisher_ideal_trace,
    fisher_onebit_flat,
    fisher_onebit_flat_trace,
    fisher_onebit_wideband,
    fisher_onebit_wideband_trace,
    reduce_support,
)


@pytest.fixture
def flat3():
    geometry = ArrayGeometry(n1=3, carrier_fc=28e9, bandwidth_B=1e8)
    return build_dictionary(geometry, T=4, T_D=0)


def _channel(dictionary, rng, complex_normal, K=2):
    S = complex_normal(rng, (dictionary.n_coeffs, K))
    return S, channel_transfer(S, dictionary)


@pytest.mark.parametrize("dictionary_name", ["flat3", "wideband_dictionary"])
def test_ideal_fisher_matches_trace_definition(dictionary_name, request, rng, complex_normal):
    dictionary = request.getfixturevalue(dictionary_name)
    _, H = _channel(dictionary, rng, complex_normal)
    fisher = fisher_ideal(H, dictionary, rho=0.9)
    np.testing.assert_allclose(fisher.J, fisher_ideal_trace(H, dictionary, 0.9), atol=1e-10)
    assert fisher.kind is FisherKind.IDEAL_EXACT
    assert fisher.is_hermitian() and fisher.is_psd()


def test_onebit_flat_fisher_matches_trace_definition(flat3, rng, complex_normal):
    _, H = _channel(flat3, rng, complex_normal)
    fisher = fisher_onebit_flat(H[0], flat3.F[0], rho=0.3, T=flat3.T)
    np.testing.assert_allclose(fisher.J, fisher_onebit_flat_trace(H[0], flat3.F[0], 0.3, flat3.T), atol=1e-10)
    assert fisher.is_hermitian()


def test_onebit_wideband_fisher_matches_trace_definition(wideband_dictionary, rng, complex_normal):
    _, H = _channel(wideband_dictionary, rng, complex_normal)
    fisher = fisher_onebit_wideband(H, wideband_dictionary, rho=0.4)
    np.testing.assert_allclose(fisher.J, fisher_onebit_wideband_trace(H, wideband_dictionary, 0.4), atol=1e-10)
    assert fisher.kind is FisherKind.ONEBIT_LOW_SNR_WIDEBAND


def test_wideband_form_reduces_to_flat_form(flat3, rng, complex_normal):
    _, H = _channel(flat3, rng, complex_normal)
    flat = fisher_onebit_flat(H, flat3.F, rho=0.5, T=flat3.T)
    wide = fisher_onebit_wideband(H, flat3, rho=0.5)
    np.testing.assert_allclose(wide.J, flat.J, atol=1e-10)


def test_onebit_first_term_is_ideal_low_snr_scaled(flat3, rng, complex_normal):
    _, H = _channel(flat3, rng, complex_normal)
    rho, T = 0.2, flat3.T
    onebit = fisher_onebit_flat(H[0], flat3.F[0], rho, T).J
    ideal = fisher_ideal_lowsnr(H, flat3, rho).J
    F, h = flat3.F[0], H[0]
    K, P = h.shape[1], F.shape[1]
    removed = np.zeros((K * P, K * P), dtype=complex)
    for k in range(K):
        for k2 in range(K):
            removed[k * P:(k + 1) * P, k2 * P:(k2 + 1) * P] = F.conj().T @ np.diag(h[:, k] * h[:, k2].conj()) @ F
    first = onebit + T * (2 * rho / np.pi) ** 2 * removed
    np.testing.assert_allclose(first, 4 / np.pi ** 2 * ideal, atol=1e-12)


def test_flat_onebit_fisher_rejects_frequency_selective_channel(wideband_dictionary, rng, complex_normal):
    _, H = _channel(wideband_dictionary, rng, complex_normal)
    with pytest.raises(CrbError):
        fisher_onebit_flat(H, wideband_dictionary.F, 0.1, wideband_dictionary.T)


def test_wideband_trace_guard(wideband_dictionary, rng, complex_normal):
    _, H = _channel(wideband_dictionary, rng, complex_normal)
    with pytest.raises(CrbError):
        fisher_onebit_wideband_trace(H, wideband_dictionary, 0.1, guard=10)


def test_single_path_eta_crb_closed_form():
    geometry = ArrayGeometry(n1=8, carrier_fc=28e9, bandwidth_B=1e8)
    dictionary = build_dictionary(geometry, T=50, T_D=0)
    S = np.zeros((8, 1), dtype=complex)
    s = 0.6 - 0.3j
    S[3, 0] = s
    H = channel_transfer(S, dictionary)
    rho, T, power = 0.25, 50, abs(s) ** 2
    result = eta_crb(reduce_support(fisher_ideal(H, dictionary, rho), S), H, dictionary)
    expected = 1 / np.sqrt(1 + (1 + rho * power) ** 2 / (T * rho ** 2 * power ** 2))
    assert result.eta[0] == pytest.approx(expected, rel=1e-10)
    assert not result.singular and result.reliable


def test_eta_crb_increases_with_snr(flat3, rng, complex_normal):
    S, H = _channel(flat3, rng, complex_normal)
    low = eta_crb(reduce_support(fisher_ideal(H, flat3, 0.1), S), H, flat3).eta
    high = eta_crb(reduce_support(fisher_ideal(H, flat3, 10.0), S), H, flat3).eta
    assert np.all(high > low)
    assert np.all((low > 0) & (high < 1))


def test_singular_fisher_matrix_is_reported(flat3):
    S = np.zeros((3, 1), dtype=complex)
    S[0, 0] = 1.0
    H = np.zeros((flat3.T, 3, 1), dtype=complex)
    result = eta_crb(reduce_support(fisher_ideal(H, flat3, 1.0), S), H, flat3)
    assert result.singular
    np.testing.assert_array_equal(result.eta, [0.0])


def test_reduce_support_keeps_nonzero_layout_indices(flat3, rng, complex_normal):
    S = np.zeros((3, 2), dtype=complex)
    S[1, 0] = 1.0
    S[2, 1] = 1j
    fisher = fisher_ideal(channel_transfer(S, flat3), flat3, 1.0)
    reduced = reduce_support(fisher, S)
    np.testing.assert_array_equal(reduced.indices, [1, 5])
    np.testing.assert_allclose(reduced.J, fisher.J[np.ix_([1, 5], [1, 5])])


def test_reduce_support_rejects_empty_support(flat3):
    fisher = fisher_ideal(np.zeros((flat3.T, 3, 1)), flat3, 1.0)
    with pytest.raises(CrbError):
        reduce_support(fisher, np.zeros((3, 1)))


def test_fisher_ideal_rejects_non_positive_snr(flat3):
    with pytest.raises(CrbError):
        fisher_ideal(np.zeros((flat3.T, 3, 1)), flat3, 0.0)
