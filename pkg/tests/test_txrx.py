import numpy as np
import pytest

from models.txrx import (
    RxBlock,
    SymbolDistribution,
    TxRxError,
    dft_block,
    draw_symbols,
    idft_block,
    onebit_block,
    onebit_sign,
    quantize_onebit,
    simulate_rx,
)


def test_dft_is_unitary(rng, complex_normal):
    x = complex_normal(rng, (16, 3))
    X = dft_block(x)
    assert np.sum(np.abs(X) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2))
    np.testing.assert_allclose(idft_block(X), x, atol=1e-12)


def test_gaussian_symbols_have_variance_rho(rng):
    symbols = draw_symbols(K=4, T=20000, rho=0.5, distribution="gaussian", rng=rng)
    assert symbols.distribution is SymbolDistribution.GAUSSIAN
    assert np.mean(np.abs(symbols.x_freq) ** 2) == pytest.approx(0.5, rel=0.03)


def test_qpsk_symbols_have_constant_modulus_in_time(rng):
    symbols = draw_symbols(K=2, T=64, rho=2.0, distribution=SymbolDistribution.QPSK, rng=rng)
    x_time = idft_block(symbols.x_freq)
    np.testing.assert_allclose(np.abs(x_time), np.sqrt(2.0), atol=1e-12)


def test_draw_symbols_rejects_non_positive_rho(rng):
    with pytest.raises(TxRxError):
        draw_symbols(K=1, T=4, rho=0.0, distribution="gaussian", rng=rng)


def test_noise_free_block_is_channel_times_symbols(rng, complex_normal):
    H = complex_normal(rng, (8, 4, 2))
    symbols = draw_symbols(K=2, T=8, rho=1.0, distribution="gaussian", rng=rng)
    rx = simulate_rx(H, symbols, rng, T_D=1, noise=False)
    assert rx.dims == (4, 2, 8, 1)
    for m in range(8):
        np.testing.assert_allclose(rx.y_freq[m], H[m] @ symbols.x_freq[m], atol=1e-12)


def test_noise_has_unit_variance(rng):
    H = np.zeros((4000, 8, 1), dtype=complex)
    symbols = draw_symbols(K=1, T=4000, rho=1.0, distribution="gaussian", rng=rng)
    rx = simulate_rx(H, symbols, rng)
    assert np.mean(np.abs(rx.y_freq) ** 2) == pytest.approx(1.0, rel=0.03)


def test_simulate_rx_rejects_mismatched_dimensions(rng, complex_normal):
    symbols = draw_symbols(K=3, T=8, rho=1.0, distribution="gaussian", rng=rng)
    with pytest.raises(TxRxError):
        simulate_rx(complex_normal(rng, (8, 4, 2)), symbols, rng)


def test_onebit_sign_alphabet_and_zero_convention():
    r = onebit_sign(np.array([0.0, -1 + 2j, 3 - 0.5j]))
    np.testing.assert_allclose(r, np.array([1 + 1j, -1 + 1j, 1 - 1j]) / np.sqrt(2))


def test_quantize_onebit_populates_both_domains(rng, complex_normal):
    rx = RxBlock(y_freq=complex_normal(rng, (16, 4)), rho=1.0, dims=(4, 1, 16, 0))
    quantized = quantize_onebit(rx)
    assert quantized.is_onebit and not rx.is_onebit
    np.testing.assert_allclose(np.abs(quantized.r_time.real), 1 / np.sqrt(2))
    np.testing.assert_allclose(quantized.r_freq, dft_block(quantized.r_time))
    np.testing.assert_array_equal(quantized.r_time, onebit_sign(idft_block(rx.y_freq)))


def test_quantize_requires_unquantized_samples():
    with pytest.raises(TxRxError):
        quantize_onebit(RxBlock(y_freq=None, rho=1.0, dims=(1, 1, 1, 0)))


def test_onebit_block_has_no_unquantized_samples():
    r_time = onebit_sign(np.ones((4, 2)))
    rx = onebit_block(r_time, rho=0.1, dims=(2, 1, 4, 0))
    assert rx.y_freq is None and rx.is_onebit
    assert (rx.N, rx.K, rx.T, rx.T_D) == (2, 1, 4, 0)
