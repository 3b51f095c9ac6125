import numpy as np
import pytest
import scipy.fft

from models.channel import (
    ArrayGeometry,
    ArrayKind,
    ChannelError,
    build_dictionary,
    channel_transfer,
    draw_channel,
    exact_transfer,
    frequency_grid,
    project_channel,
    snap_to_grid,
    steering_vector,
)


def test_steering_vector_has_unit_norm():
    geometry = ArrayGeometry(kind=ArrayKind.UPA, n1=4, n2=2)
    a = steering_vector(geometry, theta=0.3, phi=1.1, omega=2 * np.pi * 1e9)
    assert a.shape == (8,)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)


def test_broadside_steering_vector_is_constant():
    geometry = ArrayGeometry(n1=8)
    a = steering_vector(geometry, theta=0.0, phi=np.pi / 2, omega=0.0)
    np.testing.assert_allclose(a, np.full(8, 1 / np.sqrt(8)), atol=1e-12)


def test_frequency_grid_covers_the_band():
    omega = frequency_grid(8, 1e9)
    assert omega.min() == pytest.approx(-np.pi * 1e9)
    assert np.all(omega < np.pi * 1e9)
    assert omega[0] == 0.0
    assert np.unique(np.round(np.diff(np.sort(omega)), 3)).size == 1


def test_flat_ula_dictionary_is_the_unitary_dft():
    geometry = ArrayGeometry(n1=8, carrier_fc=28e9, bandwidth_B=1e8)
    dictionary = build_dictionary(geometry, T=4, T_D=0)
    assert dictionary.is_flat
    np.testing.assert_allclose(dictionary.F[0], scipy.fft.fft(np.eye(8), norm="ortho"), atol=1e-12)
    np.testing.assert_allclose(dictionary.F[0].conj().T @ dictionary.F[0], np.eye(8), atol=1e-12)


@pytest.mark.parametrize("spacing", [0.5, 0.7])
def test_flat_dictionary_does_not_depend_on_spacing(spacing):
    geometry = ArrayGeometry(n1=6, spacing_d=spacing, carrier_fc=28e9, bandwidth_B=1e8)
    F = build_dictionary(geometry, T=2, T_D=0).F[0]
    np.testing.assert_allclose(F, scipy.fft.fft(np.eye(6), norm="ortho"), atol=1e-12)


def test_flat_upa_dictionary_is_a_kronecker_product():
    geometry = ArrayGeometry(kind=ArrayKind.UPA, n1=4, n2=2, carrier_fc=28e9, bandwidth_B=1e8)
    F = build_dictionary(geometry, T=2, T_D=0).F[0]
    expected = np.kron(scipy.fft.fft(np.eye(4), norm="ortho"), scipy.fft.fft(np.eye(2), norm="ortho"))
    np.testing.assert_allclose(F, expected, atol=1e-12)


def test_delay_taps_multiply_the_angular_block():
    geometry = ArrayGeometry(n1=4, carrier_fc=60.5e9, bandwidth_B=7e9)
    dictionary = build_dictionary(geometry, T=6, T_D=2, frequency_dependent=True)
    assert dictionary.F.shape == (6, 4, 12)
    assert dictionary.n_coeffs == 12 and dictionary.n_taps == 3
    A = dictionary.F[:, :, :4]
    for d in range(3):
        phase = np.exp(-1j * dictionary.omega * d / geometry.bandwidth_B)
        np.testing.assert_allclose(dictionary.F[:, :, 4 * d:4 * (d + 1)], phase[:, None, None] * A, atol=1e-12)


def test_automatic_rule_detects_beam_squint():
    wide = ArrayGeometry(n1=32, carrier_fc=60.5e9, bandwidth_B=7e9)
    narrow = ArrayGeometry(n1=32, carrier_fc=28e9, bandwidth_B=1e8)
    assert not wide.is_frequency_flat()
    assert narrow.is_frequency_flat()
    assert build_dictionary(wide, T=4, T_D=0).frequency_dependent
    assert not build_dictionary(narrow, T=4, T_D=0).frequency_dependent


def test_dictionary_rejects_delay_spread_longer_than_block():
    with pytest.raises(ChannelError):
        build_dictionary(ArrayGeometry(n1=4), T=4, T_D=4)


def test_ula_rejects_second_dimension():
    with pytest.raises(ChannelError):
        ArrayGeometry(kind=ArrayKind.ULA, n1=4, n2=2)


def test_on_grid_channel_is_exactly_sparse(rng):
    geometry = ArrayGeometry(n1=8, carrier_fc=60.5e9, bandwidth_B=7e9)
    dictionary = build_dictionary(geometry, T=16, T_D=2, frequency_dependent=True)
    channel = draw_channel(geometry, K=2, L=3, T_D=2, on_grid=True, rng=rng)
    assert channel.S.shape == (24, 2)
    assert list(np.count_nonzero(channel.S, axis=0)) == [3, 3]
    np.testing.assert_allclose(
        channel_transfer(channel.S, dictionary),
        exact_transfer(channel, geometry, dictionary.omega),
        atol=1e-10,
    )


def test_snap_to_grid_recovers_on_grid_coefficients(rng):
    geometry = ArrayGeometry(n1=8, carrier_fc=60.5e9, bandwidth_B=7e9)
    dictionary = build_dictionary(geometry, T=16, T_D=2, frequency_dependent=True)
    channel = draw_channel(geometry, K=3, L=2, T_D=2, on_grid=True, rng=rng)
    np.testing.assert_allclose(snap_to_grid(channel, dictionary), channel.S, atol=1e-12)


def test_off_grid_draw_ranges(rng):
    geometry = ArrayGeometry(n1=8, bandwidth_B=7e9)
    channel = draw_channel(geometry, K=50, L=3, T_D=5, on_grid=False, rng=rng)
    assert np.all(channel.theta >= -np.pi / 2) and np.all(channel.theta < np.pi / 2)
    assert np.all(channel.delay_s >= 0) and np.all(channel.delay_s <= 5 / 7e9)
    assert channel.S is None
    assert list(channel.paths_per_user) == [3] * 50


def test_projection_is_exact_for_on_grid_channels(rng):
    geometry = ArrayGeometry(n1=4, carrier_fc=60.5e9, bandwidth_B=7e9)
    dictionary = build_dictionary(geometry, T=8, T_D=1, frequency_dependent=True)
    channel = draw_channel(geometry, K=2, L=2, T_D=1, on_grid=True, rng=rng)
    np.testing.assert_allclose(project_channel(channel, dictionary), channel.S, atol=1e-10)


def test_channel_transfer_rejects_wrong_row_count(flat_dictionary):
    with pytest.raises(ChannelError):
        channel_transfer(np.zeros((5, 2)), flat_dictionary)
