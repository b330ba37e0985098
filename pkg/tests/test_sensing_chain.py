import numpy as np
import pytest

from cfisac.channel import complex_normal, local_scattering_correlation
from cfisac.precoding import PrecoderSet
from cfisac.scenario import array_response
from cfisac.sensing_chain import (
    TargetLink,
    build_snapshot,
    clutter_matrices,
    clutter_vector,
    draw_symbols,
    known_reflection,
    sample_clutter,
    synthesize_received,
    transmit_signal,
)


def _random_setup(rng, n_tx=3, n_rx=2, m=2, n_ue=2, tau=5):
    w = complex_normal(rng, (n_tx * m, n_ue + 1))
    w /= np.linalg.norm(w, axis=0)
    precoders = PrecoderSet(w, n_tx)
    link = TargetLink(rng.uniform(0.5, 2.0, (n_rx, n_tx)),
                      array_response(rng.uniform(-1, 1, n_tx), 0.1, m),
                      array_response(rng.uniform(-1, 1, n_rx), -0.2, m))
    symbols = draw_symbols(n_ue, tau, rng)
    return precoders, link, symbols


def test_symbol_statistics(rng):
    s = draw_symbols(3, 10_000, rng)
    assert s.shape == (10_000, 4)
    assert np.all(np.abs(s.mean(axis=0)) < 0.05)
    np.testing.assert_allclose(np.mean(np.abs(s) ** 2, axis=0), 1.0, atol=0.05)
    corr = s.conj().T @ s / s.shape[0]
    assert np.max(np.abs(corr[0, 1:])) < 0.05


def test_transmit_signal(rng):
    precoders, _, symbols = _random_setup(rng)
    np.testing.assert_array_equal(transmit_signal(precoders, np.zeros(3), symbols), 0.0)
    x = transmit_signal(precoders, [0.0, 1.0, 0.0], symbols)
    expected = symbols[:, 1, None, None] * precoders.per_ap()[None, :, :, 1]
    np.testing.assert_allclose(x, expected)
    with pytest.raises(ValueError):
        transmit_signal(precoders, [-1.0, 0, 0], symbols)


def test_transmit_power_matches_per_ap_formula(rng):
    precoders, _, _ = _random_setup(rng)
    rho = np.array([0.3, 0.5, 0.2])
    x = transmit_signal(precoders, rho, draw_symbols(2, 10_000, rng))
    emp = np.mean(np.sum(np.abs(x) ** 2, axis=2), axis=0)
    expected = precoders.per_ap_sq_norms().T @ rho
    np.testing.assert_allclose(emp, expected, rtol=0.03)


def test_known_reflection_structure(rng):
    precoders, link, symbols = _random_setup(rng)
    x = transmit_signal(precoders, [0.4, 0.3, 0.3], symbols)
    g = known_reflection(link, x)
    np.testing.assert_array_equal(known_reflection(link, np.zeros_like(x)), 0.0)
    for m, r, k in [(0, 0, 0), (3, 1, 2)]:
        vec = g[m, r, :, k]
        # rank one along the receive steering vector
        coef = np.vdot(link.a_rx[r], vec) / np.vdot(link.a_rx[r], link.a_rx[r])
        np.testing.assert_allclose(vec, coef * link.a_rx[r], atol=1e-12)
        expected = np.sqrt(link.beta[r, k]) * np.linalg.norm(link.a_rx[r]) * abs(link.a_tx[k] @ x[m, k])
        assert np.linalg.norm(vec) == pytest.approx(expected)


def test_dense_matrices_match_structured_products(rng):
    precoders, link, symbols = _random_setup(rng)
    snap = build_snapshot(precoders, [0.2, 0.5, 0.3], symbols, link)
    alpha = complex_normal(rng, link.n_pairs)
    np.testing.assert_allclose(np.einsum("mij,j->mi", snap.dense_g(), alpha),
                               snap.target_response(alpha).reshape(snap.tau, -1), atol=1e-13)
    H = complex_normal(rng, (2, 3, 2, 2))
    h = clutter_vector(H)
    np.testing.assert_allclose(np.einsum("mij,j->mi", snap.dense_x(), h),
                               snap.clutter_response(H).reshape(snap.tau, -1), atol=1e-13)
    # per receiver: sum_k H_rk x_k[m] by direct multiplication
    direct = sum(H[1, k] @ snap.x[2, k] for k in range(3))
    np.testing.assert_allclose(snap.clutter_response(H)[2, 1], direct)


def test_clutter_vector_roundtrip_is_column_major(rng):
    H = complex_normal(rng, (4, 2, 3, 2, 2))
    h = clutter_vector(H)
    assert h.shape == (4, 24)
    np.testing.assert_array_equal(clutter_matrices(h, 2, 3, 2), H)
    np.testing.assert_array_equal(h[0, :4], H[0, 0, 0].reshape(-1, order="F"))


def test_synthesize_cases(rng):
    precoders, link, symbols = _random_setup(rng)
    snap = build_snapshot(precoders, [0.2, 0.5, 0.3], symbols, link)
    np.testing.assert_array_equal(synthesize_received(snap, 0, sigma2=0.0), 0.0)
    alpha = complex_normal(rng, link.n_pairs)
    np.testing.assert_allclose(synthesize_received(snap, 1, alpha=alpha, sigma2=0.0), snap.target_response(alpha))
    with pytest.raises(ValueError):
        synthesize_received(snap, 1, sigma2=0.0)
    with pytest.raises(ValueError):
        synthesize_received(snap, 2, sigma2=0.0)
    y = synthesize_received(snap, 0, sigma2=2.0, rng=rng)
    assert y.shape == (5, 2, 2)


def test_sample_clutter_covariance(rng):
    r_tx = np.stack([[local_scattering_correlation(0.3, 0.0, 0.3, 2)]])
    r_rx = np.stack([[2.0 * local_scattering_correlation(-0.5, 0.0, 0.3, 2)]])
    H = sample_clutter(r_tx, r_rx, 0.4, rng, 100_000)
    vec = clutter_vector(H)
    emp = vec.T @ vec.conj() / vec.shape[0]
    ref = 0.4 * np.kron(r_tx[0, 0], r_rx[0, 0])
    assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.05
