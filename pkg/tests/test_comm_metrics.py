import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfisac.channel import complex_normal
from cfisac.comm_metrics import (
    downlink_sinr,
    estimate_coefficients,
    sinr_soc_residual,
    spectral_efficiency,
)
from cfisac.precoding import rzf_precoders

from conftest import random_coefficients


def _ensemble(rng, n, n_ue=3, N=6, err_scale=0.3):
    h = complex_normal(rng, (n, n_ue, N))
    err = err_scale * complex_normal(rng, (n, n_ue, N))
    hat = h - err
    w_ue = rzf_precoders(hat, 1.0)
    w0 = complex_normal(rng, (n, N))
    w0 /= np.linalg.norm(w0, axis=1, keepdims=True)
    return h, err, np.concatenate([w0[:, :, None], w_ue], axis=2)


def test_spectral_efficiency_values():
    assert spectral_efficiency(0.0, 200, 10) == 0.0
    assert spectral_efficiency(1.0, 200, 10) == pytest.approx(0.95)
    assert spectral_efficiency(1.0 + 10**0.3, 200, 10) == pytest.approx(0.95 * np.log2(2.0 + 10**0.3))
    assert spectral_efficiency(2.0, 200, 10) == pytest.approx(0.95 * np.log2(3.0), abs=1e-12)
    assert spectral_efficiency(2.0, 200, 10) == pytest.approx(1.506, abs=1e-3)


def test_perfect_csi_has_no_sensing_leakage(rng):
    h, _, w = _ensemble(rng, 200)
    c = estimate_coefficients(h, np.zeros_like(h), w, 1.0)
    np.testing.assert_array_equal(c.a[:, 0], 0.0)


def test_coefficients_match_term_by_term(rng):
    h, err, w = _ensemble(rng, 300)
    c = estimate_coefficients(h, err, w, 2.0)
    rho = rng.uniform(0, 1, 4)
    # per-term evaluation of the hardening bound on the same ensemble
    n_ue = 3
    expected = np.empty(n_ue)
    for i in range(n_ue):
        gains = np.einsum("rn,rnj->rj", h[:, i].conj(), w)
        mean_own = np.mean(gains[:, i + 1])
        signal = rho[i + 1] * abs(mean_own) ** 2
        interf = rho[i + 1] * (np.mean(np.abs(gains[:, i + 1]) ** 2) - abs(mean_own) ** 2)
        interf += sum(rho[j + 1] * np.mean(np.abs(gains[:, j + 1]) ** 2) for j in range(n_ue) if j != i)
        interf += rho[0] * np.mean(np.abs(np.einsum("rn,rn->r", err[:, i].conj(), w[:, :, 0])) ** 2)
        expected[i] = signal / (interf + 2.0)
    np.testing.assert_allclose(downlink_sinr(rho, c), expected, rtol=1e-12)
    assert c.sigma == pytest.approx(np.sqrt(2.0))


def test_coefficients_self_consistent(rng):
    big = estimate_coefficients(*_ensemble(np.random.default_rng(1), 10_000), 1.0)
    small = estimate_coefficients(*_ensemble(np.random.default_rng(2), 1_000), 1.0)
    assert np.max(np.abs(small.b - big.b) / big.b) < 0.05
    assert np.linalg.norm(small.a**2 - big.a**2) / np.linalg.norm(big.a**2) < 0.05


def test_sinr_basic_properties(rng):
    c, _ = random_coefficients(rng, 4, 3)
    np.testing.assert_array_equal(downlink_sinr(np.zeros(5), c), 0.0)
    rho = rng.uniform(0.1, 1, 5)
    assert np.all(downlink_sinr(2 * rho, c) > downlink_sinr(rho, c))
    with pytest.raises(ValueError):
        downlink_sinr(-rho, c)


@given(st.integers(0, 2**31), st.floats(0.1, 20.0))
@settings(max_examples=100, deadline=None)
def test_soc_residual_equivalent_to_sinr(seed, gamma):
    rng = np.random.default_rng(seed)
    c, _ = random_coefficients(rng, 3, 2, leak=0.5, cross=0.5)
    rho_sqrt = rng.uniform(0, 2, 4)
    res = sinr_soc_residual(rho_sqrt, c, gamma)
    sinr = downlink_sinr(rho_sqrt**2, c)
    clear = np.abs(sinr - gamma) > 1e-9 * gamma
    np.testing.assert_array_equal((res >= 0)[clear], (sinr >= gamma)[clear])
