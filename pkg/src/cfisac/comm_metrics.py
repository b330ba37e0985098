"""Downlink hardening-bound SINR/SE and the SOC coefficients built from it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SinrCoefficients:
    """Monte Carlo statistics entering the downlink SINR.

    Attributes
    ----------
    b : ndarray, shape (n_ue,)
        ``|E{h_i^H w_i}|``.
    a : ndarray, shape (n_ue, n_ue + 1)
        Column 0 holds ``a_{i,0}`` (sensing-beam leakage through the
        estimation error); column ``j >= 1`` holds ``a_{i,j}``, where the
        diagonal ``a_{i,i}`` is the self-interference (beamforming gain
        uncertainty) term.
    sigma : float
        Noise standard deviation.
    """

    b: np.ndarray
    a: np.ndarray
    sigma: float

    @property
    def n_ue(self) -> int:
        return self.b.shape[0]


def estimate_coefficients(h, h_err, w, sigma2) -> SinrCoefficients:
    """Sample-mean coefficients from an ensemble of channels and precoders.

    ``h``, ``h_err``: ``(n_real, n_ue, N)`` true channels and estimation
    errors; ``w``: ``(n_real, N, n_ue + 1)`` precoders with the sensing beam
    in column 0. Every realization may use its own target location, so
    ``a_{i,0}`` averages over hotspot positions too.
    """
    gains = np.einsum("rin,rnj->rij", np.conj(h), w)
    n_ue = h.shape[1]
    idx = np.arange(n_ue)
    power = np.mean(np.abs(gains) ** 2, axis=0)
    b = np.abs(np.mean(gains[:, idx, idx + 1], axis=0))
    a_sq = power.copy()
    a_sq[idx, idx + 1] = np.clip(power[idx, idx + 1] - b**2, 0.0, None)
    a_sq[:, 0] = np.mean(np.abs(np.einsum("rin,rn->ri", np.conj(h_err), w[:, :, 0])) ** 2, axis=0)
    return SinrCoefficients(b=b, a=np.sqrt(a_sq), sigma=float(np.sqrt(sigma2)))


def downlink_sinr(rho, coeffs: SinrCoefficients) -> np.ndarray:
    """Per-UE SINR for power coefficients ``rho = [rho_0, rho_1, ...]`` (linear)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("power coefficients must be nonnegative")
    interference = coeffs.a**2 @ rho + coeffs.sigma**2
    return rho[1:] * coeffs.b**2 / interference


def spectral_efficiency(sinr, tau_c: int, tau_p: int):
    """Achievable SE in bit/s/Hz with the pilot-overhead prelog."""
    sinr = np.asarray(sinr, dtype=float)
    return (tau_c - tau_p) / tau_c * np.log2(1.0 + sinr)


def sinr_soc_residual(rho_sqrt, coeffs: SinrCoefficients, gamma) -> np.ndarray:
    """``rhs - lhs`` of the SOC form of ``SINR_i >= gamma``; feasible iff ``>= 0``."""
    rho_sqrt = np.asarray(rho_sqrt, dtype=float)
    stacked = coeffs.a * rho_sqrt[None, :]
    lhs = np.sqrt(np.sum(stacked**2, axis=1) + coeffs.sigma**2)
    rhs = rho_sqrt[1:] * coeffs.b / np.sqrt(gamma)
    return rhs - lhs
