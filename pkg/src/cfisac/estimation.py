"""Uplink pilot assignment and MMSE channel estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal


def assign_pilots(n_ue: int, tau_p: int) -> np.ndarray:
    """Pilot index per UE; distinct when ``tau_p >= n_ue``, round-robin otherwise."""
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    return np.arange(n_ue) % tau_p


def pilot_sharing_sets(pilots: np.ndarray) -> list[np.ndarray]:
    """For every UE, the UEs that use the same pilot (itself included)."""
    pilots = np.asarray(pilots)
    return [np.flatnonzero(pilots == t) for t in pilots]


def _hermitian_inverse(matrix):
    sym = (matrix + np.swapaxes(matrix.conj(), -1, -2)) / 2
    chol_inv = np.linalg.inv(np.linalg.cholesky(sym))
    return np.swapaxes(chol_inv.conj(), -1, -2) @ chol_inv


def received_pilot_covariance(R, pilots, eta, tau_p, sigma2):
    """``Psi`` seen by every UE: ``sum_{j in P_i} eta tau_p R_j + sigma2 I``.

    ``R`` has shape ``(n_ue, n_tx, M, M)``; the result has the same shape,
    indexed by UE rather than by pilot for convenience.
    """
    R = np.asarray(R)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (R.shape[0],))
    m = R.shape[-1]
    psi = np.empty_like(R)
    for i, shared in enumerate(pilot_sharing_sets(pilots)):
        psi[i] = np.tensordot(eta[shared] * tau_p, R[shared], axes=(0, 0)) + sigma2 * np.eye(m)
    return psi


def mmse_estimate(y_pilot, R, psi, eta, tau_p):
    """``sqrt(eta tau_p) R Psi^{-1} y``; broadcasts over leading dimensions."""
    gain = np.sqrt(eta * tau_p) * (R @ _hermitian_inverse(psi))
    return np.einsum("...ab,...b->...a", gain, y_pilot)


def error_covariance(R, psi, eta, tau_p):
    """MMSE error correlation ``R - eta tau_p R Psi^{-1} R``."""
    R = np.asarray(R)
    C = R - eta * tau_p * R @ _hermitian_inverse(psi) @ R
    return (C + np.swapaxes(C.conj(), -1, -2)) / 2


def pilot_observations(h, pilots, eta, tau_p, sigma2, rng):
    """Despread pilot signal ``y^p_{t_i,k}`` for every UE.

    ``h`` has shape ``(..., n_ue, n_tx, M)``. UEs sharing a pilot receive the
    same observation, including the same noise realization.
    """
    h = np.asarray(h)
    pilots = np.asarray(pilots)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (h.shape[-3],))
    noise = np.sqrt(sigma2) * complex_normal(rng, h.shape[:-3] + (tau_p,) + h.shape[-2:])
    weighted = np.sqrt(eta * tau_p)[:, None, None] * h
    per_pilot = noise.copy()
    for t in range(tau_p):
        members = pilots == t
        if members.any():
            per_pilot[..., t, :, :] += weighted[..., members, :, :].sum(axis=-3)
    return per_pilot[..., pilots, :, :]


@dataclass(frozen=True)
class ChannelEstimate:
    """Estimates, errors and error correlation for an ensemble of blocks.

    ``h_hat``/``h_err`` have shape ``(..., n_ue, n_tx, M)``; ``error_cov``
    is ``(n_ue, n_tx, M, M)``.
    """

    h_hat: np.ndarray
    h_err: np.ndarray
    error_cov: np.ndarray

    def stacked(self):
        """Concatenated estimates and errors, shape ``(..., n_ue, n_tx * M)``."""
        shape = self.h_hat.shape[:-2] + (-1,)
        return self.h_hat.reshape(shape), self.h_err.reshape(shape)


def estimate_channels(h, R, pilots, eta, tau_p, sigma2, rng) -> ChannelEstimate:
    """Run pilot transmission and MMSE estimation on channel draws ``h``."""
    psi = received_pilot_covariance(R, pilots, eta, tau_p, sigma2)
    y = pilot_observations(h, pilots, eta, tau_p, sigma2, rng)
    h_hat = mmse_estimate(y, R, psi, eta, tau_p)
    return ChannelEstimate(h_hat, h - h_hat, error_covariance(R, psi, eta, tau_p))
