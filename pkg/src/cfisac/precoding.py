"""Centralized RZF communication precoders and the nullspace sensing precoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .scenario import array_response


class DegenerateGeometryError(ValueError):
    """The target steering vector lies (numerically) in the UE channel span."""


def rzf_precoders(h_hat, lam):
    """Unit-norm RZF precoders.

    Parameters
    ----------
    h_hat : ndarray, shape (..., n_ue, N)
        Concatenated channel estimates, one row per UE.
    lam : float
        Regularization, must be positive.

    Returns
    -------
    ndarray, shape (..., N, n_ue)
        Column ``i`` is ``(sum_j h_j h_j^H + lam I)^{-1} h_i`` normalized.
    """
    if lam <= 0:
        raise ValueError("RZF regularization must be positive")
    H = np.swapaxes(np.asarray(h_hat), -1, -2)
    n_ue = H.shape[-1]
    gram = np.swapaxes(H.conj(), -1, -2) @ H + lam * np.eye(n_ue)
    # push-through identity: (H H^H + lam I)^{-1} H = H (H^H H + lam I)^{-1}
    W = H @ np.linalg.inv(gram)
    return W / np.linalg.norm(W, axis=-2, keepdims=True)


def orthonormal_span(columns, rel_tol=1e-10):
    """Orthonormal basis of the column span via pivoted QR."""
    columns = np.asarray(columns)
    if columns.shape[1] == 0:
        return columns
    q, r, _ = qr(columns, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rel_tol * diag[0])) if diag[0] > 0 else 0
    return q[:, :rank]


def sensing_precoder(h_hat, h0):
    """Project the target steering vector onto the nullspace of the estimates.

    ``h_hat`` has shape ``(n_ue, N)`` and ``h0`` shape ``(N,)``.
    """
    h0 = np.asarray(h0)
    U = orthonormal_span(np.asarray(h_hat).T)
    v = h0
    # two passes keep the nullspace residual at round-off level
    for _ in range(2):
        v = v - U @ (U.conj().T @ v)
    norm = np.linalg.norm(v)
    if norm < 1e-12 * max(np.linalg.norm(h0), 1e-300):
        raise DegenerateGeometryError("sensing direction lies in the span of the UE channels")
    return v / norm


def target_steering(tx_azimuth, tx_elevation, m):
    """Concatenated transmit array response toward the target, length ``n_tx * m``."""
    return array_response(tx_azimuth, tx_elevation, m).reshape(-1)


@dataclass(frozen=True)
class PrecoderSet:
    """Centralized precoders; column 0 is the sensing beam, column ``i`` UE ``i``."""

    w: np.ndarray
    n_tx: int

    @property
    def m(self) -> int:
        return self.w.shape[0] // self.n_tx

    @property
    def n_streams(self) -> int:
        return self.w.shape[1]

    def per_ap(self) -> np.ndarray:
        """Per-AP slices, shape ``(n_tx, M, n_ue + 1)`` (``W_k`` matrices)."""
        return self.w.reshape(self.n_tx, self.m, self.n_streams)

    def per_ap_sq_norms(self) -> np.ndarray:
        """``||w_{i,k}||^2`` with shape ``(n_ue + 1, n_tx)``."""
        return np.sum(np.abs(self.per_ap()) ** 2, axis=1).T


def build_precoders(h_hat, h0, lam, n_tx) -> PrecoderSet:
    """RZF for the UEs plus the nullspace sensing beam, stacked as ``[w0, w1..]``."""
    h_hat = np.asarray(h_hat)
    w0 = sensing_precoder(h_hat, h0)
    if h_hat.shape[0] == 0:
        return PrecoderSet(w0[:, None], n_tx)
    w = rzf_precoders(h_hat, lam)
    return PrecoderSet(np.column_stack([w0, w]), n_tx)


def per_ap_norm_stats(precoders) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble means ``E{||w_{i,k}||^2}`` and the ``F_k`` diagonals.

    ``precoders`` is a sequence of :class:`PrecoderSet`. Returns
    ``(sq_norms, F)`` with shapes ``(n_ue + 1, n_tx)`` and ``(n_tx, n_ue + 1)``.
    """
    norms = np.stack([p.per_ap_sq_norms() for p in precoders])
    mean = norms.mean(axis=0)
    return mean, np.sqrt(mean).T


def ensemble_norm_stats(w, n_tx) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`per_ap_norm_stats` for a stacked ``(n_real, N, S)`` array."""
    n_real, N, S = w.shape
    sq = np.sum(np.abs(w.reshape(n_real, n_tx, N // n_tx, S)) ** 2, axis=2)
    mean = sq.mean(axis=0).T
    return mean, np.sqrt(mean).T
