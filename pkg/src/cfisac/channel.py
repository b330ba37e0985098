"""
Spatial correlation, correlated Rayleigh fading, target-free (clutter)
channels under the Kronecker model, and Swerling-I RCS draws.

Matrices are plain complex ndarrays. Channel gains produced by the
scenario-level builders are expressed relative to the noise power.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import block_diag

from .scenario import (
    ASD_AZIMUTH,
    ASD_ELEVATION,
    NetworkGeometry,
    ScenarioConfig,
    direction_angles,
    pathloss_umi,
    shadowing,
)

_GH_NODES, _GH_WEIGHTS = hermegauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2 * np.pi)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def hermitian_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root; negative eigenvalues from round-off are clipped."""
    matrix = np.asarray(matrix)
    sym = (matrix + np.swapaxes(matrix.conj(), -1, -2)) / 2
    vals, vecs = np.linalg.eigh(sym)
    vals = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * vals[..., None, :]) @ np.swapaxes(vecs.conj(), -1, -2)


def is_correlation_matrix(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    """Hermitian and PSD up to ``tol`` times the trace."""
    matrix = np.asarray(matrix)
    scale = max(abs(np.trace(matrix)), 1e-300)
    if np.max(np.abs(matrix - matrix.conj().T)) > 1e-12 * scale:
        return False
    return np.linalg.eigvalsh((matrix + matrix.conj().T) / 2).min() >= -tol * scale


def local_scattering_correlation(nominal_azimuth, nominal_elevation, asd, m, gain=1.0,
                                 asd_elevation=None):
    """Local scattering correlation matrix of a half-wavelength ULA.

    The azimuth and elevation deviations are independent Gaussians with
    standard deviations ``asd`` and ``asd_elevation`` (default: ``asd``).
    Entry ``(l, n)`` is ``gain * E{exp(j pi (l - n) sin(az) cos(el))}``,
    evaluated with 64x64-point Gauss-Hermite quadrature.

    Returns an ``(m, m)`` Hermitian PSD matrix with trace ``m * gain``.
    """
    if asd <= 0:
        raise ValueError("angular standard deviation must be positive")
    asd_el = asd if asd_elevation is None else asd_elevation
    az = nominal_azimuth + asd * _GH_NODES
    el = nominal_elevation + asd_el * _GH_NODES
    phase = np.outer(np.sin(az), np.cos(el))
    weights = np.outer(_GH_WEIGHTS, _GH_WEIGHTS)
    lags = np.arange(m)
    first_col = np.einsum("ij,dij->d", weights, np.exp(1j * np.pi * lags[:, None, None] * phase))
    diff = lags[:, None] - lags[None, :]
    corr = np.where(diff >= 0, first_col[np.abs(diff)], np.conj(first_col[np.abs(diff)]))
    return gain * corr


def sample_correlated_rayleigh(corr, rng, size=None):
    """Draw ``corr^{1/2} w`` with ``w ~ CN(0, I)``.

    ``corr`` may be a stack ``(..., M, M)``; ``size`` prepends batch dims,
    so the result has shape ``size + corr.shape[:-1]``.
    """
    sqrt = hermitian_sqrt(corr)
    shape = sqrt.shape[:-1] if size is None else tuple(np.atleast_1d(size)) + sqrt.shape[:-1]
    w = complex_normal(rng, shape)
    return np.einsum("...pq,...q->...p", sqrt, w)


def sample_target_free(r_tx, r_rx, clutter_scale, rng, size=None):
    """Kronecker-model clutter channel ``sqrt(s) R_rx^{1/2} W (R_tx^{1/2})^T``.

    ``vec`` of the result has covariance ``s * kron(R_tx, R_rx)``.
    """
    if not 0.0 < clutter_scale <= 1.0:
        raise ValueError("clutter_scale must lie in (0, 1]")
    m = r_rx.shape[-1]
    shape = (m, r_tx.shape[-1]) if size is None else tuple(np.atleast_1d(size)) + (m, r_tx.shape[-1])
    w = complex_normal(rng, shape)
    return np.sqrt(clutter_scale) * (hermitian_sqrt(r_rx) @ w @ hermitian_sqrt(r_tx).T)


def kronecker_covariance(r_tx, r_rx, clutter_scale=1.0):
    """Covariance of ``vec(H_{r,k})``: ``s * kron(R_tx, R_rx)``."""
    return clutter_scale * np.kron(r_tx, r_rx)


def assemble_clutter_correlation(blocks):
    """Block-diagonal clutter covariance.

    ``blocks`` is either a flat sequence already in receiver-major,
    transmitter-minor order or a nested ``[n_rx][n_tx]`` sequence.
    """
    flat = []
    for item in blocks:
        arr = np.asarray(item)
        if arr.ndim == 2:
            flat.append(arr)
        else:
            flat.extend(np.asarray(b) for b in arr.reshape((-1,) + arr.shape[-2:]))
    if not flat:
        raise ValueError("no clutter blocks given")
    size = flat[0].shape[0]
    for b in flat:
        if b.shape != (size, size):
            raise ValueError("clutter blocks must be square and of equal size")
    return block_diag(*flat)


def sample_rcs(r_rcs, rng, size=None):
    """Swerling-I RCS vector ``alpha ~ CN(0, R_rcs)``, one draw per detection window."""
    return sample_correlated_rayleigh(np.asarray(r_rcs), rng, size)


def rcs_covariance(rcs_variance_dbsm: float, n_pairs: int) -> np.ndarray:
    """Independent equal-variance RCS covariance ``sigma_rcs^2 I`` in m^2."""
    return 10.0 ** (rcs_variance_dbsm / 10.0) * np.eye(n_pairs)


def comm_correlations(geometry: NetworkGeometry, config: ScenarioConfig, rng) -> np.ndarray:
    """Noise-normalized AP-UE correlation matrices, shape ``(n_ue, n_tx, M, M)``.

    Large-scale gain is UMi path loss times independent log-normal shadowing.
    """
    m = config.m_antennas
    az, el = direction_angles(geometry.tx_positions[None, :, :], geometry.ue_positions[:, None, :])
    dist = np.linalg.norm(geometry.ue_positions[:, None, :] - geometry.tx_positions[None, :, :], axis=-1)
    gain = pathloss_umi(dist, config.carrier_freq) * shadowing(rng, dist.shape) / config.noise_variance
    out = np.empty(dist.shape + (m, m), dtype=complex)
    for i, k in np.ndindex(dist.shape):
        out[i, k] = local_scattering_correlation(az[i, k], el[i, k], ASD_AZIMUTH, m, gain[i, k], ASD_ELEVATION)
    return out


def clutter_correlations(geometry: NetworkGeometry, config: ScenarioConfig, rng):
    """Unscaled Kronecker factors of every target-free channel.

    Returns ``(r_tx, r_rx)``, each ``(n_rx, n_tx, M, M)``. The transmit side
    has unit gain (trace ``M``), the receive side carries the noise-normalized
    UMi gain with shadowing; the clutter scale is applied by the caller.
    """
    m = config.m_antennas
    tx = geometry.tx_positions[None, :, :]
    rx = geometry.rx_positions[:, None, :]
    az_tx, el_tx = direction_angles(tx, rx)
    az_rx, el_rx = direction_angles(rx, tx)
    dist = np.linalg.norm(rx - tx, axis=-1)
    gain = pathloss_umi(dist, config.carrier_freq) * shadowing(rng, dist.shape) / config.noise_variance
    r_tx = np.empty(dist.shape + (m, m), dtype=complex)
    r_rx = np.empty_like(r_tx)
    for r, k in np.ndindex(dist.shape):
        r_tx[r, k] = local_scattering_correlation(az_tx[r, k], el_tx[r, k], ASD_AZIMUTH, m, 1.0, ASD_ELEVATION)
        r_rx[r, k] = local_scattering_correlation(az_rx[r, k], el_rx[r, k], ASD_AZIMUTH, m, gain[r, k], ASD_ELEVATION)
    return r_tx, r_rx


def clutter_covariance(r_tx, r_rx, clutter_scale):
    """Full block-diagonal covariance of the stacked clutter vector."""
    n_rx, n_tx = r_tx.shape[:2]
    return assemble_clutter_correlation(
        [kronecker_covariance(r_tx[r, k], r_rx[r, k], clutter_scale) for r in range(n_rx) for k in range(n_tx)]
    )
