"""
MAP ratio test for a target at a known location with unknown Gaussian RCS
and unknown Gaussian target-free (clutter) channels.

Both hypotheses maximize the joint posterior over the nuisance parameters,
which gives a quadratic form in the stacked observations. The dense,
textbook form (:func:`maprt_statistic`) works on explicit ``G[m]``/``X[m]``
matrices; :class:`MaprtDetector` precomputes the same statistic as a linear
map followed by a small Hermitian quadratic form, exploiting
``X^H X = I (x) (conj(x) x^T (x) I_M)`` so that ``X[m]`` is never formed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .sensing_chain import SensingSnapshot

CONDITION_WARNING = 1e12
Z_95 = 1.96


class CalibrationError(ValueError):
    """Too few H0 trials for the requested false-alarm probability."""


class ConditioningWarning(RuntimeWarning):
    """The Schur complement of the detector block matrix is ill-conditioned."""


def _herm(a):
    return (a + np.swapaxes(a.conj(), -1, -2)) / 2


def _hpd_inverse(a):
    a = _herm(a)
    try:
        c = cho_factor(a)
        return _herm(cho_solve(c, np.eye(a.shape[0])))
    except LinAlgError:
        return _herm(np.linalg.inv(a))


def log_c3(r_rcs) -> float:
    """``ln C_3 = -n ln(pi) - ln det(R_rcs)`` for the Gaussian RCS prior."""
    r_rcs = _herm(np.asarray(r_rcs))
    sign, logdet = np.linalg.slogdet(r_rcs)
    if sign.real <= 0:
        raise ValueError("R_rcs must be positive definite")
    return float(-r_rcs.shape[0] * np.log(np.pi) - logdet)


def _check_conditioning(matrix, what):
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > CONDITION_WARNING:
        warnings.warn(f"{what} has condition number {cond:.2e}", ConditioningWarning, stacklevel=3)


@dataclass(frozen=True)
class DetectorWorkspace:
    """Sufficient statistics and matrices of one window (dense form)."""

    a: np.ndarray
    b: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: float
    T: float
    ln_c3: float


def detector_workspace(y, G, X, R, r_rcs, sigma2) -> DetectorWorkspace:
    """Evaluate every term of the statistic from dense per-symbol matrices.

    Parameters
    ----------
    y : ndarray, shape (tau, n_obs)
    G : ndarray, shape (tau, n_obs, n_pairs)
    X : ndarray, shape (tau, n_obs, n_h)
    R, r_rcs : Hermitian positive definite priors of the clutter vector and RCS
    sigma2 : noise variance
    """
    y, G, X = (np.asarray(v) for v in (y, G, X))
    Gh = np.conj(np.swapaxes(G, -1, -2))
    Xh = np.conj(np.swapaxes(X, -1, -2))
    a = np.einsum("mij,mj->i", Gh, y)
    b = np.einsum("mij,mj->i", Xh, y)
    C = _herm(np.sum(Gh @ G, axis=0) + sigma2 * _hpd_inverse(r_rcs))
    D = _herm(np.sum(Xh @ X, axis=0) + sigma2 * _hpd_inverse(R))
    E = np.sum(Gh @ X, axis=0)
    F = float(np.sum(np.abs(y) ** 2))
    lc3 = log_c3(r_rcs)
    d_fac = cho_factor(D)
    schur = _herm(C - E @ cho_solve(d_fac, E.conj().T))
    _check_conditioning(schur, "Schur complement")
    u = a - E @ cho_solve(d_fac, b)
    quad = u.conj() @ np.linalg.solve(schur, u)
    T = lc3 + quad.real / sigma2
    return DetectorWorkspace(a, b, C, D, E, F, float(T), lc3)


def maprt_statistic(y, G, X, R, r_rcs, sigma2) -> float:
    """Clutter-aware statistic
    ``ln C3 + [a; b]^H ([[C, E], [E^H, D]]^{-1} - [[0, 0], [0, D^{-1}]]) [a; b] / sigma2``,
    evaluated through the Schur complement ``C - E D^{-1} E^H``.
    """
    return detector_workspace(y, G, X, R, r_rcs, sigma2).T


def sp_statistic(y, G, r_rcs, sigma2) -> float:
    """Clutter-unaware statistic ``ln C3 + a^H C^{-1} a / sigma2``."""
    y, G = np.asarray(y), np.asarray(G)
    Gh = np.conj(np.swapaxes(G, -1, -2))
    a = np.einsum("mij,mj->i", Gh, y)
    C = _herm(np.sum(Gh @ G, axis=0) + sigma2 * _hpd_inverse(r_rcs))
    return float(log_c3(r_rcs) + (a.conj() @ np.linalg.solve(C, a)).real / sigma2)


class QuadraticDetector:
    """Statistic of the form ``ln C3 + Re(u^H Q u) / sigma2`` with ``u = L y``.

    ``L`` has shape ``(n_pairs, tau, n_rx, M)`` and acts on received samples
    laid out as ``(..., tau, n_rx, M)``.
    """

    def __init__(self, L, info, r_rcs, sigma2):
        self.L = L
        self.info = info
        self.sigma2 = sigma2
        self.r_rcs = np.asarray(r_rcs)
        matrix = _herm(info + sigma2 * _hpd_inverse(self.r_rcs))
        _check_conditioning(matrix, "Schur complement")
        self.Q = _hpd_inverse(matrix)
        self.ln_c3 = log_c3(self.r_rcs)

    def with_rcs(self, r_rcs) -> "QuadraticDetector":
        """Same projection, different RCS prior (``L`` does not depend on it)."""
        return QuadraticDetector(self.L, self.info, r_rcs, self.sigma2)

    def project(self, y) -> np.ndarray:
        """``u = L y`` for samples ``(..., tau, n_rx, M)``."""
        return np.einsum("nmrp,...mrp->...n", self.L, y)

    def from_projection(self, u) -> np.ndarray:
        quad = np.einsum("...n,nl,...l->...", u.conj(), self.Q, u)
        return self.ln_c3 + quad.real / self.sigma2

    def __call__(self, y) -> np.ndarray:
        return self.from_projection(self.project(y))


class MaprtDetector(QuadraticDetector):
    """Structured evaluation of :func:`maprt_statistic` for a fixed window design.

    Parameters
    ----------
    snapshot : SensingSnapshot
    clutter_blocks : ndarray, shape (n_rx, n_tx, M^2, M^2)
        Covariances of ``vec(H_{r,k})``; the full clutter covariance is their
        block diagonal.
    r_rcs : ndarray, shape (n_pairs, n_pairs)
    sigma2 : float
    """

    def __init__(self, snapshot: SensingSnapshot, clutter_blocks, r_rcs, sigma2: float = 1.0):
        n_rx, n_tx, m, tau = snapshot.n_rx, snapshot.n_tx, snapshot.m, snapshot.tau
        x = snapshot.x_stacked
        r_rcs = np.asarray(r_rcs)
        clutter_blocks = np.asarray(clutter_blocks)
        gram_x = np.conj(x).T @ x  # sum_m conj(x[m]) x[m]^T
        xx_blocks = np.kron(gram_x, np.eye(m))
        schur = np.zeros((n_rx * n_tx, n_rx * n_tx), dtype=complex)
        L = np.empty((n_rx, n_tx, tau, n_rx, m), dtype=complex)
        L[:] = 0.0
        for r in range(n_rx):
            g_r = snapshot.g[:, r]  # (tau, M, n_tx)
            prior = np.zeros_like(xx_blocks)
            for k in range(n_tx):
                sl = slice(k * m * m, (k + 1) * m * m)
                prior[sl, sl] = _hpd_inverse(clutter_blocks[r, k])
            d_r = _herm(xx_blocks + sigma2 * prior)
            # E_r = sum_m kron(x[m]^T, G_r[m]^H)
            e_r = np.einsum("mj,mpn->njp", x, np.conj(g_r)).reshape(n_tx, -1)
            try:
                d_fac = cho_factor(d_r)
            except LinAlgError:
                raise np.linalg.LinAlgError("clutter information matrix is not positive definite") from None
            k_r = cho_solve(d_fac, e_r.conj().T).conj().T  # E_r D_r^{-1}
            sl = slice(r * n_tx, (r + 1) * n_tx)
            schur[sl, sl] = np.einsum("mpn,mpl->nl", np.conj(g_r), g_r) - k_r @ e_r.conj().T
            k3 = k_r.reshape(n_tx, n_tx * m, m)
            L[r, :, :, r, :] = np.transpose(np.conj(g_r), (2, 0, 1)) - np.einsum("njp,mj->nmp", k3, np.conj(x))
        super().__init__(L.reshape(n_rx * n_tx, tau, n_rx, m), _herm(schur), r_rcs, sigma2)


class SimpleDetector(QuadraticDetector):
    """Structured evaluation of :func:`sp_statistic`; ignores clutter entirely."""

    def __init__(self, snapshot: SensingSnapshot, r_rcs, sigma2: float = 1.0):
        n_rx, n_tx, m, tau = snapshot.n_rx, snapshot.n_tx, snapshot.m, snapshot.tau
        L = np.zeros((n_rx, n_tx, tau, n_rx, m), dtype=complex)
        C = np.zeros((n_rx * n_tx, n_rx * n_tx), dtype=complex)
        for r in range(n_rx):
            g_r = snapshot.g[:, r]
            L[r, :, :, r, :] = np.transpose(np.conj(g_r), (2, 0, 1))
            sl = slice(r * n_tx, (r + 1) * n_tx)
            C[sl, sl] = np.einsum("mpn,mpl->nl", np.conj(g_r), g_r)
        super().__init__(L.reshape(n_rx * n_tx, tau, n_rx, m), _herm(C), r_rcs, sigma2)


def _statistics(source, n_trials):
    if callable(source):
        if n_trials is None:
            raise ValueError("n_trials is required with a statistic generator")
        return np.asarray(source(n_trials), dtype=float)
    return np.asarray(source, dtype=float).ravel()


def calibrate_threshold(h0, p_fa: float, n_trials: int | None = None) -> float:
    """Empirical ``(1 - p_fa)`` quantile of H0 statistics (linear interpolation).

    ``h0`` is either an array of statistics or a callable ``n -> statistics``.
    """
    if not 0.0 < p_fa < 1.0:
        raise ValueError("p_fa must lie in (0, 1)")
    if n_trials is not None and n_trials < 10.0 / p_fa:
        raise CalibrationError(f"need at least {int(np.ceil(10 / p_fa))} H0 trials for p_fa={p_fa}")
    stats = _statistics(h0, n_trials)
    if stats.size < 10.0 / p_fa:
        raise CalibrationError(f"need at least {int(np.ceil(10 / p_fa))} H0 trials for p_fa={p_fa}")
    return float(np.quantile(stats, 1.0 - p_fa))


def detection_probability(h1, ln_lambda: float, n_trials: int | None = None) -> tuple[float, float]:
    """Fraction of statistics reaching the threshold and its 95% binomial halfwidth."""
    stats = _statistics(h1, n_trials)
    if stats.size == 0:
        raise ValueError("no trials")
    p = float(np.mean(stats >= ln_lambda))
    return p, binomial_halfwidth(p, stats.size)


def binomial_halfwidth(p, n, z: float = Z_95):
    return z * np.sqrt(p * (1.0 - p) / n)
