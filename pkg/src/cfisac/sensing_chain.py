"""
Transmit signals, target reflections, clutter interference and received
sensing samples for one detection window.

Array conventions used throughout:

* symbols ``(tau, n_ue + 1)``, column 0 is the sensing stream;
* transmit signal ``x`` ``(tau, n_tx, M)``;
* reflection blocks ``g`` ``(tau, n_rx, M, n_tx)`` so that ``g[m, r]`` is ``G_r[m]``;
* RCS vector ``alpha`` ``(..., n_rx * n_tx)`` indexed ``r * n_tx + k``;
* clutter matrices ``H`` ``(..., n_rx, n_tx, M, M)``;
* received samples ``y`` ``(..., tau, n_rx, M)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .channel import complex_normal, hermitian_sqrt
from .precoding import PrecoderSet
from .scenario import NetworkGeometry, array_response, bistatic_gain


def draw_symbols(n_ue: int, tau: int, rng) -> np.ndarray:
    """Independent CN(0, 1) symbols for the sensing stream and every UE, ``(tau, n_ue + 1)``."""
    return complex_normal(rng, (tau, n_ue + 1))


def transmit_signal(precoders: PrecoderSet, rho, symbols) -> np.ndarray:
    """Per-AP transmit vectors ``x_k[m] = W_k D_s[m] sqrt(rho)``, shape ``(tau, n_tx, M)``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("power coefficients must be nonnegative")
    x = (np.asarray(symbols) * np.sqrt(rho)) @ precoders.w.T
    return x.reshape(x.shape[0], precoders.n_tx, precoders.m)


@dataclass(frozen=True)
class TargetLink:
    """Deterministic part of the reflected paths through the target location.

    ``beta`` (n_rx, n_tx) are noise-normalized bistatic gains, ``a_tx``
    (n_tx, M) the responses from each transmitter toward the target and
    ``a_rx`` (n_rx, M) those from the target toward each receiver.
    """

    beta: np.ndarray
    a_tx: np.ndarray
    a_rx: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.beta.size


def target_link(geometry: NetworkGeometry, m: int, carrier_freq: float, noise_variance: float = 1.0) -> TargetLink:
    beta = bistatic_gain(geometry.tx_target_distances[None, :], geometry.rx_target_distances[:, None], carrier_freq)
    a_tx = array_response(*geometry.tx_target_angles, m)
    a_rx = array_response(*geometry.target_rx_angles, m)
    return TargetLink(beta / noise_variance, a_tx, a_rx)


def known_reflection(link: TargetLink, x) -> np.ndarray:
    """``g_{r,k}[m] = sqrt(beta_rk) a_rx,r a_tx,k^T x_k[m]`` arranged as ``(tau, n_rx, M, n_tx)``."""
    proj = np.einsum("kp,mkp->mk", link.a_tx, np.asarray(x))
    return np.einsum("rk,rp,mk->mrpk", np.sqrt(link.beta), link.a_rx, proj)


@dataclass(frozen=True)
class SensingSnapshot:
    """Symbols, transmit vectors and known reflection blocks of one window."""

    symbols: np.ndarray
    x: np.ndarray
    g: np.ndarray

    @property
    def tau(self) -> int:
        return self.x.shape[0]

    @property
    def n_tx(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.x.shape[2]

    @property
    def n_rx(self) -> int:
        return self.g.shape[1]

    @property
    def x_stacked(self) -> np.ndarray:
        """``x[m]`` concatenated over APs, ``(tau, n_tx * M)``."""
        return self.x.reshape(self.tau, -1)

    def target_response(self, alpha) -> np.ndarray:
        """``G[m] alpha`` for a batch of RCS vectors, ``(..., tau, n_rx, M)``."""
        alpha = np.asarray(alpha)
        a = alpha.reshape(alpha.shape[:-1] + (self.n_rx, self.n_tx))
        return np.einsum("mrpk,...rk->...mrp", self.g, a)

    def clutter_response(self, clutter) -> np.ndarray:
        """``sum_k H_{r,k} x_k[m]`` for a batch of clutter matrices, ``(..., tau, n_rx, M)``."""
        return np.einsum("...rkpq,mkq->...mrp", clutter, self.x)

    def dense_g(self) -> np.ndarray:
        """``G[m]`` as dense block-diagonal matrices, ``(tau, n_rx M, n_rx n_tx)``."""
        return np.stack([block_diag(*self.g[m]) for m in range(self.tau)])

    def dense_x(self) -> np.ndarray:
        """``X[m] = I (x) (x^T[m] (x) I_M)``, ``(tau, n_rx M, n_rx n_tx M^2)``; oracle use only."""
        eye_m = np.eye(self.m)
        eye_r = np.eye(self.n_rx)
        return np.stack([np.kron(eye_r, np.kron(xm[None, :], eye_m)) for xm in self.x_stacked])


def build_snapshot(precoders: PrecoderSet, rho, symbols, link: TargetLink) -> SensingSnapshot:
    x = transmit_signal(precoders, rho, symbols)
    return SensingSnapshot(np.asarray(symbols), x, known_reflection(link, x))


def clutter_vector(clutter) -> np.ndarray:
    """Stack ``vec(H_{r,k})`` (column-major) receiver-major, transmitter-minor."""
    clutter = np.asarray(clutter)
    vecs = np.swapaxes(clutter, -1, -2)
    return vecs.reshape(clutter.shape[:-4] + (-1,))


def clutter_matrices(h, n_rx: int, n_tx: int, m: int) -> np.ndarray:
    """Inverse of :func:`clutter_vector`."""
    h = np.asarray(h)
    return np.swapaxes(h.reshape(h.shape[:-1] + (n_rx, n_tx, m, m)), -1, -2)


def sample_clutter(r_tx, r_rx, clutter_scale, rng, size=None) -> np.ndarray:
    """Target-free channels for all pairs, ``(*size, n_rx, n_tx, M, M)``."""
    n_rx, n_tx, m, _ = r_tx.shape
    batch = () if size is None else tuple(np.atleast_1d(size))
    w = complex_normal(rng, batch + (n_rx, n_tx, m, m))
    return np.sqrt(clutter_scale) * (hermitian_sqrt(r_rx) @ w @ np.swapaxes(hermitian_sqrt(r_tx), -1, -2))


def synthesize_received(snapshot: SensingSnapshot, hypothesis: int, alpha=None, clutter=None,
                        sigma2: float = 1.0, rng=None, noise=None) -> np.ndarray:
    """Received samples ``y[m] = G[m] alpha 1{H1} + X[m] h + n[m]``.

    ``clutter=None`` is the clutter-free (idealistic) world. Either ``rng`` or
    pre-drawn ``noise`` (already scaled) must be given unless ``sigma2 == 0``.
    Leading batch dimensions of ``alpha``, ``clutter`` and ``noise`` broadcast.
    """
    if hypothesis not in (0, 1):
        raise ValueError("hypothesis must be 0 or 1")
    shape = (snapshot.tau, snapshot.n_rx, snapshot.m)
    y = np.zeros(shape, dtype=complex)
    if hypothesis == 1:
        if alpha is None:
            raise ValueError("H1 needs an RCS draw")
        y = y + snapshot.target_response(alpha)
    if clutter is not None:
        y = y + snapshot.clutter_response(clutter)
    if noise is None and sigma2 > 0:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = np.sqrt(sigma2) * complex_normal(rng, y.shape)
    if noise is not None:
        y = y + noise
    return y
