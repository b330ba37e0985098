"""
Sensing-SINR quadratic forms and power allocation.

Power coefficients are handled through ``rho_sqrt = [sqrt(rho_0), ...,
sqrt(rho_N)]``; the sensing SINR is a ratio of two quadratics in it. The
sensing-centric allocation maximizes that ratio under per-UE SINR and per-AP
power constraints with the concave-convex procedure, each step being a
second-order cone program solved by :mod:`cfisac.socp`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm_metrics import SinrCoefficients, downlink_sinr, sinr_soc_residual
from .precoding import PrecoderSet
from .sensing_chain import TargetLink
from .socp import solve_socp


class InfeasibleError(RuntimeError):
    """The communication SINR and per-AP power constraints cannot all hold."""

    def __init__(self, message, violated=()):
        super().__init__(message)
        self.violated = tuple(int(i) for i in violated)


@dataclass(frozen=True)
class SensingQuadratics:
    """``A_r``, ``B_r`` and the noise floor ``tau M N_rx sigma2`` of the sensing SINR."""

    A: np.ndarray
    B: np.ndarray
    noise: float

    def scaled(self, rcs_factor: float = 1.0, clutter: bool = True) -> "SensingQuadratics":
        """Rescale ``A`` (RCS variance) and optionally drop the clutter term."""
        B = self.B if clutter else np.zeros_like(self.B)
        return SensingQuadratics(self.A * rcs_factor, B, self.noise)


def symbol_gram(symbols) -> np.ndarray:
    """``S[i, j] = sum_m conj(s_i[m]) s_j[m]``."""
    s = np.asarray(symbols)
    return np.conj(s).T @ s


def build_quadratics(link: TargetLink, precoders: PrecoderSet, symbols, r_tx, r_rx, clutter_scale,
                     r_rcs, sigma2: float = 1.0) -> SensingQuadratics:
    """Real parts of the signal (``A``) and clutter (``B``) Gram matrices.

    ``r_tx``/``r_rx`` are the unscaled Kronecker factors ``(n_rx, n_tx, M, M)``;
    ``r_rcs`` is the full ``(n_pairs, n_pairs)`` RCS covariance of which only
    the per-receiver diagonal blocks contribute.
    """
    n_rx, n_tx = link.beta.shape
    w = precoders.per_ap()  # (n_tx, M, S)
    s_gram = symbol_gram(symbols)
    tau = np.asarray(symbols).shape[0]
    m = precoders.m
    r_rcs = np.asarray(r_rcs)
    steer = np.einsum("kp,kpi->ki", link.a_tx, w)  # a_k^T w_{i,k}
    A = np.zeros_like(s_gram)
    for r in range(n_rx):
        P = np.sqrt(link.beta[r])[:, None] * steer
        block = r_rcs[r * n_tx : (r + 1) * n_tx, r * n_tx : (r + 1) * n_tx]
        gain = np.real(np.vdot(link.a_rx[r], link.a_rx[r]))
        A += gain * (P.conj().T @ block.T @ P)
    A = A * s_gram
    inner = np.einsum("rk,rkqp,kqi->kpi", np.real(np.trace(r_rx, axis1=-2, axis2=-1)), r_tx, w)
    B = clutter_scale * np.einsum("kqi,kqj->ij", np.conj(w), inner) * s_gram
    A = np.real(A + A.conj().T) / 2
    B = np.real(B + B.conj().T) / 2
    return SensingQuadratics(A, B, float(tau * m * n_rx * sigma2))


def sensing_sinr(rho_sqrt, quad: SensingQuadratics) -> float:
    rho_sqrt = np.asarray(rho_sqrt, dtype=float)
    if np.any(rho_sqrt < 0):
        raise ValueError("rho_sqrt must be nonnegative")
    return float(rho_sqrt @ quad.A @ rho_sqrt / (quad.noise + rho_sqrt @ quad.B @ rho_sqrt))


def objective_hessian(A, rho_sqrt, t) -> np.ndarray:
    """Hessian of ``f(rho, t) = rho^T A rho / t`` in the variables ``[rho; t]``."""
    A = np.asarray(A)
    rho_sqrt = np.asarray(rho_sqrt, dtype=float)
    g = A @ rho_sqrt
    n = rho_sqrt.size
    H = np.empty((n + 1, n + 1))
    H[:n, :n] = 2.0 * A / t
    H[:n, n] = H[n, :n] = -2.0 * g / t**2
    H[n, n] = 2.0 * rho_sqrt @ g / t**3
    return H


def hessian_psd_check(quad: SensingQuadratics, samples: int = 10_000, rng=None, tol: float = 1e-9):
    """Randomized probe of ``d^T H d >= 0`` for the objective Hessian.

    For random ``(rho, t)`` and directions ``(rho_bar, t_bar)`` evaluates
    ``2 (rho_bar - (t_bar/t) rho)^T A (rho_bar - (t_bar/t) rho) / t``.
    Returns ``(passed, smallest value)``.
    """
    rng = np.random.default_rng(rng)
    n = quad.A.shape[0]
    rho = rng.exponential(size=(samples, n))
    rho_bar = rng.standard_normal((samples, n))
    t = rng.uniform(0.1, 10.0, samples) * max(quad.noise, 1e-12)
    t_bar = rng.standard_normal(samples) * t
    d = rho_bar - (t_bar / t)[:, None] * rho
    vals = 2.0 * np.einsum("si,ij,sj->s", d, quad.A, d) / t
    scale = np.maximum(1.0, np.einsum("si,si->s", d, d) * np.abs(quad.A).max() / t)
    low = float(np.min(vals / scale))
    return low >= -tol, low


def ap_powers(rho_sqrt, F) -> np.ndarray:
    """Per-AP transmit powers ``P_k = sum_i rho_i E{||w_{i,k}||^2}``."""
    return (np.asarray(F) ** 2) @ (np.asarray(rho_sqrt, dtype=float) ** 2)


@dataclass(frozen=True)
class PowerSolution:
    rho_sqrt: np.ndarray
    t: float
    sensing_sinr: float
    comm_sinr: np.ndarray
    ap_powers: np.ndarray
    iterations: int
    converged: bool
    history: tuple = field(default=())
    deltas: tuple = field(default=())

    @property
    def rho(self) -> np.ndarray:
        return self.rho_sqrt**2

    @property
    def total_power(self) -> float:
        return float(np.sum(self.rho))


class _ConeBuilder:
    """Accumulates rows of ``G x + s = h`` with orthant rows first."""

    def __init__(self, n_vars):
        self.n = n_vars
        self.lin_g, self.lin_h = [], []
        self.soc = []

    def linear(self, g_row, h):
        self.lin_g.append(np.asarray(g_row, dtype=float))
        self.lin_h.append(float(h))

    def cone(self, g_rows, h):
        self.soc.append((np.atleast_2d(np.asarray(g_rows, dtype=float)), np.asarray(h, dtype=float)))

    def build(self):
        gs = list(self.lin_g) + [g for g, _ in self.soc]
        hs = [np.array(self.lin_h)] + [h for _, h in self.soc]
        G = np.vstack([np.reshape(g, (-1, self.n)) for g in gs])
        h = np.concatenate(hs)
        return G, h, {"l": len(self.lin_g), "q": [g.shape[0] for g, _ in self.soc]}


def _add_comm_constraints(cb: _ConeBuilder, idx, coeffs: SinrCoefficients, F, gamma_c, p_tx, margin_col=None):
    """Nonnegativity, per-UE SINR cones and per-AP power cones on ``rho_sqrt[idx]``."""
    n_act = len(idx)
    for j in range(n_act):
        row = np.zeros(cb.n)
        row[j] = -1.0
        cb.linear(row, 0.0)
    pos = {s: j for j, s in enumerate(idx)}
    for i in range(coeffs.n_ue):
        rows = np.zeros((n_act + 2, cb.n))
        rows[0, pos[i + 1]] = -coeffs.b[i] / np.sqrt(gamma_c)
        if margin_col is not None:
            rows[0, margin_col] = 1.0
        for j, s in enumerate(idx):
            rows[1 + j, j] = -coeffs.a[i, s]
        h = np.zeros(n_act + 2)
        h[-1] = coeffs.sigma
        cb.cone(rows, h)
    for k in range(F.shape[0]):
        rows = np.zeros((n_act + 1, cb.n))
        for j, s in enumerate(idx):
            rows[1 + j, j] = -F[k, s]
        h = np.zeros(n_act + 1)
        h[0] = np.sqrt(p_tx)
        cb.cone(rows, h)


def _expand(x_act, idx, size):
    full = np.zeros(size)
    full[idx] = np.clip(x_act, 0.0, None)
    return full


def feasibility_margin(coeffs: SinrCoefficients, F, gamma_c, p_tx, sensing_beam=True):
    """Max-min SOC margin ``u*`` over the power-feasible set and its maximizer.

    ``u* >= 0`` iff all SINR targets are jointly attainable.
    """
    F = np.asarray(F)
    size = coeffs.n_ue + 1
    idx = list(range(size)) if sensing_beam else list(range(1, size))
    n_act = len(idx)
    cb = _ConeBuilder(n_act + 1)
    _add_comm_constraints(cb, idx, coeffs, F, gamma_c, p_tx, margin_col=n_act)
    G, h, dims = cb.build()
    c = np.zeros(n_act + 1)
    c[-1] = -1.0
    sol = solve_socp(c, G, h, dims)
    return float(sol.x[-1]), _expand(sol.x[:n_act], idx, size)


def initial_point(coeffs: SinrCoefficients, F, gamma_c, p_tx, sensing_beam=True) -> np.ndarray:
    """Positive, feasible starting ``rho_sqrt``.

    Uniform powers at half the per-AP budget are tried first; when they miss
    an SINR target, the max-min margin point is blended toward them as far
    as feasibility allows.
    """
    F = np.asarray(F)
    size = coeffs.n_ue + 1
    active = np.ones(size, dtype=bool)
    active[0] = sensing_beam
    peak = np.max(F**2, axis=0)
    rho = np.where(active, p_tx / (2.0 * size * np.where(peak > 0, peak, 1.0)), 0.0)
    uniform = np.sqrt(rho)
    if coeffs.n_ue == 0 or np.all(sinr_soc_residual(uniform, coeffs, gamma_c) >= 0):
        return uniform
    u_star, best = feasibility_margin(coeffs, F, gamma_c, p_tx, sensing_beam)
    if u_star < -1e-9 * max(1.0, coeffs.sigma):
        violated = np.flatnonzero(sinr_soc_residual(best, coeffs, gamma_c) < 0)
        raise InfeasibleError(f"SINR targets unattainable (max-min margin {u_star:.3e})", violated)
    theta = 0.5
    while theta > 1e-6:
        cand = (1.0 - theta) * best + theta * uniform
        if np.all(sinr_soc_residual(cand, coeffs, gamma_c) >= 0):
            return cand
        theta /= 2.0
    return best


def _make_solution(rho_sqrt, quad, coeffs, F, iterations, converged, history=(), deltas=()):
    t = quad.noise + rho_sqrt @ quad.B @ rho_sqrt if quad is not None else np.nan
    s_sinr = sensing_sinr(rho_sqrt, quad) if quad is not None else np.nan
    comm = downlink_sinr(rho_sqrt**2, coeffs) if coeffs.n_ue else np.zeros(0)
    return PowerSolution(rho_sqrt, float(t), s_sinr, comm, ap_powers(rho_sqrt, F), iterations, converged,
                         tuple(history), tuple(deltas))


def ccp_solve(quad: SensingQuadratics, coeffs: SinrCoefficients, F, gamma_c, p_tx, *, sensing_beam=True,
              epsilon=1e-4, max_iters=50, rho_init=None) -> PowerSolution:
    """Sensing-SINR maximization by the concave-convex procedure.

    Each iteration maximizes the first-order lower bound of
    ``rho^T A rho / t`` around the previous iterate subject to
    ``noise + rho^T B rho <= t``, the SINR cones and the per-AP power cones;
    it stops once the bound's improvement drops to ``epsilon``. An iterate
    whose SINR falls below its predecessor (a solver round-off artifact) is
    rejected and the loop ends.
    """
    F = np.asarray(F)
    size = coeffs.n_ue + 1
    idx = list(range(size)) if sensing_beam else list(range(1, size))
    n_act = len(idx)
    if rho_init is None:
        rho = initial_point(coeffs, F, gamma_c, p_tx, sensing_beam)
    else:
        rho = np.asarray(rho_init, dtype=float).copy()
        if not sensing_beam:
            rho[0] = 0.0
    A = quad.A[np.ix_(idx, idx)]
    B = quad.B[np.ix_(idx, idx)]
    vals, vecs = np.linalg.eigh(B)
    keep = vals > 1e-12 * max(vals.max(initial=0.0), 1e-300)
    L = vecs[:, keep] * np.sqrt(vals[keep])  # B = L L^T
    with_t = L.shape[1] > 0

    t = quad.noise + rho @ quad.B @ rho
    f = rho @ quad.A @ rho / t
    history = [f]
    deltas = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        rp = rho[idx]
        g = A @ rp / t
        n_vars = n_act + int(with_t)
        cb = _ConeBuilder(n_vars)
        _add_comm_constraints(cb, idx, coeffs, F, gamma_c, p_tx)
        c = np.zeros(n_vars)
        c[:n_act] = -2.0 * g
        if with_t:
            # t = noise + kappa^2 v; rotated cone ||L^T rho||^2 <= kappa^2 v
            kappa = np.sqrt(max(t - quad.noise, 1e-12 * t))
            rows = np.zeros((L.shape[1] + 2, n_vars))
            rows[0, -1] = -1.0
            rows[1:-1, :n_act] = -2.0 * L.T / kappa
            rows[-1, -1] = -1.0
            h = np.zeros(L.shape[1] + 2)
            h[0] = 1.0
            h[-1] = -1.0
            cb.cone(rows, h)
            c[-1] = f / t * kappa**2
        G, h, dims = cb.build()
        sol = solve_socp(c, G, h, dims)
        new = _expand(sol.x[:n_act], idx, size)
        t_new = quad.noise + new @ quad.B @ new
        f_new = new @ quad.A @ new / t_new
        delta = (2.0 * (new - rho) - (t_new - t) / t * rho) @ quad.A @ rho / t
        if f_new < f:
            converged = True
            break
        deltas.append(float(delta))
        rho, t, f = new, t_new, f_new
        history.append(f)
        if delta <= epsilon:
            converged = True
            break
    return _make_solution(rho, quad, coeffs, F, it, converged, history, deltas)


def comm_centric_solve(coeffs: SinrCoefficients, F, gamma_c, p_tx, quad: SensingQuadratics | None = None
                       ) -> PowerSolution:
    """Minimum total power meeting every SINR target and per-AP budget (no sensing beam).

    The cone program's optimum has every SINR constraint active, so it is
    polished with the exact solution of the resulting linear system when that
    solution is nonnegative, power-feasible and not costlier.
    """
    F = np.asarray(F)
    size = coeffs.n_ue + 1
    if coeffs.n_ue == 0:
        return _make_solution(np.zeros(size), quad, coeffs, F, 0, True)
    initial_point(coeffs, F, gamma_c, p_tx, sensing_beam=False)  # raises if infeasible
    idx = list(range(1, size))
    n_act = len(idx)
    cb = _ConeBuilder(n_act + 1)
    _add_comm_constraints(cb, idx, coeffs, F, gamma_c, p_tx)
    rows = np.zeros((n_act + 1, n_act + 1))
    rows[0, -1] = -1.0
    rows[1:, :n_act] = -np.eye(n_act)
    cb.cone(rows, np.zeros(n_act + 1))
    G, h, dims = cb.build()
    c = np.zeros(n_act + 1)
    c[-1] = 1.0
    sol = solve_socp(c, G, h, dims)
    rho = _expand(sol.x[:n_act], idx, size)

    system = np.diag(coeffs.b**2 / gamma_c) - coeffs.a[:, 1:] ** 2
    try:
        exact = np.linalg.solve(system, np.full(coeffs.n_ue, coeffs.sigma**2))
    except np.linalg.LinAlgError:
        exact = None
    if exact is not None and np.all(exact >= 0):
        cand = np.concatenate([[0.0], np.sqrt(exact)])
        if np.all(ap_powers(cand, F) <= p_tx * (1 + 1e-9)) and exact.sum() <= np.sum(rho**2) * (1 + 1e-6):
            rho = cand
    return _make_solution(rho, quad, coeffs, F, sol.iterations, sol.status == "optimal")
