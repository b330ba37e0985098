"""
Primal-dual interior-point solver for small second-order cone programs.

Problems are in the standard conic form::

    minimize    c^T x
    subject to  G x + s = h,   s in K

where ``K`` is the product of a nonnegative orthant (the first ``dims['l']``
rows) and second-order cones ``{(u0, u1) : u0 >= ||u1||}`` whose sizes are
listed in ``dims['q']``. The method is an infeasible-start path-following
scheme with Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
``G`` must have full column rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


class SolverError(RuntimeError):
    """The interior-point iteration broke down."""


@dataclass(frozen=True)
class ConeSolution:
    """Primal/dual iterate returned by :func:`solve_socp`."""

    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float


class ConeProduct:
    """Jordan-algebra operations on the product cone described by ``dims``.

    Second-order cones of equal size are processed together as the rows of
    an index matrix, which keeps the per-iteration Python overhead low.
    """

    def __init__(self, dims):
        self.l = int(dims.get("l", 0))
        self.q = [int(n) for n in dims.get("q", [])]
        if any(n < 1 for n in self.q):
            raise ValueError("second-order cone sizes must be >= 1")
        starts = np.cumsum([self.l] + self.q[:-1]) if self.q else np.zeros(0, dtype=int)
        self.size = self.l + sum(self.q)
        self.degree = self.l + len(self.q)
        self.groups = []
        for n in sorted(set(self.q)):
            first = np.array([st for st, qn in zip(starts, self.q) if qn == n], dtype=int)
            self.groups.append(first[:, None] + np.arange(n))

    def identity(self):
        e = np.zeros(self.size)
        e[: self.l] = 1.0
        for g in self.groups:
            e[g[:, 0]] = 1.0
        return e

    def product(self, u, v):
        out = np.empty(self.size)
        out[: self.l] = u[: self.l] * v[: self.l]
        for g in self.groups:
            ub, vb = u[g], v[g]
            out[g[:, 0]] = np.sum(ub * vb, axis=1)
            out[g[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def inv_product(self, lam, d):
        """Solve ``lam o x = d`` for ``x`` (``lam`` strictly interior)."""
        out = np.empty(self.size)
        out[: self.l] = d[: self.l] / lam[: self.l]
        for g in self.groups:
            lb, db = lam[g], d[g]
            det = lb[:, 0] ** 2 - np.sum(lb[:, 1:] ** 2, axis=1)
            x0 = (lb[:, 0] * db[:, 0] - np.sum(lb[:, 1:] * db[:, 1:], axis=1)) / det
            out[g[:, 0]] = x0
            out[g[:, 1:]] = (db[:, 1:] - x0[:, None] * lb[:, 1:]) / lb[:, :1]
        return out

    def min_eig(self, u):
        """Smallest Jordan eigenvalue; positive iff ``u`` is strictly interior."""
        vals = [np.min(u[: self.l])] if self.l else []
        for g in self.groups:
            ub = u[g]
            vals.append(np.min(ub[:, 0] - np.linalg.norm(ub[:, 1:], axis=1)))
        return min(vals) if vals else np.inf

    def max_step(self, u, d):
        """Largest ``alpha >= 0`` with ``u + alpha d`` in the cone (``inf`` if unbounded)."""
        alpha = np.inf
        if self.l:
            neg = d[: self.l] < 0
            if neg.any():
                alpha = np.min(-u[: self.l][neg] / d[: self.l][neg])
        for g in self.groups:
            alpha = min(alpha, _soc_steps(u[g], d[g]))
        return alpha


def _soc_steps(u, d):
    """Smallest boundary-crossing step over a stack of cones (rows)."""
    if u.shape[1] == 1:
        neg = d[:, 0] < 0
        return np.min(-u[neg, 0] / d[neg, 0]) if neg.any() else np.inf
    qa = d[:, 0] ** 2 - np.sum(d[:, 1:] ** 2, axis=1)
    qb = 2.0 * (u[:, 0] * d[:, 0] - np.sum(u[:, 1:] * d[:, 1:], axis=1))
    qc = u[:, 0] ** 2 - np.sum(u[:, 1:] ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = qb * qb - 4.0 * qa * qc
        sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
        q = -0.5 * (qb + np.copysign(sq, qb))
        r1 = np.where((disc >= 0) & (qa != 0), q / qa, np.inf)
        r2 = np.where((disc >= 0) & (q != 0), qc / q, np.inf)
        lin = np.where((qa == 0) & (qb < 0), -qc / qb, np.inf)
    roots = np.stack([r1, r2, lin])
    roots = np.where(roots > 0, roots, np.inf)
    return float(np.min(roots)) if roots.size else np.inf


class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lambda``."""

    def __init__(self, cones: ConeProduct, s, z):
        self.cones = cones
        l = cones.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.beta = []
        self.v = []
        for g in cones.groups:
            sb, zb = s[g], z[g]
            js = sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1)
            jz = zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1)
            if np.any(js <= 0) or np.any(jz <= 0):
                raise SolverError("iterate left the cone interior")
            sbar = sb / np.sqrt(js)[:, None]
            zbar = zb / np.sqrt(jz)[:, None]
            gamma = np.sqrt((1.0 + np.sum(sbar * zbar, axis=1)) / 2.0)
            wbar = sbar.copy()
            wbar[:, 0] += zbar[:, 0]
            wbar[:, 1:] -= zbar[:, 1:]
            wbar /= 2.0 * gamma[:, None]
            v = wbar.copy()
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * (wbar[:, 0] + 1.0))[:, None]
            self.beta.append((js / jz) ** 0.25)
            self.v.append(v)

    def apply(self, u, inverse=False):
        """``W u`` (or ``W^{-1} u``); ``u`` may be a vector or a matrix of columns."""
        out = np.empty_like(u)
        l = self.cones.l
        out[:l] = (u[:l].T / self.d).T if inverse else (u[:l].T * self.d).T
        for g, beta, v in zip(self.cones.groups, self.beta, self.v):
            ub = u[g]  # (n_cones, size[, cols])
            ju = ub.copy()
            ju[:, 1:] = -ju[:, 1:]
            vv = v.copy()
            if inverse:
                vv[:, 1:] = -vv[:, 1:]
            if u.ndim == 1:
                res = 2.0 * vv * np.sum(vv * ub, axis=1)[:, None] - ju
                scale = (1.0 / beta if inverse else beta)[:, None]
            else:
                res = 2.0 * vv[:, :, None] * np.einsum("cs,csk->ck", vv, ub)[:, None, :] - ju
                scale = (1.0 / beta if inverse else beta)[:, None, None]
            out[g] = scale * res
        return out


def _row_scales(G, cones: ConeProduct):
    """Positive row weights that keep the cone invariant and equilibrate ``G``."""
    norms = np.linalg.norm(G, axis=1)
    scale = np.ones(G.shape[0])
    lp = norms[: cones.l]
    scale[: cones.l] = np.where(lp > 0, 1.0 / np.where(lp > 0, lp, 1.0), 1.0)
    for g in cones.groups:
        top = norms[g].max(axis=1)
        scale[g] = np.where(top > 0, 1.0 / np.where(top > 0, top, 1.0), 1.0)[:, None]
    return scale


def solve_socp(c, G, h, dims, *, feastol=1e-9, abstol=1e-10, reltol=1e-9, max_iters=100) -> ConeSolution:
    """Solve a conic program over the orthant/second-order-cone product.

    Parameters
    ----------
    c : array_like, shape (n,)
    G : array_like, shape (m, n)
    h : array_like, shape (m,)
    dims : dict
        ``{'l': int, 'q': [int, ...]}``; rows of ``G``/``h`` follow this order.

    Returns
    -------
    ConeSolution
        ``status`` is ``'optimal'`` when the residual and gap tolerances are
        met and ``'max_iters'`` otherwise.
    """
    c = np.asarray(c, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float)
    cones = ConeProduct(dims)
    if G.shape != (cones.size, c.size) or h.shape != (cones.size,):
        raise ValueError("inconsistent problem dimensions")

    rows = _row_scales(G, cones)
    G = G * rows[:, None]
    h = h * rows
    c_norm = max(np.linalg.norm(c), 1e-300)
    c = c / c_norm
    e = cones.identity()
    h_norm = max(1.0, np.linalg.norm(h))

    # least-squares start, shifted into the cone interior
    try:
        gram = cho_factor(G.T @ G)
    except LinAlgError:
        raise SolverError("constraint matrix is rank deficient") from None
    x = cho_solve(gram, G.T @ h - c)
    s = h - G @ x
    z = -s.copy()
    for vec in (s, z):
        shift = -cones.min_eig(vec)
        if shift >= -1e-8 * max(np.linalg.norm(vec), 1.0):
            vec += (1.0 + shift) * e

    status = "max_iters"
    it = 0
    for it in range(max_iters + 1):
        rx = G.T @ z + c
        rz = s + G @ x - h
        gap = s @ z
        pcost = c @ x
        dcost = -h @ z
        pres = np.linalg.norm(rz) / h_norm
        dres = np.linalg.norm(rx)
        relgap = gap / abs(pcost) if pcost < 0 else (gap / abs(dcost) if dcost > 0 else np.inf)
        if pres <= feastol and dres <= feastol and (gap <= abstol or relgap <= reltol):
            status = "optimal"
            break
        if it == max_iters:
            break

        W = NTScaling(cones, s, z)
        lam = W.apply(z)
        Gh = W.apply(G, inverse=True)
        try:
            normal = cho_factor(Gh.T @ Gh)
        except LinAlgError:
            raise SolverError("singular Newton system") from None

        def newton(ds):
            dt = cones.inv_product(lam, ds)
            wrz = W.apply(rz, inverse=True) + dt
            dx = cho_solve(normal, -rx - Gh.T @ wrz)
            wdz = Gh @ dx + wrz  # = W dz
            dz = W.apply(wdz, inverse=True)
            wds = dt - wdz  # = W^{-1} ds
            return dx, dz, W.apply(wds), wds, wdz

        lam_sq = cones.product(lam, lam)
        dx, dz, ds, wds, wdz = newton(-lam_sq)
        step = min(cones.max_step(lam, wds), cones.max_step(lam, wdz))
        alpha_aff = min(1.0, step)
        sigma = (1.0 - alpha_aff) ** 3
        mu = gap / cones.degree

        corr = -lam_sq - cones.product(wds, wdz) + sigma * mu * e
        dx, dz, ds, wds, wdz = newton(corr)
        step = min(cones.max_step(lam, wds), cones.max_step(lam, wdz))
        alpha = min(1.0, 0.99 * step)
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz

    return ConeSolution(
        x=x,
        s=s / rows,
        z=z * rows * c_norm,
        status=status,
        iterations=it,
        primal_objective=float(c @ x * c_norm),
        dual_objective=float(-h @ z * c_norm),
        gap=float(s @ z * c_norm),
        primal_residual=float(np.linalg.norm(s + G @ x - h) / h_norm),
        dual_residual=float(np.linalg.norm(G.T @ z + c)),
    )
