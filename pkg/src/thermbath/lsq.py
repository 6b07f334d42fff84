"""Projected Levenberg-Marquardt for box- and simplex-constrained least squares.

Minimizes ``0.5 * sum(((f(x) - y) / sigma)^2)`` subject to box bounds on every
parameter and, optionally, one group of parameters that must sum to one
(a probability simplex, possibly with per-entry caps).

Each iteration fixes the parameters sitting on a bound whose gradient points
outward, solves the damped normal equations in the remaining feasible
directions (sum-zero directions inside the simplex group), and projects the
trial point back onto the feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla


class InfeasibleError(ValueError):
    """Bounds and simplex constraint cannot be satisfied together."""


@dataclass
class LsqResult:
    x: np.ndarray
    chi2: float
    dof: int
    covariance: np.ndarray
    converged: bool
    n_iter: int
    message: str
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    rank_deficient: list = field(default_factory=list)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def project_capped_simplex(y: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                           total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x : lo <= x <= hi, sum x = total}``.

    Finds the shift ``mu`` with ``sum clip(y - mu, lo, hi) = total`` by bisection.
    """
    if lo.sum() > total + 1e-12 or hi.sum() < total - 1e-12:
        raise InfeasibleError(
            f"bounds allow sums in [{lo.sum():.6g}, {hi.sum():.6g}], which excludes {total}"
        )
    a = float(np.min(y - hi)) - 1.0
    b = float(np.max(y - lo)) + 1.0
    for _ in range(200):
        mu = 0.5 * (a + b)
        s = np.clip(y - mu, lo, hi).sum()
        if s > total:
            a = mu
        else:
            b = mu
        if b - a < 1e-15 * max(1.0, abs(mu)):
            break
    x = np.clip(y - 0.5 * (a + b), lo, hi)
    # distribute the residual bisection error over interior entries
    free = (x > lo) & (x < hi)
    if free.any():
        x[free] += (total - x.sum()) / free.sum()
        x = np.clip(x, lo, hi)
    return x


class _Problem:
    def __init__(self, fun, jac, y, sigma, lower, upper, simplex):
        self.fun, self.jac = fun, jac
        self.y = np.asarray(y, dtype=float)
        self.w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else np.ones_like(self.y)
        self.lower, self.upper = lower, upper
        self.simplex = simplex
        self.others = np.setdiff1d(np.arange(lower.size), simplex)

    def residual(self, x):
        return (self.fun(x) - self.y) * self.w

    def jacobian(self, x):
        return self.jac(x) * self.w[:, None]

    def project(self, x):
        x = x.copy()
        o = self.others
        x[o] = np.clip(x[o], self.lower[o], self.upper[o])
        if self.simplex.size:
            s = self.simplex
            x[s] = project_capped_simplex(x[s], self.lower[s], self.upper[s])
        return x

    def active_set(self, x, g, eps=1e-12):
        n = x.size
        span = np.maximum(1.0, np.abs(x))
        at_lo = x <= self.lower + eps * span
        at_hi = x >= self.upper - eps * span
        active = np.zeros(n, dtype=bool)
        o = self.others
        active[o] = (at_lo[o] & (g[o] > 0)) | (at_hi[o] & (g[o] < 0))
        s = self.simplex
        if s.size:
            fixed = np.zeros(s.size, dtype=bool)
            for _ in range(s.size):
                free = ~fixed
                if free.sum() <= 1:
                    fixed[:] = True
                    break
                gt = g[s] - g[s][free].mean()
                new = free & ((at_lo[s] & (gt > 0)) | (at_hi[s] & (gt < 0)))
                if not new.any():
                    break
                fixed |= new
            active[s] = fixed
        return active

    def basis(self, active):
        """Columns spanning the feasible directions given the active set."""
        n = active.size
        cols = []
        for i in self.others:
            if not active[i]:
                e = np.zeros(n)
                e[i] = 1.0
                cols.append(e)
        s = self.simplex
        if s.size:
            free = s[~active[s]]
            if free.size > 1:
                ns = sla.null_space(np.ones((1, free.size)))
                for k in range(ns.shape[1]):
                    e = np.zeros(n)
                    e[free] = ns[:, k]
                    cols.append(e)
        if not cols:
            return np.zeros((n, 0))
        return np.array(cols).T


def solve(fun: Callable, jac: Callable, x0: Sequence[float], y: Sequence[float], *,
          sigma: Sequence[float] | None = None, lower=None, upper=None,
          simplex: Sequence[int] = (), max_iter: int = 300, ftol: float = 1e-14,
          xtol: float = 1e-12, gtol: float = 1e-12, absolute_sigma: bool = True,
          rank_tol: float = 1e-10) -> LsqResult:
    """Constrained least squares fit of ``fun(x)`` to data ``y``.

    Parameters
    ----------
    fun, jac : callable
        Model values (shape ``(m,)``) and Jacobian (shape ``(m, n)``).
    sigma : array_like, optional
        Per-point standard deviations; residuals are divided by them.
    lower, upper : array_like, optional
        Box bounds (``-inf``/``inf`` default).
    simplex : sequence of int
        Parameter indices constrained to sum to one.
    absolute_sigma : bool
        If false, the covariance is scaled by the reduced chi-square.

    Returns
    -------
    LsqResult
        ``converged`` is false when ``max_iter`` is exhausted; ``x`` is then the
        best iterate.  ``rank_deficient`` lists parameters involved in
        directions the data do not constrain.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise InfeasibleError("lower bound exceeds upper bound")
    prob = _Problem(fun, jac, y, sigma, lower, upper, np.asarray(simplex, dtype=int))
    x = prob.project(x0)
    r = prob.residual(x)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        jw = prob.jacobian(x)
        g = jw.T @ r
        active = prob.active_set(x, g)
        z = prob.basis(active)
        if z.shape[1] == 0:
            converged, message = True, "all parameters fixed by constraints"
            break
        jz = jw @ z
        a = jz.T @ jz
        gz = z.T @ g
        if np.max(np.abs(gz)) <= gtol * max(1.0, cost) or cost == 0.0:
            converged, message = True, "gradient below tolerance"
            break
        dscale = np.maximum(np.diag(a), 1e-12 * max(1.0, np.max(np.diag(a))))
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(a + lam * np.diag(dscale), -gz)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            xt = prob.project(x + z @ step)
            rt = prob.residual(xt)
            ct = 0.5 * float(rt @ rt)
            if ct < cost:
                accepted = True
                break
            lam *= 5.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        dx = xt - x
        rel = (cost - ct) / max(cost, 1e-300)
        x, r, cost = xt, rt, ct
        lam = max(lam * 0.3, 1e-15)
        if rel < ftol and np.linalg.norm(dx) <= xtol * (np.linalg.norm(x) + xtol):
            converged, message = True, "converged"
            break
        if cost == 0.0:
            converged, message = True, "exact fit"
            break

    jw = prob.jacobian(x)
    g = jw.T @ r
    active = prob.active_set(x, g)
    z = prob.basis(active)
    chi2 = 2.0 * cost
    dof = prob.y.size - z.shape[1]
    cov = np.zeros((n, n))
    rank_def: list = []
    if z.shape[1]:
        jz = jw @ z
        a = jz.T @ jz
        evals, evecs = np.linalg.eigh(a)
        top = max(evals[-1], 1e-300)
        keep = evals > rank_tol * top
        inv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
        cov = z @ inv @ z.T
        for k in np.nonzero(~keep)[0]:
            comp = np.abs(z @ evecs[:, k])
            rank_def.extend(int(i) for i in np.nonzero(comp > 0.3 * comp.max())[0])
        rank_def = sorted(set(rank_def))
        if not absolute_sigma and dof > 0:
            cov *= chi2 / dof
    cov = 0.5 * (cov + cov.T)
    return LsqResult(x, chi2, dof, cov, converged, it, message, active, rank_def)
