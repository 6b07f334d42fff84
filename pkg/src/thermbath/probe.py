"""Blue-sideband thermometry: signal synthesis and population fits.

The probe signal for Fock populations ``p_n`` is

``P_up(t) = 1/2 sum_n p_n [1 - exp(-gamma_d t) cos(Omega t sqrt(n+1))]``.

Fits use the constrained Levenberg-Marquardt core in :mod:`thermbath.lsq`.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import lsq
from .hilbert import thermal_populations
from .lindblad import TimeSeries

DEFAULT_SHOTS = 200
DEFAULT_POINTS = 25
DEFAULT_CONSTRAINT_SCALE = 500.0
RELIABLE_NBAR = 3.0


class FitError(RuntimeError):
    """Raised for unusable inputs to a fit."""


@dataclass
class ProbeSignal:
    """Probe durations, spin-up probabilities and optional per-point sigma."""

    t_p: np.ndarray
    p_up: np.ndarray
    sigma: np.ndarray | None = None
    shots: int | None = None

    def __post_init__(self):
        self.t_p = np.asarray(self.t_p, dtype=float)
        self.p_up = np.asarray(self.p_up, dtype=float)
        if self.t_p.shape != self.p_up.shape or self.t_p.ndim != 1:
            raise ValueError("t_p and p_up must be 1-D arrays of equal length")
        if self.t_p.size > 1 and np.any(np.diff(self.t_p) <= 0):
            raise ValueError("probe durations must be increasing")
        if np.any(self.p_up < -1e-12) or np.any(self.p_up > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.t_p.shape or np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive with one entry per point")

    def to_csv_text(self, time_unit: str = "us") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"t_p [{time_unit}]", "p_up [1]", "sigma [1]"])
        sig = self.sigma if self.sigma is not None else np.full(self.t_p.size, np.nan)
        for row in zip(self.t_p, self.p_up, sig):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


@dataclass
class ThermalFit:
    n_ave: float
    omega_rabi: float
    gamma_d: float
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def n_ave_sigma(self) -> float:
        return float(math.sqrt(max(self.covariance[0, 0], 0.0)))


@dataclass
class PopulationEstimate:
    p_n: np.ndarray
    covariance: np.ndarray
    nbar_mean: float
    nbar_sigma: float
    omega_rabi: float
    gamma_d: float
    chi2: float
    dof: int
    converged: bool
    active_constraints: list = field(default_factory=list)
    rank_deficient: list = field(default_factory=list)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def reliable(self) -> bool:
        """Free fits above ``RELIABLE_NBAR`` quanta pick up spurious high-n weight."""
        return self.nbar_mean <= RELIABLE_NBAR


@dataclass
class RateEstimate:
    rate: float
    sigma: float
    mode: str
    params: dict = field(default_factory=dict)


def _check_simplex(p: np.ndarray) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p_n must be a non-empty 1-D array")
    if np.any(p < -1e-12):
        raise ValueError("populations must be non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"populations sum to {p.sum():.8g}, not 1")


def bsb_model(p_n, omega_rabi: float, gamma_d: float, t_p) -> np.ndarray:
    """Exact noiseless signal on ``t_p``."""
    p = np.asarray(p_n, dtype=float)
    t = np.asarray(t_p, dtype=float)
    root = np.sqrt(np.arange(p.size) + 1.0)
    return 0.5 * (1.0 - np.exp(-gamma_d * t)[:, None] * np.cos(np.outer(t, root) * omega_rabi)) @ p


def probe_grid(omega_rabi: float, n_points: int = DEFAULT_POINTS, span: float = 10 * math.pi) -> np.ndarray:
    """Uniform probe durations with ``omega_rabi * max(t_p) = span``."""
    return np.linspace(span / omega_rabi / n_points, span / omega_rabi, n_points)


def bsb_signal(p_n, omega_rabi: float, gamma_d: float, t_p_grid, *, shots: int | None = None,
               seed=None, omega_jitter: float = 0.0) -> ProbeSignal:
    """Blue-sideband signal, exact or with binomial shot noise.

    Parameters
    ----------
    shots : int, optional
        Repetitions per probe duration; enables binomial sampling and fills
        ``sigma`` with ``sqrt(q (1-q) / shots)``, ``q = (k+1)/(shots+2)``.
    omega_jitter : float
        Relative Gaussian jitter of the Rabi frequency, drawn per point
        (models probe power and trap-frequency fluctuations).
    """
    p = np.asarray(p_n, dtype=float)
    _check_simplex(p)
    if omega_rabi <= 0 or gamma_d < 0:
        raise ValueError("omega_rabi must be positive and gamma_d non-negative")
    t = np.asarray(t_p_grid, dtype=float)
    rng = np.random.default_rng(seed)
    if omega_jitter > 0:
        om = omega_rabi * (1.0 + omega_jitter * rng.standard_normal(t.size))
        root = np.sqrt(np.arange(p.size) + 1.0)
        vals = 0.5 * (1.0 - np.exp(-gamma_d * t)[:, None] * np.cos(np.outer(om * t, root))) @ p
    else:
        vals = bsb_model(p, omega_rabi, gamma_d, t)
    vals = np.clip(vals, 0.0, 1.0)
    if shots is None:
        return ProbeSignal(t, vals)
    k = rng.binomial(int(shots), vals)
    q = (k + 1.0) / (shots + 2.0)
    return ProbeSignal(t, k / shots, np.sqrt(q * (1.0 - q) / shots), int(shots))


# --- thermal fit ---------------------------------------------------------------

def _thermal_levels(nbar_max: float, tail: float = 1e-12) -> int:
    if nbar_max <= 0:
        return 2
    return max(2, math.ceil(math.log(tail) / math.log(nbar_max / (nbar_max + 1.0))))


def _thermal_model(n_levels, t):
    n = np.arange(n_levels)
    root = np.sqrt(n + 1.0)

    def pops(nb):
        return thermal_populations(max(nb, 0.0), n_levels)

    def fun(x):
        nb, om, gd = x
        return 0.5 * (1.0 - np.exp(-gd * t)[:, None] * np.cos(np.outer(t, root) * om)) @ pops(nb)

    def jac(x):
        nb, om, gd = x
        p = pops(nb)
        damp = np.exp(-gd * t)[:, None]
        ph = np.outer(t, root) * om
        c, s = np.cos(ph), np.sin(ph)
        nbs = max(nb, 1e-12)
        dp = p * (n / nbs - (n + 1.0) / (nbs + 1.0))
        j = np.empty((t.size, 3))
        j[:, 0] = 0.5 * (1.0 - damp * c) @ dp
        j[:, 1] = 0.5 * (damp * s * np.outer(t, root)) @ p
        j[:, 2] = 0.5 * (damp * c * t[:, None]) @ p
        return j

    return fun, jac


def fit_thermal(signal: ProbeSignal, *, omega_guess: float | None = None,
                nbar_max: float = 30.0, max_iter: int = 300) -> ThermalFit:
    """Fit ``(n_ave, Omega, gamma_d)`` of a thermal population law.

    The start point comes from a deterministic coarse grid search; without
    ``omega_guess`` the Rabi-frequency scan spans ``[pi/2, 40 pi] / max(t_p)``.
    """
    t = signal.t_p
    if t.size < 4:
        raise FitError("at least 4 probe points are needed (12 or more recommended)")
    n_levels = _thermal_levels(nbar_max)
    fun, jac = _thermal_model(n_levels, t)
    sig = signal.sigma
    w = 1.0 / sig if sig is not None else np.ones_like(t)
    tmax = float(t[-1])
    if omega_guess is None:
        oms = np.geomspace(0.5 * math.pi / tmax, 40 * math.pi / tmax, 400)
    else:
        oms = omega_guess * np.linspace(0.7, 1.3, 121)
    best = None
    for nb in (0.05, 0.2, 0.5, 1.0, 2.0, 4.0):
        for gd in (0.0, 0.3 / tmax, 1.0 / tmax):
            nl = min(n_levels, _thermal_levels(nb, 1e-6))
            p = thermal_populations(nb, nl)
            root = np.sqrt(np.arange(nl) + 1.0)
            damp = np.exp(-gd * t)[:, None, None]
            ph = np.multiply.outer(np.outer(t, oms), root)
            model = 0.5 * (1.0 - damp * np.cos(ph)) @ p
            cost = np.sum(((model - signal.p_up[:, None]) * w[:, None]) ** 2, axis=0)
            k = int(np.argmin(cost))
            if best is None or cost[k] < best[0]:
                best = (cost[k], nb, oms[k], gd)
    x0 = [best[1], best[2], best[3]]
    res = lsq.solve(fun, jac, x0, signal.p_up, sigma=sig, lower=[0.0, 1e-12, 0.0],
                    upper=[nbar_max, np.inf, np.inf], max_iter=max_iter,
                    absolute_sigma=sig is not None)
    nb, om, gd = res.x
    return ThermalFit(float(nb), float(om), float(gd), res.covariance, res.chi2, res.dof,
                      res.converged)


# --- free-population fit -----------------------------------------------------------

def fit_free_populations(signal: ProbeSignal, n_max: int,
                         constraint_scale: float = DEFAULT_CONSTRAINT_SCALE, *,
                         thermal: ThermalFit | None = None, max_iter: int = 500,
                         omega_guess: float | None = None) -> PopulationEstimate:
    """Fit ``p_0..p_{n_max}`` together with ``Omega`` and ``gamma_d``.

    Populations lie on the probability simplex with caps
    ``p_n <= constraint_scale * p_n^th`` where ``p_n^th`` is the thermal law of
    a prior :func:`fit_thermal` (run here when ``thermal`` is not given).  The
    start point is that thermal fit.

    Raises
    ------
    lsq.InfeasibleError
        If the caps do not admit a normalized distribution.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    t = signal.t_p
    if thermal is None:
        thermal = fit_thermal(signal, omega_guess=omega_guess)
    levels = n_max + 1
    p_th = thermal_populations(thermal.n_ave, levels)
    caps = np.minimum(1.0, constraint_scale * p_th)
    if caps.sum() < 1.0:
        raise lsq.InfeasibleError(
            f"caps p_n <= {constraint_scale:g} p_n^th sum to {caps.sum():.4g} < 1; "
            "raise constraint_scale or n_max"
        )
    root = np.sqrt(np.arange(levels) + 1.0)

    def fun(x):
        p, om, gd = x[:levels], x[levels], x[levels + 1]
        return 0.5 * (1.0 - np.exp(-gd * t)[:, None] * np.cos(np.outer(t, root) * om)) @ p

    def jac(x):
        p, om, gd = x[:levels], x[levels], x[levels + 1]
        damp = np.exp(-gd * t)[:, None]
        ph = np.outer(t, root) * om
        c, s = np.cos(ph), np.sin(ph)
        j = np.empty((t.size, levels + 2))
        j[:, :levels] = 0.5 * (1.0 - damp * c)
        j[:, levels] = 0.5 * (damp * s * np.outer(t, root)) @ p
        j[:, levels + 1] = 0.5 * (damp * c * t[:, None]) @ p
        return j

    start = np.minimum(p_th / p_th.sum(), caps)
    x0 = np.concatenate([start / start.sum(), [thermal.omega_rabi, thermal.gamma_d]])
    lower = np.concatenate([np.zeros(levels), [1e-12, 0.0]])
    upper = np.concatenate([caps, [np.inf, np.inf]])
    res = lsq.solve(fun, jac, x0, signal.p_up, sigma=signal.sigma, lower=lower, upper=upper,
                    simplex=np.arange(levels), max_iter=max_iter,
                    absolute_sigma=signal.sigma is not None)
    p = np.clip(res.x[:levels], 0.0, None)
    p = p / p.sum()
    cov = res.covariance[:levels, :levels]
    n = np.arange(levels)
    nbar = float(n @ p)
    nbar_sigma = float(math.sqrt(max(n @ cov @ n, 0.0)))
    tol = 1e-9
    active = [int(i) for i in range(levels) if caps[i] < 1.0 and p[i] >= caps[i] - tol]
    return PopulationEstimate(p, cov, nbar, nbar_sigma, float(res.x[levels]),
                              float(res.x[levels + 1]), res.chi2, res.dof, res.converged,
                              active, [i for i in res.rank_deficient if i < levels])


def total_variation(p, q) -> float:
    """``1/2 sum |p - q|`` after zero-padding to equal length."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    size = max(p.size, q.size)
    p = np.pad(p, (0, size - p.size))
    q = np.pad(q, (0, size - q.size))
    return 0.5 * float(np.abs(p - q).sum())


# --- rate extraction ------------------------------------------------------------------

def extract_rates(series: TimeSeries, mode: str, *, key: str = "n", sigma=None,
                  n_ss: float | None = None, monotonic_tol: float = 3.0) -> RateEstimate:
    """Heating slope (linear fit) or cooling constant (exponential relaxation fit).

    ``sigma`` gives per-point uncertainties; without it the covariance is
    scaled by the residual variance.  In ``"cooling"`` mode ``n_ss`` may be
    fixed (e.g. to the series tail); otherwise it is fitted.

    Raises
    ------
    FitError
        If fewer than 4 points are given or the series reverses direction by
        more than ``monotonic_tol`` standard deviations.
    """
    t = series.times
    y = np.asarray(series[key], dtype=float)
    if t.size < 4:
        raise FitError("at least 4 points are required")
    sig = None if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape).copy()
    _check_monotonic(y, sig, monotonic_tol)
    if mode == "heating":
        a = np.vstack([np.ones_like(t), t]).T
        res = lsq.solve(lambda x: a @ x, lambda x: a, np.zeros(2), y, sigma=sig,
                        absolute_sigma=sig is not None)
        return RateEstimate(float(res.x[1]), float(res.stderr[1]), mode,
                            {"intercept": float(res.x[0]), "reduced_chi2": res.reduced_chi2})
    if mode != "cooling":
        raise ValueError("mode must be 'heating' or 'cooling'")
    span = t[-1] - t[0]
    n0 = y[0]
    tail = y[-1] if n_ss is None else n_ss

    def model(x):
        nss = x[2] if n_ss is None else n_ss
        return nss + (x[0] - nss) * np.exp(-x[1] * (t - t[0]))

    def jac(x):
        nss = x[2] if n_ss is None else n_ss
        e = np.exp(-x[1] * (t - t[0]))
        cols = [e, -(x[0] - nss) * (t - t[0]) * e]
        if n_ss is None:
            cols.append(1.0 - e)
        return np.vstack(cols).T

    best = None
    for k in np.geomspace(0.3 / span, 30.0 / span, 25):
        x = np.array([n0, k] + ([tail] if n_ss is None else []))
        c = float(np.sum(((model(x) - y) / (sig if sig is not None else 1.0)) ** 2))
        if best is None or c < best[0]:
            best = (c, x)
    lower = [-np.inf, 0.0] + ([-np.inf] if n_ss is None else [])
    res = lsq.solve(model, jac, best[1], y, sigma=sig, lower=lower,
                    absolute_sigma=sig is not None)
    params = {"n0": float(res.x[0]), "reduced_chi2": res.reduced_chi2}
    params["n_ss"] = float(res.x[2]) if n_ss is None else float(n_ss)
    return RateEstimate(float(res.x[1]), float(res.stderr[1]), mode, params)


def _check_monotonic(y, sig, tol):
    if y.size < 3:
        return
    d = np.diff(y)
    direction = np.sign(y[-1] - y[0])
    if direction == 0:
        return
    scale = (np.sqrt(sig[1:] ** 2 + sig[:-1] ** 2) if sig is not None
             else np.full(d.size, np.std(d) + 1e-300))
    if np.any(direction * d < -tol * scale):
        raise FitError("series is not monotonic within the noise tolerance")
