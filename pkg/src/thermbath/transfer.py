"""Transfer-rate analysis: donor populations, k_T spectra and analytic rates."""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hilbert import displacement_matrix, thermal_populations
from .lindblad import DEFAULT_SAFETY, Integrator, TimeSeries, evolve
from .lvc import (
    LvcModel,
    build_hamiltonian,
    build_master_equation,
    donor_projector_diag,
    initial_donor_state,
)
from .hilbert import sigma_z

FGR_PREFACTOR = 1.18


class SpectrumPointError(RuntimeError):
    """A single grid point of a rate spectrum failed."""

    def __init__(self, index: int, delta_e: float, cause: BaseException):
        super().__init__(f"grid point {index} (delta_e = {delta_e:.6g}) failed: {cause}")
        self.index = index
        self.delta_e = delta_e
        self.cause = cause


# --- donor population and k_T -----------------------------------------------

def donor_population(series: TimeSeries, key: str = "sigma_z") -> TimeSeries:
    """``P_D = (<sz> + 1)/2``, clamped to [0, 1] after a range check."""
    if key not in series:
        raise KeyError(f"time series has no {key!r} column")
    pd = 0.5 * (np.real(series[key]) + 1.0)
    if np.any(pd < -1e-7) or np.any(pd > 1 + 1e-7):
        raise ValueError("donor population outside [0, 1] beyond tolerance")
    return TimeSeries(series.times, {"P_D": np.clip(pd, 0.0, 1.0)}, dict(series.units))


def transfer_rate(pd: TimeSeries, t_sim: float | None = None) -> float:
    """``k_T = int P_D dt / int t P_D dt - 2/t_sim`` by trapezoidal quadrature.

    ``pd`` must be sampled on a uniform grid covering ``[0, t_sim]``.
    """
    t = pd.times
    p = np.asarray(pd["P_D"], dtype=float)
    if t_sim is None:
        t_sim = float(t[-1])
    if t.size < 2 or abs(t[0]) > 1e-12 or abs(t[-1] - t_sim) > 1e-9 * max(1.0, t_sim):
        raise ValueError("P_D must be sampled on [0, t_sim]")
    steps = np.diff(t)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, t_sim):
        raise ValueError("P_D must be sampled on a uniform grid")
    num = np.trapezoid(p, t)
    den = np.trapezoid(t * p, t)
    if den < 1e-12:
        raise ValueError("degenerate donor population: time-weighted integral vanishes")
    return float(num / den - 2.0 / t_sim)


def default_t_sim(model: LvcModel) -> float:
    """``5 / min_i gamma_i`` over the mode baths."""
    gammas = [m.bath.gamma for m in model.modes if m.bath.gamma > 0]
    if not gammas:
        raise ValueError("t_sim needs at least one damped mode or an explicit value")
    return 5.0 / min(gammas)


def default_sample_step(model: LvcModel) -> float:
    """Output sampling step resolving the fastest coherent oscillation."""
    f_max = math.hypot(model.delta_e, 2 * model.v) + sum(m.omega for m in model.modes)
    return min(0.1, 0.5 / f_max)


def simulate_transfer(model: LvcModel, t_sim: float, *, dt: float | None = None,
                      safety: float = DEFAULT_SAFETY, positivity_checks: int = 4) -> TimeSeries:
    """Evolve the donor state and record ``<sz>`` and ``P_D`` on ``[0, t_sim]``."""
    dt = dt if dt is not None else default_sample_step(model)
    n = max(2, math.ceil(t_sim / dt))
    grid = np.linspace(0.0, t_sim, n + 1)
    eq = build_master_equation(model)
    rho0 = initial_donor_state(model)
    ts = evolve(rho0, eq, grid, {"sigma_z": sigma_z(model.layout)}, safety=safety,
                positivity_checks=positivity_checks, integrator=Integrator(eq, safety))
    ts.values["P_D"] = donor_population(ts)["P_D"]
    return ts


@dataclass
class RateSpectrum:
    delta_e: np.ndarray
    rates: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta_e = np.asarray(self.delta_e, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.delta_e.shape != self.rates.shape:
            raise ValueError("grid and rates differ in length")
        if self.delta_e.size > 1 and np.any(np.diff(self.delta_e) <= 0):
            raise ValueError("delta_e grid must be increasing")
        if not np.all(np.isfinite(self.rates)):
            raise ValueError("non-finite transfer rate")

    def local_maxima(self) -> np.ndarray:
        """Grid values at interior strict local maxima."""
        r = self.rates
        idx = [i for i in range(1, r.size - 1) if r[i] > r[i - 1] and r[i] > r[i + 1]]
        return self.delta_e[idx]

    def rate_at(self, delta_e: float) -> float:
        i = int(np.argmin(np.abs(self.delta_e - delta_e)))
        return float(self.rates[i])

    def to_csv_text(self, unit: str = "omega") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"delta_e [{unit}]", f"k_T [{unit}]"])
        for x, k in zip(self.delta_e, self.rates):
            w.writerow([repr(float(x)), repr(float(k))])
        return buf.getvalue()


def rate_at_gap(model: LvcModel, delta_e: float, t_sim: float, **kw) -> float:
    ts = simulate_transfer(model.with_delta_e(delta_e), t_sim, **kw)
    return transfer_rate(TimeSeries(ts.times, {"P_D": ts["P_D"]}), t_sim)


def rate_spectrum(model_template: LvcModel, delta_e_grid: Sequence[float],
                  t_sim: float | None = None, *, workers: int = 1, dt: float | None = None,
                  safety: float = DEFAULT_SAFETY,
                  progress: Callable[[int, float, float], None] | None = None) -> RateSpectrum:
    """``k_T`` at every gap in ``delta_e_grid``; one independent run per point.

    Points run on ``workers`` threads; results are assembled in grid order, so
    the output does not depend on the worker count.
    """
    grid = np.asarray(delta_e_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty delta_e grid")
    t_sim = float(t_sim) if t_sim is not None else default_t_sim(model_template)
    # resolve cutoffs once so every point shares the same truncation
    template = model_template.with_cutoffs(model_template.resolved_cutoffs)

    def one(i):
        x = float(grid[i])
        try:
            k = rate_at_gap(template, x, t_sim, dt=dt, safety=safety)
        except Exception as exc:  # attach the failing grid index
            raise SpectrumPointError(i, x, exc) from exc
        if progress is not None:
            progress(i, x, k)
        return k

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rates = list(pool.map(one, range(grid.size)))
    else:
        rates = [one(i) for i in range(grid.size)]
    meta = {"model": template.to_dict(), "t_sim": t_sim, "safety": safety,
            "dt": dt if dt is not None else "auto"}
    return RateSpectrum(grid, np.array(rates), meta)


# --- resonances ------------------------------------------------------------------

def resonance_positions(v: float, omega1: float, omega2: float, l_max: int) -> list[dict]:
    """Gaps ``sqrt((l1 w1 + l2 w2)^2 - 4 V^2)`` for ``|l_i| <= l_max``.

    Only positive sums ``l1 w1 + l2 w2 > 2|V|`` give real roots.  Duplicates
    (within 1e-9) keep the label with the smallest ``|l1| + |l2|``.
    """
    out: list[dict] = []
    for l1, l2 in itertools.product(range(-l_max, l_max + 1), repeat=2):
        s = l1 * omega1 + l2 * omega2
        if s <= 0 or s * s - 4 * v * v <= 0:
            continue
        out.append({"l1": l1, "l2": l2, "delta_e": math.sqrt(s * s - 4 * v * v)})
    out.sort(key=lambda r: (r["delta_e"], abs(r["l1"]) + abs(r["l2"]), -r["l1"], -r["l2"]))
    unique: list[dict] = []
    for r in out:
        if unique and abs(r["delta_e"] - unique[-1]["delta_e"]) < 1e-9:
            continue
        unique.append(r)
    return unique


# --- Franck-Condon, FGR and Marcus -----------------------------------------------

def _fc_size(n_top: int, d: float) -> int:
    return int(n_top + 40 + 8 * d * d)


def fc_matrix(d: float, size: int) -> np.ndarray:
    """``FC_{m,n}(d)`` for ``m, n < size`` from a converged displacement matrix."""
    dm = displacement_matrix(_fc_size(size, d), d)
    return np.abs(dm[:size, :size]) ** 2


def franck_condon(m: int, n: int, d: float) -> float:
    """``|<m| D(d) |n>|^2`` between surfaces displaced by ``d``."""
    if m < 0 or n < 0:
        raise ValueError("vibrational levels must be non-negative")
    return float(fc_matrix(d, max(m, n) + 1)[m, n])


def thermal_fc(d: float, nbar: float, n: int, tail: float = 1e-14) -> float:
    """``sum_m p_m(nbar) FC_{m,m+n}(d)``."""
    m_max = 1
    if nbar > 0:
        m_max = max(1, math.ceil(math.log(tail) / math.log(nbar / (nbar + 1.0))))
    fc = fc_matrix(d, m_max + n)
    p = thermal_populations(nbar, m_max)
    return float(sum(p[m] * fc[m, m + n] for m in range(m_max)))


def fgr_rate(v: float, g: float, omega: float, nbar: float, delta_e: float,
             prefactor_a: float = FGR_PREFACTOR) -> float:
    """``A |V|^2 sum_m p_m FC_{m,m+n}(g/omega)`` with ``n = delta_e/omega`` integer."""
    ratio = delta_e / omega
    n = round(ratio)
    if abs(ratio - n) > 1e-6 or n < 1:
        raise ValueError(f"delta_e/omega = {ratio:.6g} is not a positive integer")
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    return prefactor_a * abs(v) ** 2 * thermal_fc(g / omega, nbar, n)


def marcus_rate(v: float, lam: float, k_bt: float, delta_e):
    """``|V|^2 sqrt(pi/(lam kT)) exp(-(lam - dE)^2 / (4 lam kT))``."""
    if lam <= 0 or k_bt <= 0:
        raise ValueError("lambda and k_BT must be positive")
    de = np.asarray(delta_e, dtype=float)
    k = abs(v) ** 2 * np.sqrt(np.pi / (lam * k_bt)) * np.exp(-(lam - de) ** 2 / (4 * lam * k_bt))
    return float(k) if k.ndim == 0 else k


# --- adiabatic surfaces ---------------------------------------------------------

@dataclass
class AdiabaticSurfaces:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    donor_weight: np.ndarray
    labels: list

    @property
    def acceptor_weight(self) -> np.ndarray:
        return 1.0 - self.donor_weight


def adiabatic_surfaces(model: LvcModel, degeneracy_tol: float = 1e-9,
                       ambiguity: float = 0.1) -> AdiabaticSurfaces:
    """Eigen-decomposition of the LVC Hamiltonian with donor weights and surface labels.

    Within a degenerate eigenvalue cluster the eigenvectors are rotated to
    diagonalize the donor projector, which makes the weights well defined.
    A state is donor-like if its weight exceeds 0.5.  With ``delta_e >= 0`` the
    donor-like states form the upper surface; with ``delta_e < 0`` the
    assignment is swapped.  Degenerate states whose weight lies within
    ``ambiguity`` of 0.5 are labelled ``"unclassified"``.
    """
    h = build_hamiltonian(model).matrix
    w, vecs = np.linalg.eigh(h)
    pd = donor_projector_diag(model.layout)
    scale = max(1.0, float(np.max(np.abs(w))))
    clusters = []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or w[i] - w[i - 1] > degeneracy_tol * scale:
            clusters.append((start, i))
            start = i
    degenerate = np.zeros(w.size, dtype=bool)
    for a, b in clusters:
        if b - a > 1:
            sub = vecs[:, a:b]
            proj = sub.conj().T @ (pd[:, None] * sub)
            _, rot = np.linalg.eigh(proj)
            vecs[:, a:b] = sub @ rot
            degenerate[a:b] = True
    weight = np.clip(np.einsum("i,ij->j", pd, np.abs(vecs) ** 2), 0.0, 1.0)
    donor_upper = model.delta_e >= 0
    labels = []
    for k in range(w.size):
        if degenerate[k] and abs(weight[k] - 0.5) < ambiguity:
            labels.append("unclassified")
            continue
        donor_like = weight[k] > 0.5
        labels.append("upper" if donor_like == donor_upper else "lower")
    return AdiabaticSurfaces(w, vecs, weight, labels)
