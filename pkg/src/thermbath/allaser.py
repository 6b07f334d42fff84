"""All-laser thermal bath: coherent red sideband plus stochastic-phase blue sideband.

A coolant spin (``|e> = |up>``, ``|g> = |down>``, decay ``Gamma D[s-]``) couples
to one mode through

* ``H_RS = Omega_r (s+ a + s- a^H)``
* ``H_BS(phi) = Omega_b (s+ a^H e^{i phi} + s- a e^{-i phi})``

with ``phi`` redrawn uniformly from ``[0, 2 pi)`` every interval ``tau``.
Units are free but must be consistent (the CLI uses rad/ms and ms).

Trajectories are propagated with the exact interval propagator
``exp(L_phi dt)``.  Two structural facts keep this cheap:

* ``q = n + P_e`` changes by 0 (``H_RS``), 2 (``H_BS``) or 1 (decay), so
  density-matrix elements with ``(-1)^(q_j + q_k) = +1`` form an invariant
  block containing every diagonal initial state;
* ``L_phi = U_phi L_0 U_phi^H`` with the elementwise phase
  ``(U_phi rho)_jk = exp(i phi (q_j - q_k)/2) rho_jk``, so one matrix
  exponential serves all phases.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hilbert import (
    DensityMatrix,
    HilbertLayout,
    Operator,
    ladder,
    mode_op,
    partial_trace,
    sigma_minus,
    sigma_plus,
    thermal_state,
)
from .lindblad import Dissipator, Integrator, MasterEquation, TimeSeries


DEFAULT_BATCH = 16


class NonEquilibratingError(ValueError):
    """Cooling does not outpace heating, so no steady state exists."""


@dataclass(frozen=True)
class StochasticDriveSpec:
    omega_r: float
    omega_b: float
    gamma_decay: float
    tau: float
    cutoff: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.omega_r < 0 or self.omega_b < 0:
            raise ValueError("Rabi frequencies must be non-negative")
        if self.gamma_decay <= 0 or self.tau <= 0:
            raise ValueError("gamma_decay and tau must be positive")
        if self.cutoff < 2:
            raise ValueError("cutoff must be at least 2")
        if self.gamma_decay < 10 * max(self.omega_r, self.omega_b):
            warnings.warn(
                "gamma_decay < 10 max(omega_r, omega_b): the effective-rate description "
                "assumes a fast-decaying coolant", RuntimeWarning, stacklevel=2,
            )

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(True, (self.cutoff,))


@dataclass(frozen=True)
class EffectiveRates:
    gamma_b: float
    gamma_r: float
    gamma_prime: float
    n_ss: float


def gamma_b_rate(omega_b: float, gamma_decay: float, tau: float) -> float:
    """Heating rate ``(8 Ob^2 / (G^2 tau)) (G tau/2 - 1 + exp(-G tau/2))``."""
    x = 0.5 * gamma_decay * tau
    # x - 1 + e^{-x} loses precision for small x; expm1 keeps it
    return 8.0 * omega_b ** 2 / (gamma_decay ** 2 * tau) * (x + math.expm1(-x))


def gamma_r_rate(omega_r: float, gamma_decay: float) -> float:
    """Cooling rate ``4 Or^2 / G``."""
    return 4.0 * omega_r ** 2 / gamma_decay


def effective_rates(spec: StochasticDriveSpec, allow_nonequilibrium: bool = False) -> EffectiveRates:
    """Closed-form rates; ``n_ss = gamma_b / (gamma_r - gamma_b)``.

    Raises :class:`NonEquilibratingError` when ``gamma_r <= gamma_b`` unless
    ``allow_nonequilibrium`` (then ``n_ss`` is ``inf``).
    """
    gb = gamma_b_rate(spec.omega_b, spec.gamma_decay, spec.tau)
    gr = gamma_r_rate(spec.omega_r, spec.gamma_decay)
    gp = gr - gb
    if gp <= 0:
        if not allow_nonequilibrium:
            raise NonEquilibratingError(
                f"cooling rate {gr:.4g} does not exceed heating rate {gb:.4g}: "
                "the mode never equilibrates; increase omega_r"
            )
        return EffectiveRates(gb, gr, gp, math.inf)
    return EffectiveRates(gb, gr, gp, gb / gp)


def omega_r_for_nss(n_ss: float, omega_b: float, gamma_decay: float, tau: float) -> float:
    """Red-sideband Rabi frequency that sets the target ``n_ss``."""
    if n_ss <= 0:
        raise ValueError("target n_ss must be positive")
    gb = gamma_b_rate(omega_b, gamma_decay, tau)
    gr = gb * (1.0 + 1.0 / n_ss)
    return math.sqrt(gr * gamma_decay / 4.0)


def correlation(t, t2, tau: float):
    """Two-time phase correlation ``max(0, 1 - |t - t'|/tau) / 2``."""
    return 0.5 * np.maximum(0.0, 1.0 - np.abs(np.asarray(t) - np.asarray(t2)) / tau)


@dataclass(frozen=True)
class PathologyResult:
    physical: bool
    squeeze_r: float | None
    residual: float | None


def coherent_pathology_check(omega_r: float, omega_b: float, cutoff: int = 80) -> PathologyResult:
    """Steady state of coherent red+blue sidebands: squeezed vacuum or nothing.

    For ``omega_r > omega_b`` returns ``r = artanh(omega_b/omega_r)`` and the
    relative residual ``||K psi|| / omega_r`` of ``K = Or a + Ob a^H`` on the
    squeezed vacuum ``exp(r/2 (a^2 - a^H^2)) |0>``.
    """
    if omega_r <= omega_b:
        return PathologyResult(False, None, None)
    r = math.atanh(omega_b / omega_r)
    big = cutoff + 60
    a = ladder(big)
    sq = sla.expm(0.5 * r * (a @ a - a.conj().T @ a.conj().T))
    psi = sq[:, 0][:cutoff]
    psi = psi / np.linalg.norm(psi)
    ac = ladder(cutoff)
    k = omega_r * ac + omega_b * ac.conj().T
    kpsi = k @ psi
    # the top Fock level has no partner under a^H in the truncated space
    kpsi[-1] = 0.0
    return PathologyResult(True, r, float(np.linalg.norm(kpsi) / max(omega_r, 1e-300)))


# --- model builders ------------------------------------------------------------

def drive_hamiltonian(spec: StochasticDriveSpec, phi: float) -> Operator:
    lay = spec.layout
    a = mode_op(lay, 0)
    sp_, sm = sigma_plus(lay), sigma_minus(lay)
    h_rs = spec.omega_r * (sp_ @ a + sm @ a.dag())
    e = np.exp(1j * phi)
    h_bs = spec.omega_b * (e * (sp_ @ a.dag()) + np.conj(e) * (sm @ a))
    return h_rs + h_bs


def stochastic_equation(spec: StochasticDriveSpec, phi: float) -> MasterEquation:
    """Lindblad equation for one phase interval."""
    return MasterEquation(drive_hamiltonian(spec, phi),
                          (Dissipator(sigma_minus(spec.layout), spec.gamma_decay),))


def intermediate_model(spec: StochasticDriveSpec) -> MasterEquation:
    """Phase-averaged model: red sideband, decay, and ``gamma_b`` on ``a s-`` and ``a^H s+``."""
    lay = spec.layout
    a = mode_op(lay, 0)
    sp_, sm = sigma_plus(lay), sigma_minus(lay)
    gb = gamma_b_rate(spec.omega_b, spec.gamma_decay, spec.tau)
    h = spec.omega_r * (sp_ @ a + sm @ a.dag())
    return MasterEquation(h, (Dissipator(sm, spec.gamma_decay), Dissipator(a @ sm, gb),
                              Dissipator(a.dag() @ sp_, gb)))


def effective_model(spec: StochasticDriveSpec) -> MasterEquation:
    """Mode-only model ``gamma_r D[a] + gamma_b D[a^H]``."""
    lay = HilbertLayout(False, (spec.cutoff,))
    a = mode_op(lay, 0)
    gb = gamma_b_rate(spec.omega_b, spec.gamma_decay, spec.tau)
    gr = gamma_r_rate(spec.omega_r, spec.gamma_decay)
    return MasterEquation(Operator(lay, np.zeros((lay.dim, lay.dim))),
                          (Dissipator(a, gr), Dissipator(a.dag(), gb)))


def initial_state(spec: StochasticDriveSpec, n0: float, tail_tol: float = 1e-6) -> DensityMatrix:
    """``|g><g| (x) thermal(n0)``; ``tail_tol`` bounds the truncated thermal mass."""
    return thermal_state(spec.layout, 0, n0, spin_state="down", tail_tol=tail_tol)


def phase_generator(seed: int, traj_index: int) -> np.random.Generator:
    """Counter-based per-trajectory stream keyed by ``(seed, traj_index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(traj_index),))
    return np.random.Generator(np.random.Philox(ss))


def draw_phases(seed: int, traj_index: int, n_intervals: int) -> np.ndarray:
    return phase_generator(seed, traj_index).uniform(0.0, 2.0 * math.pi, n_intervals)


# --- exact interval propagation -----------------------------------------------------

def _charges(lay: HilbertLayout) -> np.ndarray:
    return lay.occupations(0) + (lay.spin_values() > 0).astype(int)


class IntervalPropagator:
    """``exp(L_0 dt)`` on the parity block, with phase rotations for other ``phi``."""

    def __init__(self, spec: StochasticDriveSpec, dt: float):
        self.spec = spec
        self.dt = float(dt)
        lay = spec.layout
        d = lay.dim
        q = _charges(lay)
        same = ((q[:, None] - q[None, :]) % 2) == 0
        self.rows, self.cols = np.nonzero(same)
        self.flat = self.rows * d + self.cols
        self.half_charge = ((q[self.rows] - q[self.cols]) // 2).astype(float)
        self.diag_pos = np.nonzero(self.rows == self.cols)[0]
        self.n_diag = lay.occupations(0)[self.rows[self.diag_pos]].astype(float)
        self.dim = d
        gen = _sparse_liouvillian(stochastic_equation(spec, 0.0))
        block = gen[self.flat][:, self.flat].toarray()
        self.matrix = sla.expm(block * self.dt)

    def vectorize(self, rho: np.ndarray) -> np.ndarray:
        return rho.reshape(-1)[self.flat].copy()

    def matrix_from(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim * self.dim, dtype=complex)
        out[self.flat] = vec
        return out.reshape(self.dim, self.dim)

    def mean_n(self, vecs: np.ndarray) -> np.ndarray:
        return (self.n_diag @ vecs[self.diag_pos]).real

    def phase(self, phis: np.ndarray) -> np.ndarray:
        """Elementwise phase factors, one column per trajectory."""
        return np.exp(1j * np.outer(self.half_charge, phis))


def _sparse_liouvillian(eq: MasterEquation) -> sp.csr_matrix:
    d = eq.layout.dim
    eye = sp.identity(d, format="csr", dtype=complex)
    h = sp.csr_matrix(eq.hamiltonian.matrix)
    sup = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for dp in eq.dissipators:
        c = sp.csr_matrix(dp.jump.matrix)
        cdc = c.conj().T @ c
        sup = sup + dp.rate * (sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye)
                               - 0.5 * sp.kron(eye, cdc.T))
    return sp.csr_matrix(sup)


def _check_grid(grid, tau):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or abs(grid[0]) > 1e-12:
        raise ValueError("grid must start at 0 and contain at least two points")
    steps = np.diff(grid)
    dt = steps[0]
    if np.max(np.abs(steps - dt)) > 1e-9 * grid[-1]:
        raise ValueError("grid must be uniform")
    ratio = tau / dt
    per = int(round(ratio))
    if per < 1 or abs(ratio - per) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"tau = {tau:g} must be an integer multiple of the grid step {dt:g}")
    return grid, dt, per


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_n: np.ndarray
    stderr: np.ndarray
    final_state_mean: DensityMatrix
    n_trajectories: int
    trajectories: np.ndarray = field(repr=False, default=None)

    def mode_state(self) -> DensityMatrix:
        """Final ensemble-mean state of the mode (coolant traced out)."""
        return partial_trace(self.final_state_mean, keep_modes=[0])

    def to_time_series(self) -> TimeSeries:
        return TimeSeries(self.times, {"mean_n": self.mean_n, "stderr": self.stderr})


def _run_batch(prop: IntervalPropagator, rho0: np.ndarray, n_steps: int, per: int,
               phases: np.ndarray):
    """Propagate trajectories (columns) through ``n_steps`` grid steps."""
    n_traj = phases.shape[0]
    x = np.repeat(prop.vectorize(rho0)[:, None], n_traj, axis=1)
    ns = np.empty((n_steps + 1, n_traj))
    ns[0] = prop.mean_n(x)
    step = 0
    interval = 0
    while step < n_steps:
        ph = prop.phase(phases[:, interval])
        y = np.conj(ph) * x
        for _ in range(min(per, n_steps - step)):
            y = prop.matrix @ y
            step += 1
            ns[step] = prop.mean_n(y)
        x = ph * y
        interval += 1
    return ns, x


def ensemble_mean_n(spec: StochasticDriveSpec, rho0: DensityMatrix, grid, n_traj: int, *,
                    workers: int = 1, batch: int = DEFAULT_BATCH,
                    propagator: IntervalPropagator | None = None) -> EnsembleResult:
    """Mean phonon number over ``n_traj`` stochastic-phase trajectories.

    Trajectory ``i`` draws its phases from ``phase_generator(spec.seed, i)``,
    so the draws do not depend on ``workers`` or ``batch``.  Trajectories are
    propagated ``batch`` at a time as one matrix product; since BLAS rounding
    can depend on the number of columns, ``batch`` (not ``workers``) fixes the
    chunking and the output is bit-identical for any worker count.
    """
    if n_traj < 2:
        raise ValueError("at least two trajectories are needed for a standard error")
    if rho0.layout != spec.layout:
        raise ValueError("initial state does not match the drive layout")
    grid, dt, per = _check_grid(grid, spec.tau)
    n_steps = grid.size - 1
    n_int = -(-n_steps // per)
    prop = propagator if propagator is not None else IntervalPropagator(spec, dt)
    if abs(prop.dt - dt) > 1e-12 * max(1.0, dt):
        raise ValueError("propagator step differs from the grid step")
    phases = np.array([draw_phases(spec.seed, i, n_int) for i in range(n_traj)])
    if batch < 1:
        raise ValueError("batch must be positive")
    chunks = [np.arange(s, min(s + batch, n_traj)) for s in range(0, n_traj, batch)]
    rho = np.asarray(rho0.matrix)

    def run(idx):
        return _run_batch(prop, rho, n_steps, per, phases[idx])

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    ns = np.concatenate([p[0] for p in parts], axis=1)
    finals = np.concatenate([p[1] for p in parts], axis=1)
    mean_vec = finals.mean(axis=1)
    rho_mean = prop.matrix_from(mean_vec)
    rho_mean = 0.5 * (rho_mean + rho_mean.conj().T)
    final = DensityMatrix.from_matrix(spec.layout, rho_mean, rho0.discarded_mass)
    return EnsembleResult(grid, ns.mean(axis=1), ns.std(axis=1, ddof=1) / math.sqrt(n_traj),
                          final, n_traj, ns.T.copy())


def sample_trajectory(spec: StochasticDriveSpec, rho0: DensityMatrix, grid, *,
                      traj_index: int = 0, method: str = "exact", safety: float = 0.05,
                      propagator: IntervalPropagator | None = None) -> TimeSeries:
    """One stochastic-phase trajectory of ``<n>``.

    ``method="exact"`` uses the interval propagator; ``method="rk4"`` integrates
    each interval with the Lindblad integrator (slow; a cross-check).
    """
    grid, dt, per = _check_grid(grid, spec.tau)
    n_steps = grid.size - 1
    n_int = -(-n_steps // per)
    phases = draw_phases(spec.seed, traj_index, n_int)
    if method == "exact":
        prop = propagator if propagator is not None else IntervalPropagator(spec, dt)
        ns, x = _run_batch(prop, np.asarray(rho0.matrix), n_steps, per, phases[None, :])
        final = prop.matrix_from(x[:, 0])
        return _with_final(grid, ns[:, 0], spec, final)
    if method != "rk4":
        raise ValueError("method must be 'exact' or 'rk4'")
    rho = np.array(rho0.matrix, dtype=np.complex128, order="C")
    n_diag = spec.layout.occupations(0).astype(float)
    ns = np.empty(n_steps + 1)
    ns[0] = float(np.real(np.diag(rho)) @ n_diag)
    step = 0
    for j in range(n_int):
        integ = Integrator(stochastic_equation(spec, phases[j]), safety)
        for _ in range(min(per, n_steps - step)):
            integ.advance(rho, dt)
            step += 1
            ns[step] = float(np.real(np.diag(rho)) @ n_diag)
    return _with_final(grid, ns, spec, rho)


def _with_final(grid, ns, spec, final):
    ts = TimeSeries(grid, {"n": ns})
    ts.final_state = DensityMatrix.from_matrix(spec.layout, final, validate=False)
    return ts
