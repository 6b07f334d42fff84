"""Lindblad master equations: construction, integration and steady states.

Integration scheme
------------------
The generator is split as ``L = D + N``.  ``D`` collects everything that acts
elementwise on ``rho``: the diagonal of the Hamiltonian and jump operators
that are diagonal in the basis (e.g. ``a^H a`` dephasing).  ``D`` has zeros on
the matrix diagonal.  ``N`` holds the off-diagonal Hamiltonian, the
anti-Hermitian ``-i/2 sum c^H c`` part of the remaining jumps and their
sandwich terms ``c rho c^H``.  Steps use integrating-factor (Lawson) RK4:
``D`` is applied exactly through ``exp(D h)``, and the RK4 stages only see
``N``.  With ``D = 0`` this is classic RK4.  Trace is conserved to roundoff
because both ``exp(D h)`` and every ``N`` stage leave the trace untouched.

The step size obeys ``h * (||H_offdiag|| + sum_k rate_k ||c_k^H c_k||) <= safety``
where the sum runs over non-diagonal jumps.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import kernels
from .hilbert import DensityMatrix, HilbertLayout, Operator

DEFAULT_SAFETY = 0.05
TRACE_DRIFT_TOL = 1e-7
HERMITICITY_TOL = 1e-8
POSITIVITY_FLOOR = -1e-7


class StepSizeError(ValueError):
    """Requested step violates the integrator's stability rule."""


class InvariantError(RuntimeError):
    """The state lost trace, Hermiticity or positivity during a run."""


class SteadyStateError(RuntimeError):
    """Propagation did not settle within the allowed time."""

    def __init__(self, message, residual=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


@dataclass(frozen=True)
class Dissipator:
    """Jump operator ``jump`` acting at ``rate`` (1/time)."""

    jump: Operator
    rate: float

    def __post_init__(self):
        rate = float(self.rate)
        if not math.isfinite(rate) or rate < 0:
            raise ValueError(f"dissipator rate must be finite and >= 0, got {self.rate}")
        object.__setattr__(self, "rate", rate)


@dataclass(frozen=True)
class MasterEquation:
    """Hamiltonian (angular frequency units, hbar = 1) plus dissipators."""

    hamiltonian: Operator
    dissipators: tuple = ()

    def __post_init__(self):
        diss = tuple(self.dissipators)
        object.__setattr__(self, "dissipators", diss)
        for dp in diss:
            if dp.jump.layout != self.hamiltonian.layout:
                raise ValueError("dissipator layout differs from the Hamiltonian's")
        if not self.hamiltonian.is_hermitian(1e-10):
            raise ValueError("Hamiltonian is not Hermitian")

    @property
    def layout(self) -> HilbertLayout:
        return self.hamiltonian.layout

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Dense evaluation of ``L(rho)`` (reference path)."""
        h = self.hamiltonian.matrix
        out = -1j * (h @ rho - rho @ h)
        for dp in self.dissipators:
            if dp.rate == 0:
                continue
            c = dp.jump.matrix
            cd = c.conj().T
            cdc = cd @ c
            out += dp.rate * (c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc))
        return out

    def liouvillian(self) -> np.ndarray:
        """Superoperator acting on row-major ``vec(rho)``; for small systems."""
        d = self.layout.dim
        eye = np.eye(d)
        h = self.hamiltonian.matrix
        sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
        for dp in self.dissipators:
            c = dp.jump.matrix
            cdc = c.conj().T @ c
            sup += dp.rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye)
                              - 0.5 * np.kron(eye, cdc.T))
        return sup


def thermal_dissipators(a: Operator, gamma: float, nbar: float) -> list[Dissipator]:
    """Cooling ``(a, gamma (nbar+1))`` and heating ``(a^H, gamma nbar)`` pair."""
    if gamma < 0 or nbar < 0:
        raise ValueError("gamma and nbar must be non-negative")
    return [Dissipator(a, gamma * (nbar + 1.0)), Dissipator(a.dag(), gamma * nbar)]


# --- time series ------------------------------------------------------------

_HEADER_RE = re.compile(r"^\s*(.*?)\s*(?:\[(.*)\])?\s*$")


@dataclass
class TimeSeries:
    """Sampled observables on a strictly increasing time grid.

    ``values`` maps column names to arrays; ``units`` maps names (and
    ``"t"``) to unit strings used in CSV headers.
    """

    times: np.ndarray
    values: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)
    states: list | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.values = {k: np.asarray(v) for k, v in self.values.items()}
        for k, v in self.values.items():
            if v.shape[0] != self.times.size:
                raise ValueError(f"column {k!r} has {v.shape[0]} samples, expected {self.times.size}")
        if self.states is not None and len(self.states) != self.times.size:
            raise ValueError("states and times differ in length")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def _header(self, name: str) -> str:
        unit = self.units.get(name)
        return f"{name} [{unit}]" if unit else name

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.values)
        cols = []
        for n in names:
            v = self.values[n]
            if np.iscomplexobj(v):
                cols += [(f"{n}_re", v.real), (f"{n}_im", v.imag)]
            else:
                cols.append((n, v))
        head = [self._header("t")]
        for n, _ in cols:
            base = n[:-3] if n.endswith(("_re", "_im")) and n[:-3] in self.units else n
            unit = self.units.get(base)
            head.append(f"{n} [{unit}]" if unit else n)
        w.writerow(head)
        for i, t in enumerate(self.times):
            w.writerow([repr(float(t))] + [repr(float(c[i])) for _, c in cols])
        return buf.getvalue()

    @classmethod
    def from_csv_text(cls, text: str) -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        names, units = [], {}
        for h in rows[0]:
            name, unit = _HEADER_RE.match(h).groups()
            names.append(name)
            if unit:
                units[name] = unit
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
        values = {n: data[:, i] for i, n in enumerate(names[1:], start=1)}
        return cls(data[:, 0], values, units)


def analytic_phonon_curve(n0: float, n_ss: float, gamma_c: float, grid) -> TimeSeries:
    """Closed-form relaxation ``n_ss + (n0 - n_ss) exp(-gamma_c t)``."""
    if gamma_c <= 0:
        raise ValueError("gamma_c must be positive")
    t = np.asarray(grid, dtype=float)
    return TimeSeries(t, {"n": n_ss + (n0 - n_ss) * np.exp(-gamma_c * t)})


# --- integrator ---------------------------------------------------------------

def _csr32(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.complex128)
    m.eliminate_zeros()
    m.sort_indices()
    m.indices = m.indices.astype(np.int32)
    m.indptr = m.indptr.astype(np.int32)
    return m


def _spectral_norm(m: np.ndarray) -> float:
    if not np.any(m):
        return 0.0
    if m.shape[0] <= 600:
        return float(np.linalg.norm(m, 2))
    return float(sp.linalg.svds(sp.csr_matrix(m), k=1, return_singular_vectors=False)[0])


class Integrator:
    """Prepared stepping data for one :class:`MasterEquation`.

    Instances hold no state between calls to :meth:`advance`, so one
    integrator may serve several threads.
    """

    def __init__(self, eq: MasterEquation, safety: float = DEFAULT_SAFETY):
        if safety <= 0:
            raise ValueError("safety must be positive")
        self.eq = eq
        self.safety = float(safety)
        h = eq.hamiltonian.matrix
        d = h.shape[0]
        hd = np.real(np.diag(h)).copy()
        h_off = h - np.diag(np.diag(h))
        k = h_off.astype(complex)
        dgen = -1j * (hd[:, None] - hd[None, :])
        jumps = []
        scale = _spectral_norm(h_off)
        for dp in eq.dissipators:
            if dp.rate == 0:
                continue
            c = math.sqrt(dp.rate) * dp.jump.matrix
            cdc = c.conj().T @ c
            if not np.any(c - np.diag(np.diag(c))):
                cv = np.diag(c)
                mod = np.abs(cv) ** 2
                dgen += cv[:, None] * cv.conj()[None, :] - 0.5 * (mod[:, None] + mod[None, :])
                continue
            k = k - 0.5j * cdc
            jumps.append(c)
            scale += _spectral_norm(cdc)
        np.fill_diagonal(dgen, 0.0)
        self.dim = d
        self.dgen = dgen
        self.use_if = bool(np.any(dgen))
        self.scale = scale
        self.max_step = self.safety / scale if scale > 0 else math.inf
        kc = _csr32(k)
        self._k = (kc.data, kc.indices, kc.indptr)
        if jumps:
            cc = _csr32(np.vstack(jumps))
            self._c = (cc.data, cc.indices, cc.indptr)
        else:
            self._c = (np.zeros(0, complex), np.zeros(0, np.int32), np.zeros(d + 1, np.int32))
        self.n_jumps = len(jumps)
        self._tables: dict = {}

    def check_step(self, h: float) -> None:
        if h > self.max_step * (1 + 1e-12):
            raise StepSizeError(
                f"step {h:.4g} exceeds the stability limit {self.max_step:.4g} "
                f"(safety {self.safety}, generator scale {self.scale:.4g})"
            )

    def substeps(self, dt: float) -> tuple[int, float]:
        if dt <= 0:
            raise ValueError("time increments must be positive")
        if math.isinf(self.max_step):
            return 1, dt
        n = max(1, math.ceil(dt / self.max_step * (1 - 1e-12)))
        return n, dt / n

    def _exp_tables(self, h: float):
        key = float(h)
        tab = self._tables.get(key)
        if tab is None:
            tab = (np.exp(0.5 * h * self.dgen), np.exp(h * self.dgen))
            if len(self._tables) > 8:
                self._tables.clear()
            self._tables[key] = tab
        return tab

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """``N(rho)``; the elementwise part is ``dgen * rho``."""
        return kernels.rhs(rho, *self._k, *self._c, self.n_jumps)

    def advance(self, rho: np.ndarray, dt: float, step: float | None = None) -> None:
        """Propagate the C-contiguous complex array ``rho`` in place by ``dt``."""
        if step is not None:
            self.check_step(step)
            n = max(1, round(dt / step))
            if abs(n * step - dt) > 1e-9 * max(dt, 1.0):
                raise StepSizeError("interval is not an integer multiple of the step")
            h = dt / n
        else:
            n, h = self.substeps(dt)
        if self.use_if:
            eh, ef = self._exp_tables(h)
        else:
            eh = ef = np.ones((1, 1), complex)
        kernels.propagate(rho, n, h, *self._k, *self._c, self.n_jumps, eh, ef, self.use_if)


def _observable_fn(op: Operator):
    m = op.matrix
    if not np.any(m - np.diag(np.diag(m))):
        diag = np.ascontiguousarray(np.diag(m))
        return lambda rho: complex(np.dot(np.diag(rho), diag))
    mt = np.ascontiguousarray(m.T)
    return lambda rho: complex(np.vdot(mt.conj(), rho))


def _check_state(rho: np.ndarray, t: float, positivity: bool) -> None:
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_DRIFT_TOL:
        raise InvariantError(f"trace drifted to {tr.real:.10g} at t = {t:.6g}")
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > HERMITICITY_TOL:
        raise InvariantError(f"Hermiticity lost (max |rho - rho^H| = {herm:.3e}) at t = {t:.6g}")
    if positivity:
        lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
        if lam < POSITIVITY_FLOOR:
            raise InvariantError(f"negative eigenvalue {lam:.3e} at t = {t:.6g}")


def evolve(rho0: DensityMatrix, eq: MasterEquation, grid, observables=(), *,
           safety: float = DEFAULT_SAFETY, step: float | None = None,
           store_states: bool = False, positivity_checks: int = 8,
           integrator: Integrator | None = None) -> TimeSeries:
    """Integrate ``eq`` from ``rho0`` at ``grid[0]`` and sample observables.

    Parameters
    ----------
    grid : array_like
        Strictly increasing sample times; ``rho0`` is the state at ``grid[0]``.
    observables : mapping or sequence of Operator
        Named observables (a sequence is named ``obs0, obs1, ...``).  Records
        are ``Tr(rho O)``; real-valued for Hermitian ``O``.
    safety : float
        Step-size safety factor of the stability rule.
    step : float, optional
        Explicit substep; raises :class:`StepSizeError` if it breaks the rule.
    positivity_checks : int
        Number of evenly spread samples (plus the last) at which the minimum
        eigenvalue is checked; trace and Hermiticity are checked at every
        sample.

    Raises
    ------
    InvariantError
        If the state leaves the set of density matrices mid-run.
    """
    if rho0.layout != eq.layout:
        raise ValueError("initial state and equation live on different layouts")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a non-empty, strictly increasing 1-D array")
    if not isinstance(observables, Mapping):
        observables = {f"obs{i}": o for i, o in enumerate(observables)}
    integ = integrator if integrator is not None else Integrator(eq, safety)
    if step is not None:
        integ.check_step(step)
    fns = {name: _observable_fn(op) for name, op in observables.items()}
    herm = {name: op.is_hermitian() for name, op in observables.items()}
    records = {name: np.empty(grid.size, dtype=complex) for name in fns}
    states = [] if store_states else None
    check_at = set()
    if positivity_checks > 0 and grid.size > 1:
        check_at = set(np.linspace(1, grid.size - 1, min(positivity_checks, grid.size - 1)).round().astype(int))
        check_at.add(grid.size - 1)

    rho = np.array(rho0.matrix, dtype=np.complex128, order="C")
    for i, t in enumerate(grid):
        if i > 0:
            integ.advance(rho, t - grid[i - 1], step)
            _check_state(rho, t, i in check_at)
        for name, fn in fns.items():
            records[name][i] = fn(rho)
        if store_states:
            states.append(DensityMatrix.from_matrix(rho0.layout, rho.copy(), validate=False))
    values = {n: (v.real.copy() if herm[n] else v) for n, v in records.items()}
    return TimeSeries(grid.copy(), values, states=states)


def steady_state(eq: MasterEquation, rho_guess: DensityMatrix, *, tol: float = 1e-10,
                 residual_tol: float = 1e-9, t_start: float | None = None,
                 max_time: float | None = None, safety: float = 0.5) -> DensityMatrix:
    """Long-time propagation with doubling checkpoints.

    Stops once ``max|rho(2t) - rho(t)| < tol`` and ``max|L(rho)| < residual_tol``.
    ``max_time`` defaults to ``1e4`` over the smallest positive rate.

    Raises
    ------
    ValueError
        If the equation has no active dissipator.
    SteadyStateError
        If ``max_time`` elapses first; carries the last residual and state.
    """
    rates = [dp.rate for dp in eq.dissipators if dp.rate > 0]
    if not rates:
        raise ValueError("steady state is not unique without dissipators")
    integ = Integrator(eq, safety)
    chunk = t_start if t_start is not None else 1.0 / sum(rates)
    limit = max_time if max_time is not None else 1e4 / min(rates)
    rho = np.array(rho_guess.matrix, dtype=np.complex128, order="C")
    elapsed = 0.0
    residual = math.inf
    while elapsed < limit:
        prev = rho.copy()
        integ.advance(rho, chunk)
        elapsed += chunk
        _check_state(rho, elapsed, False)
        diff = float(np.max(np.abs(rho - prev)))
        if diff < tol:
            residual = float(np.max(np.abs(eq.apply(rho))))
            if residual < residual_tol:
                rho = 0.5 * (rho + rho.conj().T)
                rho /= np.trace(rho).real
                return DensityMatrix.from_matrix(eq.layout, rho)
        chunk *= 2.0
    raise SteadyStateError(
        f"no steady state within t = {limit:.4g} (last residual {residual:.3e})",
        residual, DensityMatrix.from_matrix(eq.layout, rho, validate=False),
    )
