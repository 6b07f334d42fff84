"""Operators and states on spin-1/2 x truncated Fock spaces.

Basis ordering is fixed: the spin factor (if present) comes first, then the
modes in declaration order, so a basis index reads
``spin * prod(cutoffs) + sum_i n_i * stride_i`` with row-major strides.  The
spin basis is ``(|up>, |down>)``; ``sigma_z = diag(+1, -1)``.

Operators and density matrices are immutable: their matrices are stored as
read-only arrays and every algebraic operation returns a new object.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
THERMAL_TAIL_TOL = 1e-6


class LayoutError(ValueError):
    """Raised when operators or states live on incompatible layouts."""


class TruncationError(ValueError):
    """Raised when a requested state does not fit into the Fock cutoff."""


@dataclass(frozen=True)
class HilbertLayout:
    """Tensor-product layout: optional spin-1/2 followed by bosonic modes."""

    spin_present: bool
    mode_cutoffs: tuple[int, ...] = ()

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in self.mode_cutoffs)
        if any(c < 1 for c in cutoffs):
            raise ValueError(f"mode cutoffs must be positive, got {cutoffs}")
        object.__setattr__(self, "mode_cutoffs", cutoffs)

    @property
    def n_modes(self) -> int:
        return len(self.mode_cutoffs)

    @property
    def spin_dim(self) -> int:
        return 2 if self.spin_present else 1

    @property
    def dim(self) -> int:
        return self.spin_dim * int(np.prod(self.mode_cutoffs, dtype=np.int64))

    @property
    def factor_dims(self) -> tuple[int, ...]:
        return ((2,) if self.spin_present else ()) + self.mode_cutoffs

    def check_mode(self, mode_index: int) -> None:
        if not 0 <= mode_index < self.n_modes:
            raise IndexError(
                f"mode index {mode_index} out of range for {self.n_modes} mode(s)"
            )

    def index(self, spin: int = 0, occupations: Sequence[int] = ()) -> int:
        """Basis index of ``|spin, n_1, n_2, ...>`` (spin 0 = up)."""
        idx = spin if self.spin_present else 0
        for n, c in zip(occupations, self.mode_cutoffs):
            idx = idx * c + n
        return idx

    def occupations(self, mode_index: int) -> np.ndarray:
        """Occupation number of ``mode_index`` for every basis state."""
        self.check_mode(mode_index)
        grids = np.indices(self.factor_dims).reshape(len(self.factor_dims), -1)
        return grids[mode_index + (1 if self.spin_present else 0)]

    def spin_values(self) -> np.ndarray:
        """``sigma_z`` eigenvalue (+1 up, -1 down) of every basis state."""
        if not self.spin_present:
            raise LayoutError("layout has no spin factor")
        grids = np.indices(self.factor_dims).reshape(len(self.factor_dims), -1)
        return 1 - 2 * grids[0]

    def to_dict(self) -> dict:
        return {"spin_present": self.spin_present, "mode_cutoffs": list(self.mode_cutoffs)}

    @classmethod
    def from_dict(cls, d: dict) -> "HilbertLayout":
        return cls(bool(d["spin_present"]), tuple(d["mode_cutoffs"]))


def _frozen(matrix) -> np.ndarray:
    m = np.array(matrix, dtype=np.complex128, copy=True)
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex matrix bound to a :class:`HilbertLayout`."""

    layout: HilbertLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise LayoutError(
                f"matrix shape {m.shape} does not match layout dimension {self.layout.dim}"
            )
        object.__setattr__(self, "matrix", m)

    def _check(self, other: "Operator") -> None:
        if not isinstance(other, Operator):
            raise TypeError(f"expected Operator, got {type(other).__name__}")
        if other.layout != self.layout:
            raise LayoutError("operators live on different layouts")

    def __add__(self, other):
        self._check(other)
        return Operator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return Operator(self.layout, self.matrix - other.matrix)

    def __neg__(self):
        return Operator(self.layout, -self.matrix)

    def __mul__(self, scalar):
        if isinstance(scalar, Operator):
            return self @ scalar
        return Operator(self.layout, complex(scalar) * self.matrix)

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return Operator(self.layout, self.matrix @ other.matrix)

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T)

    adjoint = dag

    def commutator(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix @ other.matrix - other.matrix @ self.matrix)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0)) <= tol

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))

    def to_json(self) -> str:
        return _dump("operator", self.layout, self.matrix)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite :class:`Operator`.

    ``discarded_mass`` records probability removed by Fock truncation before
    renormalization (zero for states built without truncation).
    """

    op: Operator
    discarded_mass: float = 0.0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.validate:
            check_density(self.op.matrix)

    @classmethod
    def from_matrix(cls, layout: HilbertLayout, matrix, discarded_mass: float = 0.0,
                    validate: bool = True) -> "DensityMatrix":
        return cls(Operator(layout, matrix), discarded_mass, validate)

    @classmethod
    def from_ket(cls, layout: HilbertLayout, ket) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls.from_matrix(layout, np.outer(ket, ket.conj()))

    @property
    def layout(self) -> HilbertLayout:
        return self.op.layout

    @property
    def matrix(self) -> np.ndarray:
        return self.op.matrix

    def to_json(self) -> str:
        return _dump("density_matrix", self.layout, self.matrix, self.discarded_mass)


def check_density(m: np.ndarray, herm_tol: float = HERMITIAN_TOL, trace_tol: float = TRACE_TOL,
                  pos_tol: float = POSITIVITY_TOL) -> None:
    """Raise ``ValueError`` unless ``m`` is a valid density matrix."""
    herm = float(np.max(np.abs(m - m.conj().T), initial=0.0))
    if herm > herm_tol:
        raise ValueError(f"density matrix not Hermitian (max |rho - rho^H| = {herm:.3e})")
    tr = np.trace(m)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {tr.real:.12g} differs from 1")
    lam = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
    if lam < -pos_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam:.3e}")


# --- elementary operators -------------------------------------------------

def identity(layout: HilbertLayout) -> Operator:
    return Operator(layout, np.eye(layout.dim))


def ladder(cutoff: int) -> np.ndarray:
    """Single-mode annihilation matrix on ``|0..cutoff-1>``."""
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)


def embed(layout: HilbertLayout, factor_ops: dict) -> Operator:
    """Kronecker product placing single-factor matrices into ``layout``.

    ``factor_ops`` maps ``"spin"`` or a mode index to a matrix; unspecified
    factors get the identity.
    """
    mats = []
    if layout.spin_present:
        mats.append(np.asarray(factor_ops.get("spin", np.eye(2)), dtype=complex))
    elif "spin" in factor_ops:
        raise LayoutError("layout has no spin factor")
    for i, c in enumerate(layout.mode_cutoffs):
        mats.append(np.asarray(factor_ops.get(i, np.eye(c)), dtype=complex))
    for key in factor_ops:
        if key != "spin":
            layout.check_mode(key)
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return Operator(layout, out)


def mode_op(layout: HilbertLayout, mode_index: int) -> Operator:
    """Annihilation operator of ``mode_index`` embedded in the full space."""
    layout.check_mode(mode_index)
    return embed(layout, {mode_index: ladder(layout.mode_cutoffs[mode_index])})


def number_op(layout: HilbertLayout, mode_index: int) -> Operator:
    layout.check_mode(mode_index)
    return Operator(layout, np.diag(layout.occupations(mode_index).astype(complex)))


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
    "up": np.array([[1, 0], [0, 0]], dtype=complex),
    "down": np.array([[0, 0], [0, 1]], dtype=complex),
}


def spin_op(layout: HilbertLayout, which: str) -> Operator:
    """Spin operator ``which`` in {x, y, z, +, -, up, down} on the full space.

    ``+`` raises ``|down> -> |up>``; ``up``/``down`` are projectors.
    """
    if which not in _PAULI:
        raise ValueError(f"unknown spin operator {which!r}")
    return embed(layout, {"spin": _PAULI[which]})


def sigma_x(layout):
    return spin_op(layout, "x")


def sigma_y(layout):
    return spin_op(layout, "y")


def sigma_z(layout):
    return spin_op(layout, "z")


def sigma_plus(layout):
    return spin_op(layout, "+")


def sigma_minus(layout):
    return spin_op(layout, "-")


def displacement_matrix(cutoff: int, alpha: complex) -> np.ndarray:
    """``exp(alpha a^H - alpha* a)`` on a single truncated mode.

    Computed by scaling-and-squaring Pade (``scipy.linalg.expm``).
    """
    a = ladder(cutoff)
    return sla.expm(alpha * a.conj().T - np.conj(alpha) * a)


def displacement_op(layout: HilbertLayout, mode_index: int, alpha: complex) -> Operator:
    """Displacement operator on ``mode_index``; requires ``|alpha|^2 <= N_c/4``."""
    layout.check_mode(mode_index)
    cutoff = layout.mode_cutoffs[mode_index]
    if abs(alpha) ** 2 > cutoff / 4.0:
        raise TruncationError(
            f"|alpha|^2 = {abs(alpha) ** 2:.4g} exceeds cutoff/4 = {cutoff / 4:.4g}; "
            "increase the mode cutoff"
        )
    return embed(layout, {mode_index: displacement_matrix(cutoff, alpha)})


def thermal_populations(nbar: float, cutoff: int) -> np.ndarray:
    """Untruncated geometric law ``nbar^n / (nbar+1)^(n+1)`` for ``n < cutoff``."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    n = np.arange(cutoff)
    if nbar == 0:
        return (n == 0).astype(float)
    return np.exp(n * np.log(nbar) - (n + 1) * np.log1p(nbar))


def thermal_tail(nbar: float, cutoff: int) -> float:
    """Probability mass of the geometric law at ``n >= cutoff``."""
    if nbar == 0:
        return 0.0
    return float((nbar / (nbar + 1.0)) ** cutoff)


def truncated_thermal(nbar: float, cutoff: int, tail_tol: float = THERMAL_TAIL_TOL):
    """Renormalized truncated populations and the discarded mass."""
    tail = thermal_tail(nbar, cutoff)
    if tail >= tail_tol:
        raise TruncationError(
            f"thermal tail {tail:.3e} for nbar={nbar} at cutoff {cutoff} exceeds {tail_tol:g}; "
            "increase the mode cutoff"
        )
    p = thermal_populations(nbar, cutoff)
    return p / p.sum(), tail


def _spin_projector(spin_state: str) -> np.ndarray:
    if spin_state not in ("up", "down"):
        raise ValueError("spin_state must be 'up' or 'down'")
    return _PAULI[spin_state]


def product_state(layout: HilbertLayout, spin_state: str = "down",
                  mode_states: dict | None = None, discarded_mass: float = 0.0) -> DensityMatrix:
    """Product density matrix from per-factor matrices (vacuum by default)."""
    factors = {}
    if layout.spin_present:
        factors["spin"] = _spin_projector(spin_state)
    for i, c in enumerate(layout.mode_cutoffs):
        vac = np.zeros((c, c), dtype=complex)
        vac[0, 0] = 1.0
        factors[i] = vac
    factors.update(mode_states or {})
    return DensityMatrix(embed(layout, factors), discarded_mass)


def thermal_state(layout: HilbertLayout, mode_index: int, nbar: float, *,
                  spin_state: str = "down", tail_tol: float = THERMAL_TAIL_TOL) -> DensityMatrix:
    """Thermal state of ``mode_index``; other modes in vacuum, spin in ``spin_state``.

    The truncated geometric populations are renormalized; the removed mass is
    stored in ``discarded_mass``.  Raises :class:`TruncationError` if it is not
    below ``tail_tol``.
    """
    layout.check_mode(mode_index)
    p, tail = truncated_thermal(nbar, layout.mode_cutoffs[mode_index], tail_tol)
    return product_state(layout, spin_state, {mode_index: np.diag(p)}, tail)


def tensor(*states: DensityMatrix) -> DensityMatrix:
    """Tensor product of states; at most one factor may carry a spin."""
    spin = [s.layout.spin_present for s in states]
    if sum(spin) > 1:
        raise LayoutError("more than one spin factor")
    if any(spin[1:]):
        raise LayoutError("the spin factor must come first")
    cutoffs: tuple[int, ...] = ()
    m = np.ones((1, 1), dtype=complex)
    for s in states:
        cutoffs += s.layout.mode_cutoffs
        m = np.kron(m, s.matrix)
    layout = HilbertLayout(any(spin), cutoffs)
    lost = 1.0 - float(np.prod([1.0 - s.discarded_mass for s in states]))
    return DensityMatrix.from_matrix(layout, m, lost)


def partial_trace(rho: DensityMatrix, keep_spin: bool = False,
                  keep_modes: Sequence[int] = ()) -> DensityMatrix:
    """Reduced state on the kept factors (order preserved)."""
    layout = rho.layout
    keep_modes = sorted(set(keep_modes))
    for i in keep_modes:
        layout.check_mode(i)
    if keep_spin and not layout.spin_present:
        raise LayoutError("layout has no spin factor")
    dims = layout.factor_dims
    off = 1 if layout.spin_present else 0
    kept = ([0] if keep_spin else []) + [i + off for i in keep_modes]
    traced = [f for f in range(len(dims)) if f not in kept]
    t = rho.matrix.reshape(dims + dims)
    nf = len(dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:nf])
    col = list(letters[nf:2 * nf])
    for f in traced:
        col[f] = row[f]
    out_idx = "".join(row[f] for f in kept) + "".join(col[f] for f in kept)
    red = np.einsum("".join(row) + "".join(col) + "->" + out_idx, t)
    kd = int(np.prod([dims[f] for f in kept], dtype=np.int64))
    new_layout = HilbertLayout(bool(keep_spin), tuple(layout.mode_cutoffs[i] for i in keep_modes))
    return DensityMatrix.from_matrix(new_layout, red.reshape(kd, kd), rho.discarded_mass,
                                     validate=False)


def expectation(rho: DensityMatrix, obs: Operator) -> complex:
    """``Tr(rho obs)``."""
    if rho.layout != obs.layout:
        raise LayoutError("state and observable live on different layouts")
    return complex(np.einsum("ij,ji->", rho.matrix, obs.matrix))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho: DensityMatrix, sigma: DensityMatrix, tol: float = POSITIVITY_TOL) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``."""
    if rho.layout != sigma.layout:
        raise LayoutError("states live on different layouts")
    for s in (rho, sigma):
        lam = float(np.linalg.eigvalsh(0.5 * (s.matrix + s.matrix.conj().T))[0])
        if lam < -tol:
            raise ValueError(f"state has negative eigenvalue {lam:.3e}")
    sr = _sqrtm_psd(rho.matrix)
    w = np.linalg.eigvalsh(sr @ sigma.matrix @ sr)
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


# --- JSON debug format ----------------------------------------------------

def _dump(kind: str, layout: HilbertLayout, matrix: np.ndarray, discarded: float = 0.0) -> str:
    pairs = np.stack([matrix.real.ravel(), matrix.imag.ravel()], axis=1).tolist()
    doc = {"kind": kind, "dim": layout.dim, "layout": layout.to_dict(), "data": pairs}
    if kind == "density_matrix":
        doc["discarded_mass"] = discarded
    return json.dumps(doc)


def load_json(text: str):
    """Inverse of ``Operator.to_json`` / ``DensityMatrix.to_json``."""
    doc = json.loads(text)
    layout = HilbertLayout.from_dict(doc["layout"])
    if doc["dim"] != layout.dim:
        raise LayoutError("dimension does not match layout")
    pairs = np.asarray(doc["data"], dtype=float).reshape(-1, 2)
    m = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(layout.dim, layout.dim)
    if doc["kind"] == "operator":
        return Operator(layout, m)
    if doc["kind"] == "density_matrix":
        return DensityMatrix.from_matrix(layout, m, doc.get("discarded_mass", 0.0))
    raise ValueError(f"unknown kind {doc['kind']!r}")
