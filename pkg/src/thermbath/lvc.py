"""Linear vibronic coupling (spin-boson) models with thermal baths.

``H = dE/2 sz + V sx + sum_i [ g_i/2 sz (a_i + a_i^H) + w_i a_i^H a_i ]``

The donor is ``|up>`` (``sz = +1``).  Its surface is centred at
``<(a + a^H)/2> = -g/(2w)``; the acceptor surface at ``+g/(2w)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .hilbert import (
    DensityMatrix,
    HilbertLayout,
    Operator,
    TruncationError,
    displacement_matrix,
    embed,
    mode_op,
    number_op,
    sigma_x,
    sigma_y,
    sigma_z,
    thermal_populations,
)
from .lindblad import Dissipator, MasterEquation, thermal_dissipators

CUTOFF_TAIL_TOL = 1e-6
CUTOFF_HEADROOM = 1.3


@dataclass(frozen=True)
class BathSpec:
    """Thermal bath of one mode: damping ``gamma`` and occupation ``nbar``."""

    gamma: float = 0.0
    nbar: float = 0.0

    def __post_init__(self):
        if self.gamma < 0 or self.nbar < 0:
            raise ValueError(f"bath gamma and nbar must be non-negative, got {self}")


@dataclass(frozen=True)
class ImperfectionSpec:
    """Spin dephasing (jump ``sy``) and common motional dephasing (jump ``a^H a``)."""

    gamma_z: float = 0.0
    gamma_m: float = 0.0

    def __post_init__(self):
        if self.gamma_z < 0 or self.gamma_m < 0:
            raise ValueError(f"imperfection rates must be non-negative, got {self}")


@dataclass(frozen=True)
class ModeSpec:
    g: float
    omega: float
    bath: BathSpec = field(default_factory=BathSpec)

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"mode frequency must be positive, got {self.omega}")


@dataclass(frozen=True)
class LvcModel:
    """Parameter record of a one- or two-mode LVC model.

    ``cutoffs`` may be ``None``; :attr:`resolved_cutoffs` then applies
    :func:`default_cutoff` to every mode.
    """

    delta_e: float
    v: float
    modes: tuple = ()
    imperfections: ImperfectionSpec = field(default_factory=ImperfectionSpec)
    cutoffs: tuple | None = None

    def __post_init__(self):
        modes = tuple(self.modes)
        if not 1 <= len(modes) <= 2:
            raise ValueError("an LVC model needs one or two modes")
        object.__setattr__(self, "modes", modes)
        if self.cutoffs is not None:
            cut = tuple(int(c) for c in self.cutoffs)
            if len(cut) != len(modes) or any(c < 2 for c in cut):
                raise ValueError("one cutoff >= 2 per mode is required")
            object.__setattr__(self, "cutoffs", cut)

    @property
    def resolved_cutoffs(self) -> tuple[int, ...]:
        if self.cutoffs is not None:
            return self.cutoffs
        return tuple(default_cutoff(m.bath.nbar, m.g / (2 * m.omega)) for m in self.modes)

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(True, self.resolved_cutoffs)

    def with_delta_e(self, delta_e: float) -> "LvcModel":
        return replace(self, delta_e=float(delta_e))

    def with_cutoffs(self, cutoffs: Sequence[int] | None) -> "LvcModel":
        return replace(self, cutoffs=None if cutoffs is None else tuple(cutoffs))

    def to_dict(self) -> dict:
        return {
            "delta_e": self.delta_e,
            "v": self.v,
            "modes": [{"g": m.g, "omega": m.omega,
                       "bath": {"gamma": m.bath.gamma, "nbar": m.bath.nbar}} for m in self.modes],
            "imperfections": {"gamma_z": self.imperfections.gamma_z,
                              "gamma_m": self.imperfections.gamma_m},
            "cutoffs": list(self.resolved_cutoffs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LvcModel":
        modes = tuple(ModeSpec(m["g"], m["omega"], BathSpec(**m.get("bath", {}))) for m in d["modes"])
        cut = d.get("cutoffs")
        return cls(d["delta_e"], d["v"], modes, ImperfectionSpec(**d.get("imperfections", {})),
                   tuple(cut) if cut else None)


def single_mode(delta_e, v, g, omega=1.0, gamma=0.0, nbar=0.0, gamma_z=0.0, gamma_m=0.0,
                cutoff=None) -> LvcModel:
    """Convenience constructor for the one-mode model."""
    return LvcModel(delta_e, v, (ModeSpec(g, omega, BathSpec(gamma, nbar)),),
                    ImperfectionSpec(gamma_z, gamma_m), None if cutoff is None else (cutoff,))


def displaced_thermal_populations(nbar: float, alpha: float, size: int) -> np.ndarray:
    """Fock populations of ``D(alpha) thermal(nbar) D(alpha)^H`` for ``n < size``.

    Evaluated in an enlarged space so the returned entries are converged.
    """
    big = size + _margin(nbar, alpha)
    p = thermal_populations(nbar, big)
    dm = displacement_matrix(big, alpha)
    pops = np.einsum("nk,k,nk->n", dm, p, dm.conj()).real
    return pops[:size]


def _margin(nbar: float, alpha: float) -> int:
    thermal = 0 if nbar == 0 else math.ceil(math.log(1e-16) / math.log(nbar / (nbar + 1.0)))
    return int(40 + thermal + 8 * abs(alpha) ** 2)


def default_cutoff(nbar: float, alpha: float, tail_tol: float = CUTOFF_TAIL_TOL,
                   headroom: float = CUTOFF_HEADROOM) -> int:
    """Smallest ``N`` whose displaced-thermal tail is below ``tail_tol``, times ``headroom``."""
    probe = 200
    pops = displaced_thermal_populations(nbar, alpha, probe)
    tail = 1.0 - np.cumsum(pops)
    idx = np.nonzero(tail < tail_tol)[0]
    if idx.size == 0:
        raise TruncationError(f"nbar={nbar}, alpha={alpha} needs a cutoff beyond {probe}")
    n_min = int(idx[0]) + 1
    return max(2, math.ceil(n_min * headroom))


def build_hamiltonian(model: LvcModel) -> Operator:
    layout = model.layout
    h = 0.5 * model.delta_e * sigma_z(layout) + model.v * sigma_x(layout)
    sz = sigma_z(layout)
    for i, m in enumerate(model.modes):
        a = mode_op(layout, i)
        h = h + (0.5 * m.g) * (sz @ (a + a.dag())) + m.omega * number_op(layout, i)
    return h


def build_master_equation(model: LvcModel) -> MasterEquation:
    """Hamiltonian, per-mode thermal baths, ``sy`` dephasing and ``a^H a`` dephasing."""
    layout = model.layout
    diss: list[Dissipator] = []
    for i, m in enumerate(model.modes):
        diss += thermal_dissipators(mode_op(layout, i), m.bath.gamma, m.bath.nbar)
    diss.append(Dissipator(sigma_y(layout), model.imperfections.gamma_z))
    for i in range(len(model.modes)):
        diss.append(Dissipator(number_op(layout, i), model.imperfections.gamma_m))
    if model.imperfections.gamma_z == 0 and model.imperfections.gamma_m == 0:
        diss = diss[:2 * len(model.modes)]
    return MasterEquation(build_hamiltonian(model), tuple(diss))


def initial_donor_state(model: LvcModel, site: str = "donor",
                        tail_tol: float = CUTOFF_TAIL_TOL) -> DensityMatrix:
    """Displaced thermal state on the chosen electronic surface.

    ``site="donor"`` gives ``|D><D| (x) prod_i D(-g_i/2w_i) thermal(nbar_i) D^H``;
    ``site="acceptor"`` uses ``|A>`` and displacements ``+g_i/2w_i``.  Each mode
    factor is built in an enlarged space and projected onto the cutoff; the
    projected-away mass must stay below ``tail_tol``.
    """
    if site not in ("donor", "acceptor"):
        raise ValueError("site must be 'donor' or 'acceptor'")
    sign = -1.0 if site == "donor" else 1.0
    layout = model.layout
    factors = {"spin": np.diag([1.0, 0.0]) if site == "donor" else np.diag([0.0, 1.0])}
    kept = 1.0
    for i, (m, cut) in enumerate(zip(model.modes, layout.mode_cutoffs)):
        alpha = sign * m.g / (2.0 * m.omega)
        big = cut + _margin(m.bath.nbar, alpha)
        p = thermal_populations(m.bath.nbar, big)
        dm = displacement_matrix(big, alpha)
        rho = (dm * p) @ dm.conj().T
        block = rho[:cut, :cut]
        mass = float(np.trace(block).real)
        if 1.0 - mass >= tail_tol:
            raise TruncationError(
                f"mode {i}: displaced thermal state loses {1 - mass:.3e} beyond cutoff {cut}; "
                "increase the cutoff"
            )
        kept *= mass
        factors[i] = block / mass
    return DensityMatrix(embed(layout, factors), 1.0 - kept)


def temperature_from_nbar(nbar: float, omega: float = 1.0) -> float:
    """``k_B T = omega / ln(1 + 1/nbar)``; ``nbar = 0`` maps to zero temperature."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    if nbar == 0:
        return 0.0
    return omega / math.log1p(1.0 / nbar)


def nbar_from_temperature(k_bt: float, omega: float = 1.0) -> float:
    """Inverse of :func:`temperature_from_nbar`."""
    if k_bt < 0:
        raise ValueError("temperature must be non-negative")
    if k_bt == 0:
        return 0.0
    return 1.0 / math.expm1(omega / k_bt)


def donor_projector_diag(layout: HilbertLayout) -> np.ndarray:
    """Diagonal of ``|D><D| (x) 1`` in the full basis."""
    return (layout.spin_values() > 0).astype(float)


__all__ = [
    "BathSpec", "ImperfectionSpec", "ModeSpec", "LvcModel", "single_mode",
    "default_cutoff", "displaced_thermal_populations", "build_hamiltonian",
    "build_master_equation", "initial_donor_state", "temperature_from_nbar",
    "nbar_from_temperature", "donor_projector_diag",
]
