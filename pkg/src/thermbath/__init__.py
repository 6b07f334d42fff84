"""Engineered thermal reservoirs for a bosonic mode and finite-temperature
vibronic transfer dynamics.

Submodules
----------
hilbert
    Spin-plus-modes Hilbert spaces, operators and density matrices.
lindblad
    Lindblad master equations, time evolution and steady states.
lvc
    Linear vibronic coupling models with thermal mode baths.
transfer
    Transfer rates, spectra, resonances and perturbative rate formulas.
probe
    Blue-sideband thermometry signals and population fits.
allaser
    Coherent red plus stochastic blue sideband bath.
cli
    Configuration-driven command-line runner.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
