"""Pure-Python (numpy/scipy.sparse) implementation of the stepping kernels.

Mirrors the compiled ``_kernels`` module function for function; selected by
:mod:`thermbath.kernels` when the extension is unavailable.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _operators(d, k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, n_jumps):
    k = sp.csr_matrix((np.asarray(k_data, dtype=complex), k_ind, k_ptr), shape=(d, d))
    jumps = []
    if n_jumps:
        stacked = sp.csr_matrix(
            (np.asarray(c_data, dtype=complex), c_ind, c_ptr), shape=(n_jumps * d, d)
        )
        jumps = [stacked[m * d:(m + 1) * d] for m in range(n_jumps)]
    return k, jumps


def _apply(rho, k, jumps):
    x = k @ rho
    out = -1j * (x - x.conj().T)
    if jumps:
        for c in jumps:
            y = c @ rho
            out += c @ y.conj().T
        out = 0.5 * (out + out.conj().T)
    return out


def rhs(rho, k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, n_jumps):
    """Evaluate ``N(rho)`` once (used by tests and the reference path)."""
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    k, jumps = _operators(rho.shape[0], k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, n_jumps)
    return _apply(rho, k, jumps)


def propagate(rho, n_steps, h, k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, n_jumps,
              e_half, e_full, use_if):
    """Advance ``rho`` in place by ``n_steps`` integrating-factor RK4 steps."""
    if rho.dtype != np.complex128 or not rho.flags.c_contiguous:
        raise ValueError("rho must be a C-contiguous complex128 array")
    k, jumps = _operators(rho.shape[0], k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, n_jumps)
    u = rho.copy()
    for _ in range(int(n_steps)):
        k1 = _apply(u, k, jumps)
        if use_if:
            ehu = e_half * u
            efu = e_full * u
            k2 = _apply(e_half * (u + 0.5 * h * k1), k, jumps)
            k3 = _apply(ehu + 0.5 * h * k2, k, jumps)
            k4 = _apply(efu + h * (e_half * k3), k, jumps)
            u = efu + (h / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
        else:
            k2 = _apply(u + 0.5 * h * k1, k, jumps)
            k3 = _apply(u + 0.5 * h * k2, k, jumps)
            k4 = _apply(u + h * k3, k, jumps)
            u = u + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    rho[...] = u
