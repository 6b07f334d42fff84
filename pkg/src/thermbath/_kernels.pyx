# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Lindblad stepping kernels.

The generator is split as ``L = D + N``:

* ``D`` acts elementwise, ``(D rho)_jk = dexp_jk * rho_jk``; it is applied
  exactly through precomputed ``exp(D h/2)`` and ``exp(D h)`` tables.
* ``N(rho) = -i (K rho - (K rho)^H) + sum_m C_m rho C_m^H`` with ``K`` and the
  stacked jump block ``C`` in CSR form.

``N`` relies on ``rho`` being Hermitian (``rho K^H == (K rho)^H``); every stage
of the step keeps that property, so callers only have to start from a
Hermitian state.

All complex arrays are handled as interleaved doubles so the row updates
vectorize.
"""

import numpy as np
from libc.string cimport memset


cdef inline void _axpy_row(double* dst, const double* src, double vr, double vi,
                           Py_ssize_t d) noexcept nogil:
    # dst += v * src over one row of d complex entries
    cdef Py_ssize_t j
    cdef double sr, si
    for j in range(d):
        sr = src[2 * j]
        si = src[2 * j + 1]
        dst[2 * j] += vr * sr - vi * si
        dst[2 * j + 1] += vr * si + vi * sr


cdef void _sparse_times_dense(double* out, const double* rho, Py_ssize_t d,
                              const double* data, const int* ind, const int* ptr,
                              Py_ssize_t row0) noexcept nogil:
    # out (d x d) = A[row0:row0+d, :] @ rho
    cdef Py_ssize_t i, p
    memset(out, 0, 2 * d * d * sizeof(double))
    for i in range(d):
        for p in range(ptr[row0 + i], ptr[row0 + i + 1]):
            _axpy_row(out + 2 * d * i, rho + 2 * d * ind[p],
                      data[2 * p], data[2 * p + 1], d)


cdef void _rhs(const double* rho, double* out, double* work, double* work2,
               Py_ssize_t d,
               const double* k_data, const int* k_ind, const int* k_ptr,
               const double* c_data, const int* c_ind, const int* c_ptr,
               int n_jumps) noexcept nogil:
    cdef Py_ssize_t i, j, k, p, q, row0
    cdef double xr, xi

    _sparse_times_dense(work, rho, d, k_data, k_ind, k_ptr, 0)
    # out = -i (X - X^H); out_ij = -i (X_ij - conj(X_ji))
    for i in range(d):
        out[2 * (d * i + i)] = 2.0 * work[2 * (d * i + i) + 1]
        out[2 * (d * i + i) + 1] = 0.0
        for j in range(i + 1, d):
            xr = work[2 * (d * i + j)] - work[2 * (d * j + i)]
            xi = work[2 * (d * i + j) + 1] + work[2 * (d * j + i) + 1]
            out[2 * (d * i + j)] = xi
            out[2 * (d * i + j) + 1] = -xr
            out[2 * (d * j + i)] = xi
            out[2 * (d * j + i) + 1] = xr

    for k in range(n_jumps):
        row0 = k * d
        # C rho C^H = C (C rho)^H for Hermitian rho
        _sparse_times_dense(work, rho, d, c_data, c_ind, c_ptr, row0)
        _conj_transpose(work2, work, d)
        for i in range(d):
            for p in range(c_ptr[row0 + i], c_ptr[row0 + i + 1]):
                _axpy_row(out + 2 * d * i, work2 + 2 * d * c_ind[p],
                          c_data[2 * p], c_data[2 * p + 1], d)
    if n_jumps > 0:
        _hermitize(out, d)


cdef void _hermitize(double* m, Py_ssize_t d) noexcept nogil:
    # replace m by (m + m^H)/2 so roundoff cannot build an anti-Hermitian part
    cdef Py_ssize_t i, j
    cdef double re, im
    for i in range(d):
        m[2 * (d * i + i) + 1] = 0.0
        for j in range(i + 1, d):
            re = 0.5 * (m[2 * (d * i + j)] + m[2 * (d * j + i)])
            im = 0.5 * (m[2 * (d * i + j) + 1] - m[2 * (d * j + i) + 1])
            m[2 * (d * i + j)] = re
            m[2 * (d * i + j) + 1] = im
            m[2 * (d * j + i)] = re
            m[2 * (d * j + i) + 1] = -im


cdef void _conj_transpose(double* dst, const double* src, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j, ib, jb, i1, j1
    cdef Py_ssize_t nb = (d + 15) // 16
    for ib in range(nb):
        i1 = min(16 * ib + 16, d)
        for jb in range(nb):
            j1 = min(16 * jb + 16, d)
            for i in range(16 * ib, i1):
                for j in range(16 * jb, j1):
                    dst[2 * (d * j + i)] = src[2 * (d * i + j)]
                    dst[2 * (d * j + i) + 1] = -src[2 * (d * i + j) + 1]


cdef class _Csr:
    cdef const double[::1] data
    cdef const int[::1] ind
    cdef const int[::1] ptr

    def __init__(self, data, ind, ptr):
        data = np.ascontiguousarray(data, dtype=np.complex128)
        self.data = data.view(np.float64) if data.size else np.zeros(2)
        ind = np.ascontiguousarray(ind, dtype=np.int32)
        self.ind = ind if ind.size else np.zeros(1, dtype=np.int32)
        self.ptr = np.ascontiguousarray(ptr, dtype=np.int32)


def rhs(rho, k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, int n_jumps):
    """Evaluate ``N(rho)`` once (used by tests and the reference path)."""
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    cdef Py_ssize_t d = rho.shape[0]
    out = np.empty((d, d), dtype=np.complex128)
    work = np.empty((2, d, d), dtype=np.complex128)
    cdef _Csr kc = _Csr(k_data, k_ind, k_ptr)
    cdef _Csr cc = _Csr(c_data, c_ind, c_ptr)
    cdef const double[::1] r = rho.reshape(-1).view(np.float64)
    cdef double[::1] o = out.reshape(-1).view(np.float64)
    cdef double[::1] w = work.reshape(-1).view(np.float64)
    with nogil:
        _rhs(&r[0], &o[0], &w[0], &w[2 * d * d], d, &kc.data[0], &kc.ind[0], &kc.ptr[0],
             &cc.data[0], &cc.ind[0], &cc.ptr[0], n_jumps)
    return out


def propagate(rho, Py_ssize_t n_steps, double h,
              k_data, k_ind, k_ptr, c_data, c_ind, c_ptr, int n_jumps,
              e_half, e_full, bint use_if):
    """Advance ``rho`` in place by ``n_steps`` integrating-factor RK4 steps.

    With ``use_if`` false the exponential tables are ignored and the update is
    the classic RK4 step for ``N`` alone.
    """
    if rho.dtype != np.complex128 or not rho.flags.c_contiguous:
        raise ValueError("rho must be a C-contiguous complex128 array")
    cdef Py_ssize_t d = rho.shape[0]
    cdef Py_ssize_t n2 = 2 * d * d
    cdef Py_ssize_t step, x
    cdef double h2 = 0.5 * h, h3 = h / 3.0, h6 = h / 6.0
    cdef double er, ei, fr, fi, ur, ui, kr, ki, tr, ti
    cdef _Csr kc = _Csr(k_data, k_ind, k_ptr)
    cdef _Csr cc = _Csr(c_data, c_ind, c_ptr)

    bufs = np.empty((7, n2), dtype=np.float64)
    if not use_if:
        e_half = e_full = np.ones((d, d), dtype=np.complex128)
    e_half = np.ascontiguousarray(e_half, dtype=np.complex128)
    e_full = np.ascontiguousarray(e_full, dtype=np.complex128)
    cdef double[:, ::1] b = bufs
    cdef double[::1] u_mv = rho.reshape(-1).view(np.float64)
    cdef const double[::1] eh_mv = e_half.reshape(-1).view(np.float64)
    cdef const double[::1] ef_mv = e_full.reshape(-1).view(np.float64)
    cdef double* u = &u_mv[0]
    cdef double* kk = &b[0, 0]
    cdef double* st = &b[1, 0]
    cdef double* acc = &b[2, 0]
    cdef double* w = &b[3, 0]
    cdef double* ehu = &b[4, 0]
    cdef double* efu = &b[5, 0]
    cdef double* w2 = &b[6, 0]
    cdef const double* E_h = &eh_mv[0]
    cdef const double* E_f = &ef_mv[0]
    cdef const double* kd = &kc.data[0]
    cdef const int* ki_ = &kc.ind[0]
    cdef const int* kp = &kc.ptr[0]
    cdef const double* cd = &cc.data[0]
    cdef const int* ci_ = &cc.ind[0]
    cdef const int* cp = &cc.ptr[0]

    with nogil:
        for step in range(n_steps):
            _rhs(u, kk, w, w2, d, kd, ki_, kp, cd, ci_, cp, n_jumps)
            if use_if:
                for x in range(0, n2, 2):
                    er = E_h[x]; ei = E_h[x + 1]
                    fr = E_f[x]; fi = E_f[x + 1]
                    ur = u[x]; ui = u[x + 1]
                    ehu[x] = er * ur - ei * ui
                    ehu[x + 1] = er * ui + ei * ur
                    efu[x] = fr * ur - fi * ui
                    efu[x + 1] = fr * ui + fi * ur
                    tr = ur + h6 * kk[x]; ti = ui + h6 * kk[x + 1]
                    acc[x] = fr * tr - fi * ti
                    acc[x + 1] = fr * ti + fi * tr
                    tr = ur + h2 * kk[x]; ti = ui + h2 * kk[x + 1]
                    st[x] = er * tr - ei * ti
                    st[x + 1] = er * ti + ei * tr
            else:
                for x in range(n2):
                    acc[x] = u[x] + h6 * kk[x]
                    st[x] = u[x] + h2 * kk[x]

            _rhs(st, kk, w, w2, d, kd, ki_, kp, cd, ci_, cp, n_jumps)
            if use_if:
                for x in range(0, n2, 2):
                    er = E_h[x]; ei = E_h[x + 1]
                    kr = kk[x]; ki = kk[x + 1]
                    acc[x] += h3 * (er * kr - ei * ki)
                    acc[x + 1] += h3 * (er * ki + ei * kr)
                    st[x] = ehu[x] + h2 * kr
                    st[x + 1] = ehu[x + 1] + h2 * ki
            else:
                for x in range(n2):
                    acc[x] += h3 * kk[x]
                    st[x] = u[x] + h2 * kk[x]

            _rhs(st, kk, w, w2, d, kd, ki_, kp, cd, ci_, cp, n_jumps)
            if use_if:
                for x in range(0, n2, 2):
                    er = E_h[x]; ei = E_h[x + 1]
                    kr = kk[x]; ki = kk[x + 1]
                    tr = er * kr - ei * ki
                    ti = er * ki + ei * kr
                    acc[x] += h3 * tr
                    acc[x + 1] += h3 * ti
                    st[x] = efu[x] + h * tr
                    st[x + 1] = efu[x + 1] + h * ti
            else:
                for x in range(n2):
                    acc[x] += h3 * kk[x]
                    st[x] = u[x] + h * kk[x]

            _rhs(st, kk, w, w2, d, kd, ki_, kp, cd, ci_, cp, n_jumps)
            for x in range(n2):
                u[x] = acc[x] + h6 * kk[x]
