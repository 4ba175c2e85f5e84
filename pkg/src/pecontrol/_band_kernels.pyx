# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled banded time-sweep kernels.

Drop-in replacement for the hot loops of ``_band_kernels_py``: the full
time march runs in C, performing LAPACK-compatible banded triangular
solves (gbtrs semantics, 0-based pivots as returned by SciPy's gbtrf)
against precomputed per-step factorizations.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF KL = 2
DEF KU = 2
DEF OFF = KL + KU  # row index of the diagonal in gbtrf storage


cdef inline void _gbtrs_n(const double[:, ::1] lu, const int[::1] ipiv,
                          double* x, Py_ssize_t n) noexcept nogil:
    # Solve A x = b given the gbtrf factorization of A (in place).
    cdef Py_ssize_t j, i, lm, l
    cdef double xj, tmp
    for j in range(n - 1):
        lm = KL if KL < n - 1 - j else n - 1 - j
        l = ipiv[j]
        if l != j:
            tmp = x[l]; x[l] = x[j]; x[j] = tmp
        xj = x[j]
        for i in range(1, lm + 1):
            x[j + i] -= lu[OFF + i, j] * xj
    for j in range(n - 1, -1, -1):
        x[j] /= lu[OFF, j]
        xj = x[j]
        lm = OFF if OFF < j else j
        for i in range(1, lm + 1):
            x[j - i] -= lu[OFF - i, j] * xj


cdef inline void _gbtrs_t(const double[:, ::1] lu, const int[::1] ipiv,
                          double* x, Py_ssize_t n) noexcept nogil:
    # Solve A^T x = b given the gbtrf factorization of A (in place).
    cdef Py_ssize_t j, i, lm, l
    cdef double s, tmp
    for j in range(n):
        lm = OFF if OFF < j else j
        s = x[j]
        for i in range(1, lm + 1):
            s -= lu[OFF - i, j] * x[j - i]
        x[j] = s / lu[OFF, j]
    for j in range(n - 2, -1, -1):
        lm = KL if KL < n - 1 - j else n - 1 - j
        s = x[j]
        for i in range(1, lm + 1):
            s -= lu[OFF + i, j] * x[j + i]
        x[j] = s
        l = ipiv[j]
        if l != j:
            tmp = x[l]; x[l] = x[j]; x[j] = tmp


def sweep_forward(double[:, :, ::1] lu, int[:, ::1] ipiv,
                  int[::1] step_factor, double eps_mass,
                  sources, double[::1] u0, double[:, ::1] out):
    """Same contract as _band_kernels_py.sweep_forward."""
    cdef Py_ssize_t nt = out.shape[0] - 1
    cdef Py_ssize_t n2 = out.shape[1]
    cdef Py_ssize_t n, i, f
    cdef bint has_src = sources is not None
    cdef double[:, ::1] src
    if has_src:
        src = sources
    else:
        src = np.empty((1, 1))
    out_np = np.asarray(out)
    out_np[0] = np.asarray(u0)
    with nogil:
        for n in range(1, nt + 1):
            for i in range(0, n2, 2):
                out[n, i] = out[n - 1, i]
            for i in range(1, n2, 2):
                out[n, i] = eps_mass * out[n - 1, i]
            if has_src:
                for i in range(n2):
                    out[n, i] += src[n, i]
            f = step_factor[n]
            _gbtrs_n(lu[f], ipiv[f], &out[n, 0], n2)
    return out_np


def sweep_transpose(double[:, :, ::1] lu, int[:, ::1] ipiv,
                    int[::1] step_factor, double eps_mass,
                    sources, double[::1] terminal, double[:, ::1] out):
    """Same contract as _band_kernels_py.sweep_transpose."""
    cdef Py_ssize_t nt = out.shape[0] - 1
    cdef Py_ssize_t n2 = out.shape[1]
    cdef Py_ssize_t n, i, f
    cdef bint has_src = sources is not None
    cdef double[:, ::1] src
    if has_src:
        src = sources
    else:
        src = np.empty((1, 1))
    out_np = np.asarray(out)
    out_np[nt] = np.asarray(terminal)
    with nogil:
        for n in range(nt, 0, -1):
            for i in range(0, n2, 2):
                out[n - 1, i] = out[n, i]
            for i in range(1, n2, 2):
                out[n - 1, i] = eps_mass * out[n, i]
            if has_src:
                for i in range(n2):
                    out[n - 1, i] += src[n, i]
            f = step_factor[n]
            _gbtrs_t(lu[f], ipiv[f], &out[n - 1, 0], n2)
    return out_np
