# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled windowed-sinc interpolation kernel.

Mirrors :func:`featdecomp._resample_py.interpolate` exactly; see that module
for the argument contract.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, fabs

cnp.import_array()


def interpolate(const double[::1] x, double step, Py_ssize_t n_out,
                double cutoff, const double[::1] table, int oversample,
                int zeros):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t n_tab = table.shape[0]
    cdef double radius = zeros / cutoff
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n_out, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t n, k, k_lo, k_hi, i
    cdef double t, acc, pos, frac

    with nogil:
        for n in range(n_out):
            t = n * step
            k_lo = <Py_ssize_t>ceil(t - radius)
            k_hi = <Py_ssize_t>floor(t + radius)
            if k_lo < 0:
                k_lo = 0
            if k_hi > n_in - 1:
                k_hi = n_in - 1
            acc = 0.0
            for k in range(k_lo, k_hi + 1):
                pos = fabs(t - k) * cutoff * oversample
                i = <Py_ssize_t>pos
                if i >= n_tab - 1:
                    continue
                frac = pos - i
                acc = acc + x[k] * (table[i] + frac * (table[i + 1] - table[i]))
            y[n] = acc * cutoff
    return out
