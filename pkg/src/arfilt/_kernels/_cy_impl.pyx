# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: causal convolution and the AR drive recursion.

Contracts match ``_py_impl`` exactly; see that module's docstring.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def causal_conv(f, x):
    cdef const double[::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t q = fv.shape[0]
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k, kmax
    cdef double acc
    for i in range(n):
        acc = 0.0
        kmax = i + 1 if i + 1 < q else q
        for k in range(kmax):
            acc += fv[k] * xv[i - k]
        out[i] = acc
    return out_arr


def ar_drive(h, drive):
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(drive, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0]
    cdef Py_ssize_t q = hv.shape[0]
    buf_arr = np.zeros(q + n)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = dv[i]
        for k in range(q):
            acc += hv[k] * buf[q + i - 1 - k]
        buf[q + i] = acc
    return buf_arr[q:]


def ar_drive_batch(h, drives):
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(drives, dtype=np.float64)
    cdef Py_ssize_t n = D.shape[0]
    cdef Py_ssize_t m = D.shape[1]
    cdef Py_ssize_t q = hv.shape[0]
    buf_arr = np.zeros((n, q + m))
    cdef double[:, ::1] buf = buf_arr
    cdef Py_ssize_t r, t, k
    cdef double acc
    for r in range(n):
        for t in range(m):
            acc = D[r, t]
            for k in range(q):
                acc += hv[k] * buf[r, q + t - 1 - k]
            buf[r, q + t] = acc
    return buf_arr[:, q:]
