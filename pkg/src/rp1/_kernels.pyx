# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel: cyclic Jacobi eigensolver.

Must stay numerically equivalent (same rotation order, same formulas) to
``_kernels_py`` so either backend can be selected at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign

cnp.import_array()


def jacobi_eigh(a, double tol=1e-15, int max_sweeps=64):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] V = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] Am = A
    cdef double[:, ::1] Vm = V
    cdef Py_ssize_t p, q, k
    cdef int sweep = 0
    cdef double off, fro, apq, theta, t, c, s, x, y

    fro = 0.0
    for p in range(n):
        for q in range(n):
            fro += Am[p, q] * Am[p, q]
    fro = sqrt(fro)

    while sweep < max_sweeps:
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += Am[p, q] * Am[p, q]
        if sqrt(off) <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = Am[p, q]
                if apq == 0.0:
                    continue
                theta = (Am[q, q] - Am[p, p]) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = copysign(1.0, theta) / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    x = Am[k, p]
                    y = Am[k, q]
                    Am[k, p] = c * x - s * y
                    Am[k, q] = s * x + c * y
                for k in range(n):
                    x = Am[p, k]
                    y = Am[q, k]
                    Am[p, k] = c * x - s * y
                    Am[q, k] = s * x + c * y
                Am[p, q] = 0.0
                Am[q, p] = 0.0
                for k in range(n):
                    x = Vm[k, p]
                    y = Vm[k, q]
                    Vm[k, p] = c * x - s * y
                    Vm[k, q] = s * x + c * y
        sweep += 1

    return np.diagonal(A).copy(), V, sweep
