"""Pure-Python kernels: fallback Jacobi eigensolver and the numpy Gram product."""
import math

import numpy as np


def jacobi_eigh(a, tol=1e-15, max_sweeps=64):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns ``(w, V, sweeps)`` with eigenvalues ``w`` in diagonal order (not
    sorted) and eigenvectors in the columns of ``V``.
    """
    A = np.array(a, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    fro = math.sqrt(float(np.sum(A * A)))
    sweep = 0
    while sweep < max_sweeps:
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += A[p, q] * A[p, q]
        if math.sqrt(off) <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        sweep += 1
    return np.diagonal(A).copy(), V, sweep


def gram(x):
    """Sum of outer products of the rows of ``x`` (``x.T @ x``)."""
    X = np.asarray(x, dtype=np.float64)
    return X.T @ X
