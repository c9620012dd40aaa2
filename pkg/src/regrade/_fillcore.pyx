# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Jacobi sweep for harmonic mask filling.

Arithmetic must stay bit-identical to the numpy fallback: per pixel the
neighbour sum is ((up + down) + left) + right with 0.0 for out-of-bounds
neighbours (adding 0.0 is exact), divided by the in-bounds neighbour count.
"""

import numpy as np


def jacobi_fill(double[:, :, ::1] work, unsigned char[:, ::1] mask,
                int max_sweeps, double tol):
    """Run synchronous Jacobi sweeps in place; returns (sweeps, converged)."""
    cdef Py_ssize_t h = work.shape[0]
    cdef Py_ssize_t w = work.shape[1]
    cdef Py_ssize_t c = work.shape[2]
    buf_arr = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] buf = buf_arr
    cdef Py_ssize_t i, j, k
    cdef int sweep
    cdef double up, down, left, right, cnt, nv, d, maxdiff
    cdef bint converged = 0
    cdef int sweeps = 0

    for sweep in range(max_sweeps):
        maxdiff = 0.0
        for i in range(h):
            for j in range(w):
                if mask[i, j]:
                    cnt = 4.0
                    if i == 0:
                        cnt -= 1.0
                    if i == h - 1:
                        cnt -= 1.0
                    if j == 0:
                        cnt -= 1.0
                    if j == w - 1:
                        cnt -= 1.0
                    for k in range(c):
                        up = work[i - 1, j, k] if i > 0 else 0.0
                        down = work[i + 1, j, k] if i < h - 1 else 0.0
                        left = work[i, j - 1, k] if j > 0 else 0.0
                        right = work[i, j + 1, k] if j < w - 1 else 0.0
                        nv = (((up + down) + left) + right) / cnt
                        buf[i, j, k] = nv
                        d = nv - work[i, j, k]
                        if d < 0.0:
                            d = -d
                        if d > maxdiff:
                            maxdiff = d
        for i in range(h):
            for j in range(w):
                if mask[i, j]:
                    for k in range(c):
                        work[i, j, k] = buf[i, j, k]
        sweeps += 1
        if maxdiff < tol:
            converged = 1
            break
    return sweeps, bool(converged)
