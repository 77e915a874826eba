# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise-kernel core."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def sqdist_and_dot(a, b):
    """Pairwise squared Euclidean distances and dot products between row sets.

    Returns (D, G) with D[i, j] = ||a_i - b_j||^2 and G[i, j] = a_i . b_j.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"row sets must share their column dimension, got {a.shape} and {b.shape}")

    cdef const double[:, ::1] av = a
    # transposed copy makes the inner loop contiguous (vectorizable)
    cdef const double[:, ::1] btv = np.ascontiguousarray(b.T)
    cdef Py_ssize_t na = av.shape[0], nb = btv.shape[1], p = av.shape[1]
    d_arr = np.zeros((na, nb), dtype=np.float64)
    g_arr = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] dv = d_arr
    cdef double[:, ::1] gv = g_arr
    cdef Py_ssize_t i, j, k
    cdef double aik, diff

    with nogil:
        for i in range(na):
            for k in range(p):
                aik = av[i, k]
                for j in range(nb):
                    diff = aik - btv[k, j]
                    dv[i, j] += diff * diff
                    gv[i, j] += aik * btv[k, j]
    return d_arr, g_arr
