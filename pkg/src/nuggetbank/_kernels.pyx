# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. ``_kernels_py`` mirrors every function here and must
produce bit-identical results; keep the floating-point operation order in sync."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdint cimport uint64_t

cnp.import_array()


cdef inline uint64_t _splitmix64(uint64_t *state) nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def svm_dual_cd(double[:, ::1] X, double[::1] y, double C, long max_epochs,
                double tol, unsigned long long seed):
    """Dual coordinate descent for the L1-loss linear SVM.

    ``X`` is expected to carry the bias column already. Returns
    ``(w, alpha, epochs_run)``.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, j, k, t, tmp
    cdef long epoch = 0
    cdef double G, PG, a_old, a_new, delta, max_pg, min_pg, dot
    cdef uint64_t state = seed
    cdef cnp.ndarray[double, ndim=1] w_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] a_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] q_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] p_arr = np.arange(n, dtype=np.intp)
    cdef double[::1] w = w_arr
    cdef double[::1] alpha = a_arr
    cdef double[::1] qii = q_arr
    cdef Py_ssize_t[::1] perm = p_arr

    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot = dot + X[i, j] * X[i, j]
        qii[i] = dot

    with nogil:
        while epoch < max_epochs:
            epoch += 1
            for k in range(n - 1, 0, -1):
                t = <Py_ssize_t>(_splitmix64(&state) % <uint64_t>(k + 1))
                tmp = perm[k]
                perm[k] = perm[t]
                perm[t] = tmp
            max_pg = -1e300
            min_pg = 1e300
            for k in range(n):
                i = perm[k]
                dot = 0.0
                for j in range(d):
                    dot = dot + w[j] * X[i, j]
                G = y[i] * dot - 1.0
                if alpha[i] == 0.0:
                    PG = G if G < 0.0 else 0.0
                elif alpha[i] == C:
                    PG = G if G > 0.0 else 0.0
                else:
                    PG = G
                if PG > max_pg:
                    max_pg = PG
                if PG < min_pg:
                    min_pg = PG
                if fabs(PG) > 1e-12:
                    a_old = alpha[i]
                    a_new = a_old - G / qii[i]
                    if a_new < 0.0:
                        a_new = 0.0
                    if a_new > C:
                        a_new = C
                    alpha[i] = a_new
                    delta = (a_new - a_old) * y[i]
                    for j in range(d):
                        w[j] = w[j] + delta * X[i, j]
            if max_pg - min_pg < tol:
                break
    return w_arr, a_arr, epoch


def kendall_pair_counts(double[::1] x, double[::1] y):
    """Return ``(concordant, discordant, ties_x_only, ties_y_only, ties_both)``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j
    cdef long long conc = 0, disc = 0, tx = 0, ty = 0, tb = 0
    cdef double dx, dy
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dx = x[i] - x[j]
                dy = y[i] - y[j]
                if dx == 0.0 and dy == 0.0:
                    tb += 1
                elif dx == 0.0:
                    tx += 1
                elif dy == 0.0:
                    ty += 1
                elif (dx > 0.0) == (dy > 0.0):
                    conc += 1
                else:
                    disc += 1
    return conc, disc, tx, ty, tb


def weighted_pair_sums(double[::1] x, double[::1] y, double[::1] weights):
    """Return ``(signed, total)`` sums of ``weights[i] + weights[j]`` over pairs."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j
    cdef double signed_sum = 0.0, total = 0.0, w, dx, dy
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                w = weights[i] + weights[j]
                total = total + w
                dx = x[i] - x[j]
                dy = y[i] - y[j]
                if dx == 0.0 or dy == 0.0:
                    continue
                if (dx > 0.0) == (dy > 0.0):
                    signed_sum = signed_sum + w
                else:
                    signed_sum = signed_sum - w
    return signed_sum, total


def signed_rank_null_counts(long[::1] doubled_ranks):
    """Number of sign assignments yielding each doubled positive-rank sum."""
    cdef Py_ssize_t m = doubled_ranks.shape[0]
    cdef long total = 0
    cdef Py_ssize_t i, s
    cdef long r
    for i in range(m):
        total += doubled_ranks[i]
    cdef cnp.ndarray[double, ndim=1] c_arr = np.zeros(total + 1, dtype=np.float64)
    cdef double[::1] counts = c_arr
    counts[0] = 1.0
    cdef long reach = 0
    with nogil:
        for i in range(m):
            r = doubled_ranks[i]
            reach += r
            s = reach
            while s >= r:
                counts[s] = counts[s] + counts[s - r]
                s -= 1
    return c_arr
