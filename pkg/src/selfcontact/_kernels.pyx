# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos

cnp.import_array()


def sliding_median(const double[::1] values, Py_ssize_t half):
    """Centered running median, truncated at the edges (lower median on even counts)."""
    cdef Py_ssize_t n = values.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    if n == 0:
        return out
    cdef Py_ssize_t cap = 2 * half + 1
    buf_arr = np.empty(cap, dtype=np.float64)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t size = 0
    cdef Py_ssize_t i, j, lo, hi, prev_lo = 0, prev_hi = -1
    cdef double x

    for i in range(n):
        lo = i - half
        if lo < 0:
            lo = 0
        hi = i + half
        if hi > n - 1:
            hi = n - 1
        # drop samples that left the window
        while prev_lo < lo:
            x = values[prev_lo]
            j = 0
            while buf[j] != x:
                j += 1
            while j < size - 1:
                buf[j] = buf[j + 1]
                j += 1
            size -= 1
            prev_lo += 1
        # insert samples that entered
        while prev_hi < hi:
            prev_hi += 1
            x = values[prev_hi]
            j = size
            while j > 0 and buf[j - 1] > x:
                buf[j] = buf[j - 1]
                j -= 1
            buf[j] = x
            size += 1
        res[i] = buf[(size - 1) // 2]
    return out


def closest_pairs_by_region(const double[:, ::1] hand,
                            const double[:, ::1] targets,
                            const long[::1] labels,
                            Py_ssize_t n_regions,
                            double z_weight):
    """Per target region, the (hand, target) row pair minimising the depth-weighted distance.

    Returns (squared distance, hand row, target row) arrays of length n_regions; regions
    without targets get inf / -1. Ties resolve to the lowest hand row, then lowest target row.
    """
    cdef Py_ssize_t nh = hand.shape[0], nt = targets.shape[0]
    best_d = np.full(n_regions, np.inf)
    best_h = np.full(n_regions, -1, dtype=np.int64)
    best_t = np.full(n_regions, -1, dtype=np.int64)
    cdef double[::1] bd = best_d
    cdef long long[::1] bh = best_h
    cdef long long[::1] bt = best_t
    cdef Py_ssize_t a, b
    cdef long r
    cdef double dx, dy, dz, d2
    for a in range(nh):
        for b in range(nt):
            r = labels[b]
            dx = hand[a, 0] - targets[b, 0]
            dy = hand[a, 1] - targets[b, 1]
            dz = z_weight * (hand[a, 2] - targets[b, 2])
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < bd[r]:
                bd[r] = d2
                bh[r] = a
                bt[r] = b
    return best_d, best_h, best_t


def fk_chain(const double[:, ::1] local, const long[::1] parents,
             const double[:, ::1] offsets, const double[::1] root_shift):
    """Forward kinematics of an axis-angle tree plus per-joint angular axes.

    ``local[k]`` is joint k's axis-angle (row 0: global orientation); joints are
    ordered parents first. Returns rotations (J,3,3), origins (J,3) and axes (J,3,3)
    where axes[k, c] is the world angular velocity per unit rate of component c.
    """
    cdef Py_ssize_t J = local.shape[0]
    R_arr = np.empty((J, 3, 3))
    o_arr = np.empty((J, 3))
    ax_arr = np.empty((J, 3, 3))
    cdef double[:, :, ::1] R = R_arr
    cdef double[:, ::1] o = o_arr
    cdef double[:, :, ::1] ax = ax_arr
    cdef double K[3][3]
    cdef double K2[3][3]
    cdef double Rl[3][3]
    cdef double Jl[3][3]
    cdef double P[3][3]
    cdef double x, y, z, th, t2, a, b, c1, c2, s
    cdef Py_ssize_t k, i, j, m
    cdef long p
    for k in range(J):
        x = local[k, 0]
        y = local[k, 1]
        z = local[k, 2]
        t2 = x * x + y * y + z * z
        th = sqrt(t2)
        K[0][0] = 0.0; K[0][1] = -z; K[0][2] = y
        K[1][0] = z; K[1][1] = 0.0; K[1][2] = -x
        K[2][0] = -y; K[2][1] = x; K[2][2] = 0.0
        for i in range(3):
            for j in range(3):
                s = 0.0
                for m in range(3):
                    s = s + K[i][m] * K[m][j]
                K2[i][j] = s
        if th < 1e-8:
            a = 1.0
            b = 0.5
        else:
            a = sin(th) / th
            b = (1.0 - cos(th)) / t2
        if th < 1e-5:
            c1 = 0.5
            c2 = 1.0 / 6.0
        else:
            c1 = (1.0 - cos(th)) / t2
            c2 = (th - sin(th)) / (t2 * th)
        for i in range(3):
            for j in range(3):
                Rl[i][j] = (1.0 if i == j else 0.0) + a * K[i][j] + b * K2[i][j]
                Jl[i][j] = (1.0 if i == j else 0.0) + c1 * K[i][j] + c2 * K2[i][j]
        p = parents[k]
        if p < 0:
            for i in range(3):
                for j in range(3):
                    P[i][j] = 1.0 if i == j else 0.0
                o[k, i] = offsets[k, i] + root_shift[i]
        else:
            for i in range(3):
                for j in range(3):
                    P[i][j] = R[p, i, j]
            for i in range(3):
                s = 0.0
                for m in range(3):
                    s = s + P[i][m] * offsets[k, m]
                o[k, i] = o[p, i] + s
        for i in range(3):
            for j in range(3):
                s = 0.0
                for m in range(3):
                    s = s + P[i][m] * Rl[m][j]
                R[k, i, j] = s
                s = 0.0
                for m in range(3):
                    s = s + P[i][m] * Jl[m][j]
                ax[k, j, i] = s
    return R_arr, o_arr, ax_arr
