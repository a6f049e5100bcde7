# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled CPU kernels for the multi-resolution hash encoding.

Index arithmetic (floor, clamp, XOR-of-primes hash in uint32) matches the
torch fallback in ``hashgrid.py`` bit for bit; only the reduction order of
the trilinear blend differs (double accumulators here).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floorf

cnp.import_array()

ctypedef cnp.uint32_t u32
ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8

cdef u32 PRIME_Y = 2654435761u
cdef u32 PRIME_Z = 805459861u

DEF MAX_FEATS = 16


cdef inline i64 _row(i64 vx, i64 vy, i64 vz, i64 n, bint hashed,
                     i64 size) nogil:
    cdef u32 h
    if hashed:
        h = <u32> vx
        h ^= (<u32> vy) * PRIME_Y
        h ^= (<u32> vz) * PRIME_Z
        return <i64> (h & <u32> (size - 1))
    return vx + (n + 1) * (vy + (n + 1) * vz)


def encode_forward(float[:, ::1] positions, float[:, ::1] table,
                   float[:, ::1] out, i64[::1] resolutions, i64[::1] offsets,
                   i64[::1] sizes, u8[::1] hashed, int active_levels,
                   int feats):
    if feats > MAX_FEATS:
        raise ValueError("compiled kernel supports at most %d features" %
                         MAX_FEATS)
    cdef Py_ssize_t n_pts = positions.shape[0]
    cdef int n_levels = resolutions.shape[0]
    cdef Py_ssize_t m
    cdef int level, c, f, bx, by, bz, col
    cdef float px, py, pz, x, y, z, fx, fy, fz, wx, wy, wz, w
    cdef i64 x0, y0, z0, n, base, row
    cdef bint is_hashed
    cdef double acc[MAX_FEATS]

    with nogil:
        for m in range(n_pts):
            px = positions[m, 0]
            py = positions[m, 1]
            pz = positions[m, 2]
            if px < 0: px = 0
            elif px > 1: px = 1
            if py < 0: py = 0
            elif py > 1: py = 1
            if pz < 0: pz = 0
            elif pz > 1: pz = 1

            for level in range(n_levels):
                col = level * feats
                if level >= active_levels:
                    for f in range(feats):
                        out[m, col + f] = 0
                    continue
                n = resolutions[level]
                base = offsets[level]
                is_hashed = hashed[level]
                x = px * <float> n
                y = py * <float> n
                z = pz * <float> n
                x0 = <i64> floorf(x)
                y0 = <i64> floorf(y)
                z0 = <i64> floorf(z)
                if x0 > n - 1: x0 = n - 1
                if y0 > n - 1: y0 = n - 1
                if z0 > n - 1: z0 = n - 1
                fx = x - <float> x0
                fy = y - <float> y0
                fz = z - <float> z0

                for f in range(feats):
                    acc[f] = 0
                for c in range(8):
                    bx = c & 1
                    by = (c >> 1) & 1
                    bz = (c >> 2) & 1
                    wx = fx if bx else 1.0 - fx
                    wy = fy if by else 1.0 - fy
                    wz = fz if bz else 1.0 - fz
                    w = wx * wy * wz
                    row = base + _row(x0 + bx, y0 + by, z0 + bz, n,
                                      is_hashed, sizes[level])
                    for f in range(feats):
                        acc[f] += w * table[row, f]
                for f in range(feats):
                    out[m, col + f] = <float> acc[f]


def encode_backward(float[:, ::1] positions, float[:, ::1] table,
                    float[:, ::1] grad_out, float[:, ::1] grad_table,
                    grad_positions_obj, i64[::1] resolutions,
                    i64[::1] offsets, i64[::1] sizes, u8[::1] hashed,
                    int active_levels, int feats):
    if feats > MAX_FEATS:
        raise ValueError("compiled kernel supports at most %d features" %
                         MAX_FEATS)
    cdef float[:, ::1] grad_positions = None
    cdef bint need_pos = grad_positions_obj is not None
    if need_pos:
        grad_positions = grad_positions_obj

    cdef Py_ssize_t n_pts = positions.shape[0]
    cdef int n_levels = resolutions.shape[0]
    cdef Py_ssize_t m
    cdef int level, c, f, bx, by, bz, col
    cdef float px, py, pz, x, y, z, fx, fy, fz, wx, wy, wz, w
    cdef i64 x0, y0, z0, n, base, row
    cdef bint is_hashed
    cdef double go[MAX_FEATS]
    cdef double gx, gy, gz, dot, fn

    with nogil:
        for m in range(n_pts):
            px = positions[m, 0]
            py = positions[m, 1]
            pz = positions[m, 2]
            if px < 0: px = 0
            elif px > 1: px = 1
            if py < 0: py = 0
            elif py > 1: py = 1
            if pz < 0: pz = 0
            elif pz > 1: pz = 1
            gx = 0
            gy = 0
            gz = 0

            for level in range(active_levels):
                col = level * feats
                n = resolutions[level]
                base = offsets[level]
                is_hashed = hashed[level]
                fn = <double> n
                x = px * <float> n
                y = py * <float> n
                z = pz * <float> n
                x0 = <i64> floorf(x)
                y0 = <i64> floorf(y)
                z0 = <i64> floorf(z)
                if x0 > n - 1: x0 = n - 1
                if y0 > n - 1: y0 = n - 1
                if z0 > n - 1: z0 = n - 1
                fx = x - <float> x0
                fy = y - <float> y0
                fz = z - <float> z0

                for f in range(feats):
                    go[f] = grad_out[m, col + f]
                for c in range(8):
                    bx = c & 1
                    by = (c >> 1) & 1
                    bz = (c >> 2) & 1
                    wx = fx if bx else 1.0 - fx
                    wy = fy if by else 1.0 - fy
                    wz = fz if bz else 1.0 - fz
                    w = wx * wy * wz
                    row = base + _row(x0 + bx, y0 + by, z0 + bz, n,
                                      is_hashed, sizes[level])
                    for f in range(feats):
                        grad_table[row, f] += w * <float> go[f]
                    if need_pos:
                        dot = 0
                        for f in range(feats):
                            dot += table[row, f] * go[f]
                        gx += fn * (wy * wz if bx else -wy * wz) * dot
                        gy += fn * (wx * wz if by else -wx * wz) * dot
                        gz += fn * (wx * wy if bz else -wx * wy) * dot

            if need_pos:
                # Positions outside the unit cube were clamped; no gradient.
                if positions[m, 0] < 0 or positions[m, 0] > 1: gx = 0
                if positions[m, 1] < 0 or positions[m, 1] > 1: gy = 0
                if positions[m, 2] < 0 or positions[m, 2] > 1: gz = 0
                grad_positions[m, 0] = <float> gx
                grad_positions[m, 1] = <float> gy
                grad_positions[m, 2] = <float> gz
