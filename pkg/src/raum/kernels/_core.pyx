# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: same-padded 1x1/3x3 conv and the selective scan.

Signature-compatible with kernels/reference.py; selected at import by
kernels/__init__.py.
"""

import numpy as np

from libc.math cimport exp

NAME = "cython"


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], CI = x.shape[3]
    cdef Py_ssize_t KH = w.shape[0], CO = w.shape[3]
    cdef Py_ssize_t b, i, j, o, c, dy, dx, yy, xx
    cdef double acc
    y_arr = np.zeros((B, H, W, CO), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    if KH == 1:
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    for o in range(CO):
                        acc = 0.0
                        for c in range(CI):
                            acc += x[b, i, j, c] * w[0, 0, c, o]
                        y[b, i, j, o] = acc
        return y_arr
    for b in range(B):
        for i in range(H):
            for j in range(W):
                for dy in range(3):
                    yy = i + dy - 1
                    if yy < 0 or yy >= H:
                        continue
                    for dx in range(3):
                        xx = j + dx - 1
                        if xx < 0 or xx >= W:
                            continue
                        for o in range(CO):
                            acc = 0.0
                            for c in range(CI):
                                acc += x[b, yy, xx, c] * w[dy, dx, c, o]
                            y[b, i, j, o] += acc
    return y_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gy):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], CI = x.shape[3]
    cdef Py_ssize_t KH = w.shape[0], CO = w.shape[3]
    cdef Py_ssize_t b, i, j, o, c, dy, dx, yy, xx
    cdef double g
    gx_arr = np.zeros((B, H, W, CI), dtype=np.float64)
    gw_arr = np.zeros((KH, KH, CI, CO), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    if KH == 1:
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    for o in range(CO):
                        g = gy[b, i, j, o]
                        for c in range(CI):
                            gx[b, i, j, c] += g * w[0, 0, c, o]
                            gw[0, 0, c, o] += g * x[b, i, j, c]
        return gx_arr, gw_arr
    for b in range(B):
        for i in range(H):
            for j in range(W):
                for dy in range(3):
                    yy = i + dy - 1
                    if yy < 0 or yy >= H:
                        continue
                    for dx in range(3):
                        xx = j + dx - 1
                        if xx < 0 or xx >= W:
                            continue
                        for o in range(CO):
                            g = gy[b, i, j, o]
                            for c in range(CI):
                                gx[b, yy, xx, c] += g * w[dy, dx, c, o]
                                gw[dy, dx, c, o] += g * x[b, yy, xx, c]
    return gx_arr, gw_arr


def scan_forward(double[:, :, ::1] delta, double[:, ::1] a,
                 double[:, :, ::1] b, double[:, :, ::1] c,
                 double[:, :, ::1] x):
    """delta/x (B,L,C), a (C,N), b/c (B,L,N) -> y (B,L,C), h (B,L,C,N)."""
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2], N = a.shape[1]
    cdef Py_ssize_t bi, t, ci, ni
    cdef double d, dx_c, hv, acc
    y_arr = np.empty((B, L, C), dtype=np.float64)
    h_arr = np.empty((B, L, C, N), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] h = h_arr
    for bi in range(B):
        for t in range(L):
            for ci in range(C):
                d = delta[bi, t, ci]
                dx_c = d * x[bi, t, ci]
                acc = 0.0
                if t == 0:
                    for ni in range(N):
                        hv = dx_c * b[bi, t, ni]
                        h[bi, t, ci, ni] = hv
                        acc += c[bi, t, ni] * hv
                else:
                    for ni in range(N):
                        hv = exp(d * a[ci, ni]) * h[bi, t - 1, ci, ni] \
                            + dx_c * b[bi, t, ni]
                        h[bi, t, ci, ni] = hv
                        acc += c[bi, t, ni] * hv
                y[bi, t, ci] = acc
    return y_arr, h_arr


def scan_backward(double[:, :, ::1] delta, double[:, ::1] a,
                  double[:, :, ::1] b, double[:, :, ::1] c,
                  double[:, :, ::1] x, double[:, :, :, ::1] h,
                  double[:, :, ::1] gy):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2], N = a.shape[1]
    cdef Py_ssize_t bi, t, ci, ni
    cdef double d, xv, gyv, gh, hprev, da, gda_da, gd_acc, bx_acc
    gdelta_arr = np.zeros((B, L, C), dtype=np.float64)
    ga_arr = np.zeros((C, N), dtype=np.float64)
    gb_arr = np.zeros((B, L, N), dtype=np.float64)
    gc_arr = np.zeros((B, L, N), dtype=np.float64)
    gx_arr = np.zeros((B, L, C), dtype=np.float64)
    carry_arr = np.zeros((C, N), dtype=np.float64)
    cdef double[:, :, ::1] gdelta = gdelta_arr
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, :, ::1] gb = gb_arr
    cdef double[:, :, ::1] gc = gc_arr
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] carry = carry_arr
    for bi in range(B):
        for ci in range(C):
            for ni in range(N):
                carry[ci, ni] = 0.0
        for t in range(L - 1, -1, -1):
            for ci in range(C):
                d = delta[bi, t, ci]
                xv = x[bi, t, ci]
                gyv = gy[bi, t, ci]
                gd_acc = 0.0
                bx_acc = 0.0
                for ni in range(N):
                    gh = gyv * c[bi, t, ni] + carry[ci, ni]
                    gc[bi, t, ni] += gyv * h[bi, t, ci, ni]
                    da = exp(d * a[ci, ni])
                    if t > 0:
                        hprev = h[bi, t - 1, ci, ni]
                        gda_da = gh * hprev * da
                        gd_acc += gda_da * a[ci, ni]
                        ga[ci, ni] += gda_da * d
                    bx_acc += gh * b[bi, t, ni]
                    gb[bi, t, ni] += gh * d * xv
                    carry[ci, ni] = gh * da
                gdelta[bi, t, ci] = gd_acc + bx_acc * xv
                gx[bi, t, ci] = bx_acc * d
    return gdelta_arr, ga_arr, gb_arr, gc_arr, gx_arr
