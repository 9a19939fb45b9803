# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: same-size cross-correlation.

Inner loops run contiguously over the time/width axis (shift-and-accumulate
for the forward pass, shifted dot products for the kernel gradient), which
the C compiler vectorizes. Mirrors the numpy backend exactly; parity is
enforced by the backend tests.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def conv1d_fwd(x_in, k_in):
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, ::1] k = np.ascontiguousarray(k_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = k.shape[0], K = k.shape[2], P = (K - 1) // 2
    out_arr = np.zeros((B, O, L), dtype=np.float64)
    cdef double[:, :, ::1] y = out_arr
    cdef Py_ssize_t b, o, c, j, t, tlo, thi, shift
    cdef double coef
    with nogil:
        for b in range(B):
            for o in range(O):
                for c in range(C):
                    for j in range(K):
                        coef = k[o, c, j]
                        if coef == 0.0:
                            continue
                        shift = j - P
                        tlo = -shift if shift < 0 else 0
                        thi = L - shift if shift > 0 else L
                        for t in range(tlo, thi):
                            y[b, o, t] += coef * x[b, c, t + shift]
    return out_arr


def conv1d_grad_k(x_in, g_in, kshape):
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = kshape[0], K = kshape[2], P = (K - 1) // 2
    out_arr = np.zeros((O, C, K), dtype=np.float64)
    cdef double[:, :, ::1] gk = out_arr
    cdef Py_ssize_t b, o, c, j, t, tlo, thi, shift
    cdef double acc
    with nogil:
        for b in range(B):
            for o in range(O):
                for c in range(C):
                    for j in range(K):
                        shift = j - P
                        tlo = -shift if shift < 0 else 0
                        thi = L - shift if shift > 0 else L
                        acc = 0.0
                        for t in range(tlo, thi):
                            acc += x[b, c, t + shift] * g[b, o, t]
                        gk[o, c, j] += acc
    return out_arr


def conv2d_fwd(x_in, k_in):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] k = np.ascontiguousarray(k_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = k.shape[0], KH = k.shape[2], KW = k.shape[3]
    cdef Py_ssize_t PH = (KH - 1) // 2, PW = (KW - 1) // 2
    out_arr = np.zeros((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out_arr
    cdef Py_ssize_t b, o, c, r, i, j, t, rr, tlo, thi, shift
    cdef double coef
    with nogil:
        for b in range(B):
            for o in range(O):
                for r in range(H):
                    for c in range(C):
                        for i in range(KH):
                            rr = r + i - PH
                            if rr < 0 or rr >= H:
                                continue
                            for j in range(KW):
                                coef = k[o, c, i, j]
                                if coef == 0.0:
                                    continue
                                shift = j - PW
                                tlo = -shift if shift < 0 else 0
                                thi = W - shift if shift > 0 else W
                                for t in range(tlo, thi):
                                    y[b, o, r, t] += coef * x[b, c, rr, t + shift]
    return out_arr


def conv2d_grad_k(x_in, g_in, kshape):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = kshape[0], KH = kshape[2], KW = kshape[3]
    cdef Py_ssize_t PH = (KH - 1) // 2, PW = (KW - 1) // 2
    out_arr = np.zeros((O, C, KH, KW), dtype=np.float64)
    cdef double[:, :, :, ::1] gk = out_arr
    cdef Py_ssize_t b, o, c, r, i, j, t, rr, tlo, thi, shift
    cdef double acc
    with nogil:
        for b in range(B):
            for o in range(O):
                for r in range(H):
                    for c in range(C):
                        for i in range(KH):
                            rr = r + i - PH
                            if rr < 0 or rr >= H:
                                continue
                            for j in range(KW):
                                shift = j - PW
                                tlo = -shift if shift < 0 else 0
                                thi = W - shift if shift > 0 else W
                                acc = 0.0
                                for t in range(tlo, thi):
                                    acc += x[b, c, rr, t + shift] * g[b, o, r, t]
                                gk[o, c, i, j] += acc
    return out_arr
