# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for 2-D same-size correlation and its gradients.

These three kernels dominate solver runtime; blindinv.kernels falls back
to a numpy implementation when this module is not built.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def correlate2d(double[:, :, :, ::1] x, double[:, :, :, ::1] f, int ah, int aw):
    """out[b,o,i,j] = sum_{c,p,q} x[b,c,i+p-ah,j+q-aw] * f[o,c,p,q],
    zero outside bounds."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = f.shape[0], kh = f.shape[2], kw = f.shape[3]
    out_arr = np.zeros((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, i, j, p, q, ii, plo, phi, qlo, qhi
    cdef double fv
    with nogil:
        for b in range(B):
            for o in range(O):
                for c in range(C):
                    for p in range(kh):
                        for q in range(kw):
                            fv = f[o, c, p, q]
                            if fv == 0.0:
                                continue
                            # valid output rows: 0 <= i+p-ah < H
                            plo = ah - p
                            if plo < 0:
                                plo = 0
                            phi = H + ah - p
                            if phi > H:
                                phi = H
                            qlo = aw - q
                            if qlo < 0:
                                qlo = 0
                            qhi = W + aw - q
                            if qhi > W:
                                qhi = W
                            for i in range(plo, phi):
                                ii = i + p - ah
                                for j in range(qlo, qhi):
                                    out[b, o, i, j] += fv * x[b, c, ii, j + q - aw]
    return out_arr


def filter_grad(double[:, :, :, ::1] x, double[:, :, :, ::1] g,
                int kh, int kw, int ah, int aw):
    """df[o,c,p,q] = sum_{b,i,j} g[b,o,i,j] * x[b,c,i+p-ah,j+q-aw]."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = g.shape[1]
    out_arr = np.zeros((O, C, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, c, i, j, p, q, plo, phi, qlo, qhi
    cdef double acc
    with nogil:
        for o in range(O):
            for c in range(C):
                for p in range(kh):
                    plo = ah - p
                    if plo < 0:
                        plo = 0
                    phi = H + ah - p
                    if phi > H:
                        phi = H
                    for q in range(kw):
                        qlo = aw - q
                        if qlo < 0:
                            qlo = 0
                        qhi = W + aw - q
                        if qhi > W:
                            qhi = W
                        acc = 0.0
                        for b in range(B):
                            for i in range(plo, phi):
                                for j in range(qlo, qhi):
                                    acc += g[b, o, i, j] * x[b, c, i + p - ah, j + q - aw]
                        out[o, c, p, q] = acc
    return out_arr
