# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled exact Euclidean distance transform kernel.

Two-pass separable scheme: per-column linear distances to the nearest
reference pixel, squared, then a per-row lower envelope of parabolas.
Mirrors the pure-NumPy fallback in ``_edt_py`` bit for bit: squared
pixel-center distances are integers, held exactly in doubles.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double _FAR = 1e15
cdef double _INF = float("inf")


def squared_edt(reference):
    """Exact squared Euclidean distance to the nearest true pixel."""
    ref = np.ascontiguousarray(reference, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mask = ref
    cdef Py_ssize_t h = mask.shape[0]
    cdef Py_ssize_t w = mask.shape[1]

    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] d = out_arr

    cdef Py_ssize_t r, c, q, k
    cdef double best, val

    # Pass 1: linear distance to the nearest reference pixel in each
    # column (down sweep then up sweep), then square.  Columns without
    # any reference pixel get the large-but-finite _FAR sentinel so the
    # envelope pass below never forms inf - inf.
    for c in range(w):
        best = _INF
        for r in range(h):
            if mask[r, c]:
                best = 0.0
            elif best != _INF:
                best += 1.0
            d[r, c] = best
        best = _INF
        for r in range(h - 1, -1, -1):
            if mask[r, c]:
                best = 0.0
            elif best != _INF:
                best += 1.0
            if best < d[r, c]:
                d[r, c] = best
    for r in range(h):
        for c in range(w):
            val = d[r, c]
            d[r, c] = val * val if val != _INF else _FAR

    # Pass 2: per-row lower envelope of the parabolas q -> (q-p)^2 + f[p].
    v_arr = np.empty(w, dtype=np.intp)
    z_arr = np.empty(w + 1, dtype=np.float64)
    f_arr = np.empty(w, dtype=np.float64)
    cdef Py_ssize_t[::1] v = v_arr
    cdef double[::1] z = z_arr
    cdef double[::1] f = f_arr
    cdef double s, fq

    for r in range(h):
        for c in range(w):
            f[c] = d[r, c]
        k = 0
        v[0] = 0
        z[0] = -_INF
        z[1] = _INF
        for q in range(1, w):
            fq = f[q] + <double>(q * q)
            s = (fq - (f[v[k]] + <double>(v[k] * v[k]))) / (2.0 * <double>(q - v[k]))
            while s <= z[k]:
                k -= 1
                s = (fq - (f[v[k]] + <double>(v[k] * v[k]))) / (2.0 * <double>(q - v[k]))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _INF
        k = 0
        for q in range(w):
            while z[k + 1] < <double>q:
                k += 1
            d[r, q] = <double>((q - v[k]) * (q - v[k])) + f[v[k]]

    return out_arr
