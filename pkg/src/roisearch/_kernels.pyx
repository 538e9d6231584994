# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels. See ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_counts(a, b):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t i, j
    cdef long long s = 0, ta = 0, tb = 0
    cdef double da, db
    cdef int sa, sb
    for i in range(n):
        for j in range(i + 1, n):
            da = av[i] - av[j]
            db = bv[i] - bv[j]
            sa = (da > 0) - (da < 0)
            sb = (db > 0) - (db < 0)
            if sa == 0:
                ta += 1
            if sb == 0:
                tb += 1
            s += sa * sb
    return int(s), int(ta), int(tb), int(n * (n - 1) // 2)


def hinge_pairs(pred, label, ii, jj, double eps):
    cdef double[::1] p = np.ascontiguousarray(pred, dtype=np.float64)
    cdef double[::1] l = np.ascontiguousarray(label, dtype=np.float64)
    cdef long long[::1] iv = np.ascontiguousarray(ii, dtype=np.int64)
    cdef long long[::1] jv = np.ascontiguousarray(jj, dtype=np.int64)
    out = np.zeros(p.shape[0], dtype=np.float64)
    cdef double[::1] g = out
    cdef Py_ssize_t k, m = iv.shape[0]
    cdef long long i, j
    cdef double y, h, loss = 0.0
    cdef long long valid = 0
    for k in range(m):
        i = iv[k]
        j = jv[k]
        if l[i] > l[j]:
            y = 1.0
        elif l[i] < l[j]:
            y = -1.0
        else:
            continue
        valid += 1
        h = -y * (p[i] - p[j]) + eps
        if h > 0:
            loss += h
            g[i] -= y
            g[j] += y
    return loss, int(valid), out


def score_grad(idx, adv, probs, offsets, double temperature):
    cdef long long[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[::1] a = np.ascontiguousarray(adv, dtype=np.float64)
    cdef double[::1] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    out = np.zeros(pr.shape[0], dtype=np.float64)
    cdef double[::1] g = out
    cdef Py_ssize_t n = ix.shape[0], d = ix.shape[1], b, j, k
    cdef double total = 0.0, scale
    for b in range(n):
        total += a[b]
        for j in range(d):
            g[off[j] + ix[b, j]] += a[b]
    scale = 1.0 / (n * temperature)
    for k in range(pr.shape[0]):
        g[k] = (g[k] - total * pr[k]) * scale
    return out
