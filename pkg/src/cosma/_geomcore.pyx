# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled closest-point kernel: the hot loop of point-to-surface queries.

Mirrors ``_geom_pure.py``; see that module for the readable version.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY


cdef inline double _box_sqdist(const double* lo, const double* hi,
                               const double* p) nogil:
    cdef double acc = 0.0, d
    cdef int i
    for i in range(3):
        d = 0.0
        if p[i] < lo[i]:
            d = lo[i] - p[i]
        elif p[i] > hi[i]:
            d = p[i] - hi[i]
        acc += d * d
    return acc


cdef inline void _closest_on_triangle(const double* a, const double* b,
                                      const double* c, const double* p,
                                      double* out) nogil:
    cdef double ab[3]
    cdef double ac[3]
    cdef double ap[3]
    cdef double bp[3]
    cdef double cp[3]
    cdef double d1, d2, d3, d4, d5, d6, vc, vb, va, v, w, denom
    cdef int i
    for i in range(3):
        ab[i] = b[i] - a[i]
        ac[i] = c[i] - a[i]
        ap[i] = p[i] - a[i]
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        for i in range(3):
            out[i] = a[i]
        return
    for i in range(3):
        bp[i] = p[i] - b[i]
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        for i in range(3):
            out[i] = b[i]
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        for i in range(3):
            out[i] = a[i] + v * ab[i]
        return
    for i in range(3):
        cp[i] = p[i] - c[i]
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        for i in range(3):
            out[i] = c[i]
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        for i in range(3):
            out[i] = a[i] + w * ac[i]
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        for i in range(3):
            out[i] = b[i] + w * (c[i] - b[i])
        return
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    for i in range(3):
        out[i] = a[i] + ab[i] * v + ac[i] * w


def query_closest(double[:, :, ::1] tris,
                  double[:, ::1] bb_min, double[:, ::1] bb_max,
                  long[::1] left, long[::1] right,
                  long[::1] start, long[::1] count,
                  double[:, ::1] queries):
    cdef Py_ssize_t nq = queries.shape[0]
    cdef cnp.ndarray[double, ndim=1] best_sq = np.empty(nq, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] best_pt = np.empty((nq, 3), dtype=np.float64)
    cdef double[::1] best_sq_v = best_sq
    cdef double[:, ::1] best_pt_v = best_pt
    cdef cnp.ndarray[long, ndim=1] stack_arr = np.empty(
        2 * left.shape[0] + 64, dtype=np.int64)
    cdef long[::1] stack = stack_arr
    cdef Py_ssize_t qi, top
    cdef long node, l, r, t, s
    cdef double best, sq, dl, dr
    cdef double cand[3]
    cdef double d0, d1_, d2_
    cdef const double* p

    with nogil:
        for qi in range(nq):
            p = &queries[qi, 0]
            best = INFINITY
            stack[0] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                if _box_sqdist(&bb_min[node, 0], &bb_max[node, 0], p) >= best:
                    continue
                l = left[node]
                if l < 0:
                    s = start[node]
                    for t in range(s, s + count[node]):
                        _closest_on_triangle(&tris[t, 0, 0], &tris[t, 1, 0],
                                             &tris[t, 2, 0], p, cand)
                        d0 = cand[0] - p[0]
                        d1_ = cand[1] - p[1]
                        d2_ = cand[2] - p[2]
                        sq = d0 * d0 + d1_ * d1_ + d2_ * d2_
                        if sq < best:
                            best = sq
                            best_pt_v[qi, 0] = cand[0]
                            best_pt_v[qi, 1] = cand[1]
                            best_pt_v[qi, 2] = cand[2]
                    continue
                r = right[node]
                dl = _box_sqdist(&bb_min[l, 0], &bb_max[l, 0], p)
                dr = _box_sqdist(&bb_min[r, 0], &bb_max[r, 0], p)
                if dl <= dr:
                    if dr < best:
                        stack[top] = r
                        top += 1
                    if dl < best:
                        stack[top] = l
                        top += 1
                else:
                    if dl < best:
                        stack[top] = l
                        top += 1
                    if dr < best:
                        stack[top] = r
                        top += 1
            best_sq_v[qi] = best
    return best_sq, best_pt
