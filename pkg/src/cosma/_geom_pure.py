"""Pure NumPy twin of the compiled closest-point kernel.

Same BVH layout, same traversal, same Ericson-style point-triangle region
tests; the compiled module in ``_geomcore.pyx`` mirrors this file line for
line so either backend can serve ``geombvh.query_closest``.
"""
from __future__ import annotations

import numpy as np


def closest_point_on_triangle(a, b, c, p):
    """Closest point to ``p`` on triangle (a, b, c) by Voronoi-region tests."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


def _box_sqdist(lo, hi, p):
    d = np.maximum(lo - p, 0.0) + np.maximum(p - hi, 0.0)
    return d @ d


def query_closest(tris, bb_min, bb_max, left, right, start, count, queries):
    """Nearest surface point per query via best-first BVH traversal."""
    nq = len(queries)
    best_sq = np.full(nq, np.inf)
    best_pt = np.zeros((nq, 3))
    stack = np.empty(2 * len(left) + 64, dtype=np.int64)
    for qi in range(nq):
        p = queries[qi]
        best = np.inf
        bp = None
        stack[0] = 0
        top = 1
        while top:
            top -= 1
            node = stack[top]
            if _box_sqdist(bb_min[node], bb_max[node], p) >= best:
                continue
            l = left[node]
            if l < 0:
                s = start[node]
                for t in range(s, s + count[node]):
                    cand = closest_point_on_triangle(
                        tris[t, 0], tris[t, 1], tris[t, 2], p)
                    d = cand - p
                    sq = d @ d
                    if sq < best:
                        best = sq
                        bp = cand
                continue
            r = right[node]
            dl = _box_sqdist(bb_min[l], bb_max[l], p)
            dr = _box_sqdist(bb_min[r], bb_max[r], p)
            # push the farther child first so the nearer is explored next
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
        best_sq[qi] = best
        best_pt[qi] = bp
    return best_sq, best_pt
