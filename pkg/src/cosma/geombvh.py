"""Axis-aligned BVH over triangles with a compiled closest-point kernel and a
pure NumPy fallback selected at import time.

``backend_name()`` reports which one is active; both expose the same
``query_closest(bvh, queries)`` contract and are exercised against each other
and against a brute-force oracle in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:  # compiled kernel is optional
    from . import _geomcore
    _COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _geomcore = None
    _COMPILED = False

from . import _geom_pure


def backend_name() -> str:
    return "compiled" if _COMPILED else "python"


_LEAF_SIZE = 8


@dataclass
class TriangleBVH:
    """Flattened median-split tree; leaves reference contiguous triangle runs."""

    triangles: np.ndarray  # (T, 3, 3) reordered
    order: np.ndarray      # original triangle index per reordered slot
    bb_min: np.ndarray     # (N, 3)
    bb_max: np.ndarray
    left: np.ndarray       # (N,) child ids, -1 marks a leaf
    right: np.ndarray
    start: np.ndarray      # leaf triangle range
    count: np.ndarray


def build_bvh(triangles: np.ndarray) -> TriangleBVH:
    triangles = np.ascontiguousarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    n = len(triangles)
    if n == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    centroids = triangles.mean(axis=1)
    tri_min = triangles.min(axis=1)
    tri_max = triangles.max(axis=1)

    order = np.arange(n)
    bb_min, bb_max, left, right, start, count = [], [], [], [], [], []

    def emit(idx):
        node = len(bb_min)
        bb_min.append(tri_min[idx].min(axis=0))
        bb_max.append(tri_max[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return node

    # iterative build; each span is (node id, triangle indices it covers)
    root = emit(order)
    pos = 0
    out_order = np.empty(n, dtype=np.int64)
    spans = [(root, order)]
    while spans:
        node, idx = spans.pop()
        if len(idx) <= _LEAF_SIZE:
            start[node] = pos
            count[node] = len(idx)
            out_order[pos:pos + len(idx)] = idx
            pos += len(idx)
            continue
        extent = tri_max[idx].max(axis=0) - tri_min[idx].min(axis=0)
        axis = int(np.argmax(extent))
        key = centroids[idx, axis]
        half = len(idx) // 2
        part = np.argsort(key, kind="stable")
        lo, hi = idx[part[:half]], idx[part[half:]]
        left[node] = emit(lo)
        right[node] = emit(hi)
        spans.append((left[node], lo))
        spans.append((right[node], hi))

    return TriangleBVH(
        triangles=np.ascontiguousarray(triangles[out_order]),
        order=out_order,
        bb_min=np.ascontiguousarray(np.array(bb_min)),
        bb_max=np.ascontiguousarray(np.array(bb_max)),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
    )


def query_closest(bvh: TriangleBVH, queries: np.ndarray, backend: str = "auto"):
    """Squared distance and closest surface point for each query point.

    ``backend`` is "auto", "compiled" or "python"; "auto" prefers the
    compiled kernel when it was built.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if backend == "auto":
        backend = backend_name()
    if backend == "compiled":
        if not _COMPILED:
            raise RuntimeError("compiled geometry kernel is not available")
        return _geomcore.query_closest(
            bvh.triangles, bvh.bb_min, bvh.bb_max, bvh.left, bvh.right,
            bvh.start, bvh.count, queries)
    if backend == "python":
        return _geom_pure.query_closest(
            bvh.triangles, bvh.bb_min, bvh.bb_max, bvh.left, bvh.right,
            bvh.start, bvh.count, queries)
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ("compiled", "python") if _COMPILED else ("python",)
