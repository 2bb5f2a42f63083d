"""Reconstruction error metrics: point-to-surface distance against the
original irregular mesh, vertex-to-vertex MSE, and conversion back to model
units."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh, ShapeMismatch
from .geombvh import TriangleBVH, build_bvh, query_closest
from .mesh import NormalizationTransform, TriMesh
from .subdivision import SemiRegularMesh


class SurfaceIndex:
    """Closest-point queries against a triangle mesh via an AABB tree."""

    def __init__(self, mesh: TriMesh, backend: str = "auto"):
        if mesh.n_faces == 0:
            raise EmptyMesh("cannot index a mesh with no faces")
        self.mesh = mesh
        self.backend = backend
        self.bvh = build_bvh(mesh.vertices[mesh.faces])

    def query(self, points: np.ndarray):
        """Returns (squared distances, closest surface points)."""
        return query_closest(self.bvh, points, backend=self.backend)


def p2s_error(recon, original: TriMesh, backend: str = "auto") -> float:
    """Mean squared distance from reconstructed vertices to the original
    surface (exact orthogonal projections onto the closest triangles)."""
    verts = recon.mesh.vertices if isinstance(recon, SemiRegularMesh) \
        else recon.vertices
    if len(verts) == 0:
        raise EmptyMesh("reconstruction has no vertices")
    index = SurfaceIndex(original, backend=backend)
    sq, _ = index.query(verts)
    return float(sq.mean())


def p2s_distances(recon_vertices: np.ndarray, index: SurfaceIndex) -> np.ndarray:
    """Per-vertex (non-squared) distances to an already-built surface index."""
    sq, _ = index.query(recon_vertices)
    return np.sqrt(sq)


def vertex_mse(recon, truth) -> float:
    """Mean squared Euclidean distance between corresponding vertices."""
    a = recon.mesh.vertices if isinstance(recon, SemiRegularMesh) else \
        (recon.vertices if isinstance(recon, TriMesh) else np.asarray(recon))
    b = truth.mesh.vertices if isinstance(truth, SemiRegularMesh) else \
        (truth.vertices if isinstance(truth, TriMesh) else np.asarray(truth))
    if a.shape != b.shape:
        raise ShapeMismatch(f"vertex arrays {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum(axis=1).mean())


def euclidean_error_units(distances, transform: NormalizationTransform) -> float:
    """Mean Euclidean (not squared) distance rescaled to model units."""
    if transform.axis_scale is not None \
            and not np.allclose(transform.axis_scale, transform.scale):
        raise ValueError("per-axis normalization has no single unit scale")
    return float(np.asarray(distances, dtype=np.float64).mean() * transform.scale)


# ---------------------------------------------------------------------------
# brute-force oracle
#
# Independent of the BVH kernels on purpose: distances come from enumerating
# the candidate features (plane foot point if it lies inside the triangle,
# the three edge segments, implicitly the vertices) instead of Voronoi-region
# branching, and the minimum is taken over all triangles.

def closest_sqdist_bruteforce(original: TriMesh, points: np.ndarray,
                              chunk: int = 256) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tris = original.vertices[original.faces]
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = _sqdist_block(tris, points[s:s + chunk])
    return out


def _sqdist_block(tris, pts):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]  # (T, 3)
    p = pts[:, None, :]  # (Q, 1, 3)
    best = np.full((len(pts), len(tris)), np.inf)

    # face interior: foot of the perpendicular, accepted if its barycentric
    # coordinates are all non-negative
    n = np.cross(b - a, c - a)
    nn = (n * n).sum(-1)
    ok = nn > 0
    dist_plane = ((p - a) * n).sum(-1)  # (Q, T) times |n|
    foot = p - (dist_plane / np.where(ok, nn, 1.0))[..., None] * n
    bary = _barycentric(a, b, c, foot)
    inside = ok & (bary >= -1e-12).all(-1)
    plane_sq = ((foot - p) ** 2).sum(-1)
    best = np.where(inside, plane_sq, best)

    for u, v in ((a, b), (b, c), (c, a)):
        best = np.minimum(best, _segment_sqdist(u, v, p))
    return best.min(axis=1)


def _barycentric(a, b, c, q):
    v0 = b - a
    v1 = c - a
    v2 = q - a
    d00 = (v0 * v0).sum(-1)
    d01 = (v0 * v1).sum(-1)
    d11 = (v1 * v1).sum(-1)
    d20 = (v2 * v0).sum(-1)
    d21 = (v2 * v1).sum(-1)
    denom = d00 * d11 - d01 * d01
    denom = np.where(np.abs(denom) > 0, denom, 1.0)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    return np.stack([1.0 - v - w, v, w], axis=-1)


def _segment_sqdist(u, v, p):
    d = v - u
    dd = (d * d).sum(-1)
    t = ((p - u) * d).sum(-1) / np.where(dd > 0, dd, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = u + t[..., None] * d
    return ((closest - p) ** 2).sum(-1)
