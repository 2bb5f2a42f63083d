"""Padded patch templates and per-patch feature extraction.

Each base face of a semi-regular mesh carries one patch: a triangular lattice
of side 2^rl. The network sees every patch padded with the two rings of
lattice positions just outside it, borrowed from the neighboring patches, so
the fixed per-level template is the lattice triangle plus its distance-1 and
distance-2 rings. Pooling keeps the even-even sublattice; two pooling steps
leave only the interior coarse-coarse triangle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConnectivityMismatch, ShapeMismatch, UnsupportedLevel
from .mesh import edge_face_incidence
from .subdivision import SemiRegularMesh

# axial-coordinate neighbor offsets of the triangular lattice
N6 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))

SUPPORTED_LEVELS = (2, 3, 4)


def hex_distance(p, q) -> int:
    """Graph distance between two triangular-lattice points."""
    da, db = p[0] - q[0], p[1] - q[1]
    return (abs(da) + abs(db) + abs(da + db)) // 2


def interior_coords(n):
    """Lattice triangle of side n, ordered by row b then column a."""
    return [(a, b) for b in range(n + 1) for a in range(n + 1 - b)]


def _rings(n):
    inner = set(interior_coords(n))
    ring1 = set()
    for a, b in inner:
        for da, db in N6:
            q = (a + da, b + db)
            if q not in inner:
                ring1.add(q)
    ring2 = set()
    for a, b in ring1:
        for da, db in N6:
            q = (a + da, b + db)
            if q not in inner and q not in ring1:
                ring2.add(q)
    order = lambda s: sorted(s, key=lambda p: (p[1], p[0]))
    return order(ring1), order(ring2)


@dataclass
class PatchLattice:
    """Bijection between interior slot indices and lattice pairs (a, b)."""

    n: int
    coords: list

    @property
    def interior_count(self) -> int:
        return len(self.coords)


@dataclass
class TemplateLevel:
    """One resolution level of the template: positions plus lattice adjacency."""

    side: int
    positions: list
    index: dict
    adjacency: np.ndarray  # (E, 2) undirected edges, u < v

    @property
    def count(self) -> int:
        return len(self.positions)

    def neighbor_lists(self):
        out = [[] for _ in range(self.count)]
        for u, v in self.adjacency:
            out[u].append(int(v))
            out[v].append(int(u))
        return [sorted(l) for l in out]


def _level_adjacency(positions, index):
    edges = set()
    for i, (a, b) in enumerate(positions):
        for da, db in N6:
            j = index.get((a + da, b + db))
            if j is not None:
                edges.add((min(i, j), max(i, j)))
    return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)


@dataclass
class PaddedPatchTemplate:
    """The fixed patch graph for one refinement level.

    ``levels[0]`` holds all interior + pad slots (the network input size),
    ``levels[1]`` the once-pooled template and ``levels[2]`` the interior
    coarse-coarse triangle that feeds the dense layers.
    """

    rl: int
    lattice: PatchLattice
    levels: list
    pad_slots: list
    pool_keep: list      # pool_keep[s][j] = source index of target vertex j
    unpool_parents: list  # unpool_parents[s][i] = (parent indices, clamp target)
    rotations: tuple

    @property
    def n(self) -> int:
        return 2 ** self.rl

    @property
    def interior_count(self) -> int:
        return self.lattice.interior_count

    @property
    def total_count(self) -> int:
        return self.levels[0].count

    @property
    def pad_count(self) -> int:
        return self.total_count - self.interior_count

    @property
    def embedding_count(self) -> int:
        """Vertices surviving both pooling steps."""
        return self.levels[2].count


def build_patch_template(rl: int) -> PaddedPatchTemplate:
    """Construct the padded patch template for a supported refinement level."""
    if rl not in SUPPORTED_LEVELS:
        raise UnsupportedLevel(f"rl must be one of {SUPPORTED_LEVELS}, got {rl}")
    n = 2 ** rl
    levels = []
    for stage, side in enumerate((n, n // 2, n // 4)):
        interior = interior_coords(side)
        if stage == 0:
            r1, r2 = _rings(side)
            positions = interior + r1 + r2
        elif stage == 1:
            r1, _ = _rings(side)
            positions = interior + r1
        else:
            positions = interior
        index = {p: i for i, p in enumerate(positions)}
        levels.append(TemplateLevel(side, positions, index,
                                    _level_adjacency(positions, index)))

    pool_keep = []
    unpool_parents = []
    for s in (0, 1):
        src, dst = levels[s], levels[s + 1]
        keep = np.array([src.index[(2 * a, 2 * b)] for a, b in dst.positions],
                        dtype=np.int64)
        pool_keep.append(keep)
        unpool_parents.append(_unpool_parents(src, dst))

    lattice = PatchLattice(n, interior_coords(n))
    r1, r2 = _rings(n)
    rotations = tuple(_rotation_perm(levels[0], n, times)
                      for times in (0, 1, 2))
    return PaddedPatchTemplate(rl, lattice, levels, r1 + r2,
                               pool_keep, unpool_parents, rotations)


def _coarse_parents(a, b):
    """Coarse lattice points whose edge midpoint (or copy) is fine point (a, b)."""
    if a % 2 == 0 and b % 2 == 0:
        return [(a // 2, b // 2)]
    if a % 2 == 1 and b % 2 == 0:
        return [((a - 1) // 2, b // 2), ((a + 1) // 2, b // 2)]
    if a % 2 == 0 and b % 2 == 1:
        return [(a // 2, (b - 1) // 2), (a // 2, (b + 1) // 2)]
    return [((a - 1) // 2, (b + 1) // 2), ((a + 1) // 2, (b - 1) // 2)]


def _unpool_parents(src: TemplateLevel, dst: TemplateLevel):
    """Per fine slot: indices of existing coarse parents, else a clamp target."""
    out = []
    for a, b in src.positions:
        parents = [dst.index[p] for p in _coarse_parents(a, b) if p in dst.index]
        clamp = None
        if not parents:
            best = min(range(dst.count),
                       key=lambda j: (hex_distance(
                           (2 * dst.positions[j][0], 2 * dst.positions[j][1]),
                           (a, b)), j))
            clamp = int(best)
        out.append((parents, clamp))
    return out


def _rotation_perm(level: TemplateLevel, n, times):
    """Slot permutation realizing a 120-degree corner relabeling, applied
    ``times`` times. Convention: ``rotated = values[perm]``."""
    perm = np.empty(level.count, dtype=np.int64)
    for i, p in enumerate(level.positions):
        q = p
        for _ in range(times):
            q = (q[1], n - q[0] - q[1])  # inverse rotation (a,b) -> (b, n-a-b)
        perm[i] = level.index[q]
    return perm


def rotation_permutations(template: PaddedPatchTemplate):
    """The 0, 120 and 240 degree slot permutations (0 degrees is identity)."""
    return template.rotations


# ---------------------------------------------------------------------------
# lattice tables: interior slot -> fine vertex id

def patch_interior_tables(sr: SemiRegularMesh, template: PaddedPatchTemplate) -> np.ndarray:
    """(k, m) array of fine vertex ids, one row per base face."""
    if sr.rl != template.rl:
        raise ConnectivityMismatch(
            f"mesh has rl={sr.rl}, template expects rl={template.rl}")
    n = template.n
    interior = template.lattice.coords
    k = sr.patch_count
    tables = np.empty((k, template.interior_count), dtype=np.int64)
    for p, face in enumerate(sr.base.faces):
        fv = [int(sr.base_fine_ids[v]) for v in face]
        tbl = {(0, 0): fv[0], (1, 0): fv[1], (0, 1): fv[2]}
        for midmap in sr.midmaps:
            doubled = {(2 * a, 2 * b): g for (a, b), g in tbl.items()}
            for (a, b), gu in tbl.items():
                for da, db in ((1, 0), (0, 1), (1, -1)):
                    q = (a + da, b + db)
                    gv = tbl.get(q)
                    if gv is None:
                        continue
                    key = (min(gu, gv), max(gu, gv))
                    doubled[(2 * a + da, 2 * b + db)] = midmap[key]
            tbl = doubled
        tables[p] = [tbl[pos] for pos in interior]
    return tables


@dataclass
class VertexMultiplicity:
    """Per fine vertex: the number of patches whose interior contains it."""

    counts: np.ndarray


def vertex_multiplicities(sr: SemiRegularMesh,
                          template: PaddedPatchTemplate | None = None,
                          tables: np.ndarray | None = None) -> VertexMultiplicity:
    """Count patch memberships; purely topological."""
    if tables is None:
        if template is None:
            template = build_patch_template(sr.rl)
        tables = patch_interior_tables(sr, template)
    counts = np.bincount(tables.ravel(), minlength=sr.mesh.n_vertices)
    return VertexMultiplicity(counts.astype(np.int64))


# ---------------------------------------------------------------------------
# extraction

@dataclass
class PatchSet:
    """Per-patch zero-mean padded features plus the bookkeeping to undo them.

    ``slot_sources[p, s]`` is the fine vertex id feeding slot s of patch p,
    or ``-1 - j`` when the slot replicates interior slot j (pad positions
    that fall off the mesh at a surface boundary).
    """

    features: np.ndarray      # (k, total, 3)
    offsets: np.ndarray       # (k, 3) subtracted means
    slot_sources: np.ndarray  # (k, total) int
    rl: int

    @property
    def patch_count(self) -> int:
        return len(self.features)

    def interior_tables(self, m: int) -> np.ndarray:
        return self.slot_sources[:, :m]


class PatchExtractor:
    """Precomputes slot sources for a topology; extraction is then a gather.

    All frames of a deforming sequence share one extractor.
    """

    def __init__(self, sr: SemiRegularMesh, template: PaddedPatchTemplate):
        if sr.rl != template.rl:
            raise ConnectivityMismatch(
                f"mesh has rl={sr.rl}, template expects rl={template.rl}")
        self.template = template
        self.n_vertices = sr.mesh.n_vertices
        self.tables = patch_interior_tables(sr, template)
        self.multiplicities = vertex_multiplicities(sr, template, self.tables)
        self.slot_sources = _resolve_pads(sr, template, self.tables)
        neg = self.slot_sources < 0
        self._gather = np.where(
            neg,
            np.take_along_axis(self.tables,
                               np.where(neg, -1 - self.slot_sources, 0),
                               axis=1),
            self.slot_sources)
        self.patch_weights = 1.0 / self.multiplicities.counts[self.tables]

    def extract(self, vertices: np.ndarray) -> PatchSet:
        """Cut zero-mean padded patches out of one frame's vertex positions."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != (self.n_vertices, 3):
            raise ShapeMismatch(
                f"expected ({self.n_vertices}, 3) positions, got {vertices.shape}")
        feats = vertices[self._gather]
        offsets = feats.mean(axis=1)
        feats = feats - offsets[:, None, :]
        return PatchSet(feats, offsets, self.slot_sources, self.template.rl)


def extract_patches(sr: SemiRegularMesh, template: PaddedPatchTemplate) -> PatchSet:
    return PatchExtractor(sr, template).extract(sr.mesh.vertices)


def _resolve_pads(sr: SemiRegularMesh, template: PaddedPatchTemplate,
                  tables: np.ndarray) -> np.ndarray:
    """Fill pad slots by walking the fine mesh across patch boundaries.

    A pad position q completes a lattice edge (u, w) to a triangle whose other
    completion r is already resolved; in the mesh, q is then the third vertex
    of the face on edge (gu, gw) that is not r's face. Pads that cannot be
    reached this way (mesh boundary) replicate the nearest interior slot.
    """
    level0 = template.levels[0]
    m = template.interior_count
    incidence = edge_face_incidence(sr.mesh.faces)
    faces = sr.mesh.faces

    def third_vertices(gu, gv):
        fs = incidence.get((min(gu, gv), max(gu, gv)), ())
        return [int(v) for fi in fs for v in faces[fi] if v not in (gu, gv)]

    interior_set = set(template.lattice.coords)
    pad_positions = level0.positions[m:]
    k = len(tables)
    out = np.empty((k, level0.count), dtype=np.int64)
    out[:, :m] = tables

    # replicate fallbacks: nearest interior slot by lattice distance
    fallback = np.empty(len(pad_positions), dtype=np.int64)
    for i, q in enumerate(pad_positions):
        best = min(range(m),
                   key=lambda j: (hex_distance(template.lattice.coords[j], q), j))
        fallback[i] = -1 - best

    for p in range(k):
        resolved = {pos: int(g)
                    for pos, g in zip(template.lattice.coords, tables[p])}
        pending = list(pad_positions)
        progress = True
        while pending and progress:
            progress = False
            still = []
            for q in pending:
                g = _resolve_one(q, resolved, third_vertices)
                if g is None:
                    still.append(q)
                else:
                    resolved[q] = g
                    progress = True
            pending = still
        for i, q in enumerate(pad_positions):
            out[p, m + i] = resolved.get(q, fallback[i])
    return out


def _resolve_one(q, resolved, third_vertices):
    qa, qb = q
    for da, db in N6:
        u = (qa + da, qb + db)
        gu = resolved.get(u)
        if gu is None:
            continue
        for dc, dd in N6:
            w = (qa + dc, qb + dd)
            if w <= u:  # each unordered neighbor pair once
                continue
            if hex_distance(u, w) != 1:
                continue
            gw = resolved.get(w)
            if gw is None:
                continue
            r = (u[0] + w[0] - qa, u[1] + w[1] - qb)
            gr = resolved.get(r)
            if gr is None:
                continue
            thirds = third_vertices(gu, gw)
            others = [t for t in thirds if t != gr]
            if len(thirds) == 2 and len(others) == 1:
                return others[0]
    return None


# ---------------------------------------------------------------------------
# reassembly

def reassemble(patch_set: PatchSet, template: PaddedPatchTemplate,
               features: np.ndarray | None = None,
               n_vertices: int | None = None) -> np.ndarray:
    """Average per-patch interior reconstructions back into global positions.

    Pad slots are ignored; each patch's stored translation is added back and
    a vertex shared by several patches gets the mean of its reconstructions.
    """
    if features is None:
        features = patch_set.features
    features = np.asarray(features, dtype=np.float64)
    m = template.interior_count
    if features.ndim != 3 or features.shape[0] != patch_set.patch_count \
            or features.shape[1] not in (m, template.total_count) \
            or features.shape[2] != 3:
        raise ShapeMismatch(f"bad reconstructed feature shape {features.shape}")
    tables = patch_set.interior_tables(m)
    if n_vertices is None:
        n_vertices = int(tables.max()) + 1
    recon = features[:, :m, :] + patch_set.offsets[:, None, :]
    acc = np.zeros((n_vertices, 3))
    counts = np.zeros(n_vertices)
    np.add.at(acc, tables.ravel(), recon.reshape(-1, 3))
    np.add.at(counts, tables.ravel(), 1.0)
    counts[counts == 0] = 1.0
    return acc / counts[:, None]


# ---------------------------------------------------------------------------
# debug export

def template_to_json(template: PaddedPatchTemplate) -> dict:
    """JSON-ready dump of adjacency, pool maps and rotations."""
    return {
        "rl": template.rl,
        "interior_count": template.interior_count,
        "total_count": template.total_count,
        "levels": [
            {
                "side": lvl.side,
                "positions": [list(p) for p in lvl.positions],
                "adjacency": lvl.adjacency.tolist(),
            }
            for lvl in template.levels
        ],
        "pool_keep": [k.tolist() for k in template.pool_keep],
        "unpool_parents": [
            [{"parents": parents, "clamp": clamp} for parents, clamp in stage]
            for stage in template.unpool_parents
        ],
        "rotations": [r.tolist() for r in template.rotations],
    }
