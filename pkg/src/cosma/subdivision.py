"""Subdivision connectivity: building semi-regular meshes and validating them.

A semi-regular mesh is one obtained from a coarse base mesh by repeated
midpoint subdivision. Validation runs the inverse: it coarsens the mesh by
grouping faces four-into-one, recovering the base mesh, the fine-face to
base-face map and the refinement step at which every vertex was created.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NotSemiRegular
from .mesh import TriMesh, _cyclic_key, edge_face_incidence, subdivide_midpoint_with_map


@dataclass
class SubdivisionDecomposition:
    """Result of coarsening a mesh ``rl`` times.

    ``face_to_patch[f] = (base face id, local face id)`` where the local id
    encodes, in base-4 digits from the first subdivision step down, which of
    the four children was taken (0, 1, 2 = corner at base vertex, 3 = center).
    ``vertex_levels[v]`` is the refinement step that created vertex v
    (0 = present in the base mesh).
    """

    base_faces: int
    rl: int
    face_to_patch: np.ndarray
    vertex_levels: np.ndarray


@dataclass
class SemiRegularMesh:
    """A fine mesh together with its full subdivision structure.

    ``base_fine_ids[i]`` is the fine-mesh vertex index of base vertex i, and
    ``midmaps[l]`` maps a level-l edge (as a sorted pair of fine vertex ids)
    to the fine id of the midpoint created when subdividing level l.
    """

    mesh: TriMesh
    base: TriMesh
    rl: int
    base_fine_ids: np.ndarray
    midmaps: list
    decomposition: SubdivisionDecomposition

    @property
    def patch_count(self) -> int:
        return self.base.n_faces

    def with_fine_vertices(self, vertices) -> "SemiRegularMesh":
        """Same subdivision structure, new fine positions."""
        vertices = np.asarray(vertices, dtype=np.float64)
        fine = self.mesh.with_vertices(vertices)
        base = self.base.with_vertices(vertices[self.base_fine_ids])
        return SemiRegularMesh(fine, base, self.rl, self.base_fine_ids,
                               self.midmaps, self.decomposition)


def subdivide_base(base: TriMesh, rl: int) -> SemiRegularMesh:
    """Subdivide a base mesh ``rl`` times, keeping the whole hierarchy."""
    if rl < 0:
        raise ValueError("rl must be non-negative")
    mesh = base
    midmaps = []
    levels = [0] * base.n_vertices
    for step in range(1, rl + 1):
        mesh, midmap = subdivide_midpoint_with_map(mesh)
        midmaps.append(midmap)
        levels.extend([step] * (mesh.n_vertices - len(levels)))
    k = base.n_faces
    fine_faces = mesh.n_faces
    face_to_patch = np.stack([np.arange(fine_faces) // 4**rl,
                              np.arange(fine_faces) % 4**rl], axis=1)
    decomp = SubdivisionDecomposition(k, rl, face_to_patch,
                                      np.array(levels, dtype=np.int64))
    return SemiRegularMesh(mesh, base, rl, np.arange(base.n_vertices),
                           midmaps, decomp)


def check_subdivision_connectivity(mesh: TriMesh, rl: int) -> SubdivisionDecomposition:
    """Verify that ``mesh`` coarsens ``rl`` times by undoing midpoint subdivision."""
    return analyze_semiregular(mesh, rl).decomposition


def analyze_semiregular(mesh: TriMesh, rl: int) -> SemiRegularMesh:
    """Like ``check_subdivision_connectivity`` but returns the full structure."""
    if rl < 0:
        raise ValueError("rl must be non-negative")
    fine = mesh
    current = mesh
    lift = np.arange(mesh.n_vertices)  # current-level id -> fine id
    vertex_levels = np.zeros(mesh.n_vertices, dtype=np.int64)
    midmaps_fine = []
    face_maps = []
    for step in range(1, rl + 1):
        try:
            coarse, face_map, midmap, kept = _coarsen_once(current)
        except NotSemiRegular as exc:
            raise NotSemiRegular(str(exc), step=step) from None
        level = rl - step + 1
        removed = np.setdiff1d(np.arange(current.n_vertices), kept,
                               assume_unique=False)
        vertex_levels[lift[removed]] = level
        midmaps_fine.append({(int(lift[u]), int(lift[v])): int(lift[m])
                             for (u, v), m in midmap.items()})
        face_maps.append(face_map)
        lift = lift[kept]
        current = coarse
    midmaps_fine.reverse()  # index by the level being subdivided, 0 = base

    # compose fine face -> (base face, local id); coarsening step c contributes
    # the base-4 digit of weight 4**(c-1)
    f = np.arange(fine.n_faces)
    local = np.zeros(fine.n_faces, dtype=np.int64)
    for c, face_map in enumerate(face_maps, start=1):
        local = local + face_map[f, 1] * 4**(c - 1)
        f = face_map[f, 0]
    decomp = SubdivisionDecomposition(current.n_faces, rl,
                                      np.stack([f, local], axis=1), vertex_levels)
    return SemiRegularMesh(fine, current, rl, lift, midmaps_fine, decomp)


# ---------------------------------------------------------------------------
# one coarsening step

_CENTRAL = -1  # marker in the labeling array


def _coarsen_once(mesh: TriMesh):
    """Undo one midpoint subdivision.

    Returns ``(coarse mesh, face_map, midpoint map, kept vertex ids)`` where
    ``face_map[f] = (coarse face id, child digit)`` and the midpoint map keys
    are sorted coarse-vertex pairs in current-level ids.
    """
    faces = mesh.faces
    n_faces = len(faces)
    if n_faces == 0 or n_faces % 4 != 0:
        raise NotSemiRegular(f"face count {n_faces} not divisible by 4")
    incidence = edge_face_incidence(faces)

    # face adjacency across 2-sided (manifold) edges only; labels must be
    # seeded separately in every region bounded by boundary/non-manifold edges
    neighbors = [[] for _ in range(n_faces)]
    for edge, fs in incidence.items():
        if len(fs) == 2:
            neighbors[fs[0]].append((edge, fs[1]))
            neighbors[fs[1]].append((edge, fs[0]))

    components = _face_components(n_faces, neighbors)
    candidates = []
    for comp in components:
        valid = _component_labelings(comp, faces, neighbors, incidence)
        if not valid:
            raise NotSemiRegular("no consistent four-to-one face grouping")
        candidates.append(valid)

    # usually each component admits exactly one labeling; tolerate a small
    # ambiguous product before giving up
    total = 1
    for v in candidates:
        total *= len(v)
    if total > 4096:
        candidates = [v[:1] for v in candidates]
    last_err = None
    for combo in itertools.product(*candidates):
        labels = np.full(n_faces, 0, dtype=np.int64)
        for part in combo:
            for fi, cv in part.items():
                labels[fi] = cv
        try:
            return _assemble_coarse(mesh, labels, incidence)
        except NotSemiRegular as exc:
            last_err = exc
    raise last_err if last_err is not None else NotSemiRegular("grouping failed")


def _face_components(n_faces, neighbors):
    seen = np.zeros(n_faces, dtype=bool)
    comps = []
    for start in range(n_faces):
        if seen[start]:
            continue
        comp = []
        queue = deque([start])
        seen[start] = True
        while queue:
            fi = queue.popleft()
            comp.append(fi)
            for _, g in neighbors[fi]:
                if not seen[g]:
                    seen[g] = True
                    queue.append(g)
        comps.append(comp)
    return comps


def _component_labelings(comp, faces, neighbors, incidence):
    """All locally consistent labelings of one face component.

    A labeling maps face id -> coarse corner vertex, or _CENTRAL. Propagation
    rules across a shared edge e: a central face forces its neighbor to be a
    corner face whose coarse vertex is its vertex off e; a corner face forces
    the face across its far edge to be central and faces across its two near
    edges to be corners at the same coarse vertex.
    """
    seed = comp[0]
    hypotheses = [_CENTRAL] + [int(v) for v in faces[seed]]
    valid = []
    for hyp in hypotheses:
        labels = {seed: hyp}
        queue = deque([seed])
        ok = True
        while queue and ok:
            fi = queue.popleft()
            mine = labels[fi]
            for edge, g in neighbors[fi]:
                want = _forced_label(faces, fi, mine, edge, g)
                if want is None:
                    continue
                if g in labels:
                    if labels[g] != want:
                        ok = False
                        break
                else:
                    labels[g] = want
                    queue.append(g)
        if not ok or len(labels) != len(comp):
            continue
        if _labels_locally_valid(comp, labels, faces, incidence):
            valid.append(labels)
    return valid


def _forced_label(faces, fi, mine, edge, g):
    if mine == _CENTRAL:
        off = [int(v) for v in faces[g] if int(v) not in edge]
        if len(off) != 1:
            return None  # degenerate neighbor, caught by the validity scan
        return off[0]
    if mine in edge:
        return mine
    return _CENTRAL


def _labels_locally_valid(comp, labels, faces, incidence):
    for fi in comp:
        mine = labels[fi]
        fv = [int(v) for v in faces[fi]]
        if mine == _CENTRAL:
            # a central face is interior to a patch: all edges 2-sided
            for u, v in ((fv[0], fv[1]), (fv[1], fv[2]), (fv[2], fv[0])):
                key = (min(u, v), max(u, v))
                if len(incidence[key]) != 2:
                    return False
        else:
            if mine not in fv:
                return False
            far = tuple(sorted(v for v in fv if v != mine))
            fs = incidence[far]
            if len(fs) != 2:
                return False
            other = fs[0] if fs[1] == fi else fs[1]
            if labels.get(other) != _CENTRAL:
                return False
    return True


def _assemble_coarse(mesh: TriMesh, labels, incidence):
    faces = mesh.faces
    centrals = np.flatnonzero(labels == _CENTRAL)
    if 4 * len(centrals) != len(faces):
        raise NotSemiRegular("central/corner face count mismatch")

    central_rank = {int(fi): i for i, fi in enumerate(centrals)}
    coarse_faces = np.zeros((len(centrals), 3), dtype=np.int64)
    face_map = np.zeros((len(faces), 2), dtype=np.int64)
    filled = np.zeros((len(centrals), 3), dtype=bool)
    midpoint = {}

    for i, fi in enumerate(centrals):
        face_map[fi] = (i, 3)
        m = [int(v) for v in faces[fi]]
        # the corner face across central edge (m2,m0) holds coarse vertex 0,
        # across (m0,m1) vertex 1, across (m1,m2) vertex 2
        for slot, (eu, ev) in enumerate(((m[2], m[0]), (m[0], m[1]), (m[1], m[2]))):
            key = (min(eu, ev), max(eu, ev))
            fs = incidence[key]
            if len(fs) != 2:
                raise NotSemiRegular("central face touches a boundary edge")
            corner = fs[0] if fs[1] == fi else fs[1]
            cv = labels[corner]
            if cv == _CENTRAL or cv in (eu, ev):
                raise NotSemiRegular("inconsistent corner face")
            if filled[i, slot]:
                raise NotSemiRegular("corner face claimed twice")
            filled[i, slot] = True
            coarse_faces[i, slot] = cv
            face_map[corner] = (i, slot)
        a, b, c = coarse_faces[i]
        for (u, v), mid in (((a, b), m[0]), ((b, c), m[1]), ((c, a), m[2])):
            key = (int(min(u, v)), int(max(u, v)))
            if midpoint.get(key, mid) != mid:
                raise NotSemiRegular("coarse edge with two distinct midpoints")
            midpoint[key] = mid

    if not filled.all():
        raise NotSemiRegular("central face missing a corner")

    mids = set(midpoint.values())
    corner_vs = set(int(v) for v in coarse_faces.ravel())
    if mids & corner_vs:
        raise NotSemiRegular("vertex is both midpoint and coarse corner")

    kept = np.array(sorted(set(range(mesh.n_vertices)) - mids), dtype=np.int64)
    new_id = np.full(mesh.n_vertices, -1, dtype=np.int64)
    new_id[kept] = np.arange(len(kept))
    coarse = TriMesh(mesh.vertices[kept], new_id[coarse_faces], name=mesh.name)

    _verify_resubdivision(mesh, coarse, kept, midpoint)
    return coarse, face_map, midpoint, kept


def _verify_resubdivision(fine: TriMesh, coarse: TriMesh, kept, midpoint):
    """Re-subdivide the recovered coarse mesh topologically and compare."""
    rebuilt = set()
    for a, b, c in coarse.faces:
        A, B, C = int(kept[a]), int(kept[b]), int(kept[c])
        try:
            ab = midpoint[(min(A, B), max(A, B))]
            bc = midpoint[(min(B, C), max(B, C))]
            ca = midpoint[(min(C, A), max(C, A))]
        except KeyError:
            raise NotSemiRegular("coarse edge without midpoint") from None
        for tri in ((A, ab, ca), (ab, B, bc), (ca, bc, C), (ab, bc, ca)):
            rebuilt.add(_cyclic_key(tri))
    original = {_cyclic_key(f) for f in fine.faces}
    if rebuilt != original:
        raise NotSemiRegular("re-subdividing the coarse mesh does not "
                             "reproduce the input faces")
