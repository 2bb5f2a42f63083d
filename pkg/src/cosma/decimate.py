"""Greedy shortest-edge-collapse decimation for producing coarse base meshes.

Deliberately simple: collapse the shortest edge whose removal keeps the mesh
manifold (link condition, no face fold-over into a duplicate, no vanishing
area), placing the merged vertex at the edge midpoint.
"""
from __future__ import annotations

import heapq

import numpy as np

from .errors import CannotDecimate
from .mesh import TriMesh


def decimate_to_base(mesh: TriMesh, target_faces: int) -> TriMesh:
    """Reduce ``mesh`` to a face count within [target_faces, target_faces + 2]."""
    if target_faces < 1:
        raise ValueError("target_faces must be positive")
    if target_faces > mesh.n_faces:
        raise ValueError("target_faces exceeds input face count")
    if mesh.n_faces <= target_faces + 2:
        return mesh.copy()

    state = _CollapseState(mesh)
    if not state.has_boundary() and target_faces < 4:
        raise CannotDecimate("a closed surface cannot have fewer than 4 faces")

    while state.n_faces > target_faces + 2:
        if not state.collapse_shortest():
            raise CannotDecimate(
                f"no valid edge collapse left at {state.n_faces} faces "
                f"(target {target_faces})")
    return state.to_mesh(mesh.name)


class _CollapseState:
    def __init__(self, mesh: TriMesh):
        self.pos = mesh.vertices.copy()
        self.faces = {i: tuple(int(v) for v in f) for i, f in enumerate(mesh.faces)}
        self.vert_faces = {}
        for fi, f in self.faces.items():
            for v in f:
                self.vert_faces.setdefault(v, set()).add(fi)
        self.version = np.zeros(len(self.pos), dtype=np.int64)
        diag = np.linalg.norm(mesh.vertices.max(0) - mesh.vertices.min(0))
        self.area_eps = max(1e-14, 1e-12 * diag * diag)
        self.heap = []
        for u, v in self._edges():
            self._push(u, v)

    @property
    def n_faces(self):
        return len(self.faces)

    def _edges(self):
        es = set()
        for f in self.faces.values():
            for u, v in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                es.add((min(u, v), max(u, v)))
        return es

    def _push(self, u, v):
        length = float(np.linalg.norm(self.pos[u] - self.pos[v]))
        heapq.heappush(self.heap,
                       (length, u, v, int(self.version[u]), int(self.version[v])))

    def _edge_faces(self, u, v):
        return self.vert_faces.get(u, set()) & self.vert_faces.get(v, set())

    def has_boundary(self):
        for u, v in self._edges():
            if len(self._edge_faces(u, v)) == 1:
                return True
        return False

    def _neighbors(self, v):
        out = set()
        for fi in self.vert_faces.get(v, ()):
            out.update(self.faces[fi])
        out.discard(v)
        return out

    def _is_boundary_vertex(self, v):
        for w in self._neighbors(v):
            if len(self._edge_faces(v, w)) == 1:
                return True
        return False

    def collapse_shortest(self) -> bool:
        deferred = []
        collapsed = False
        while self.heap:
            length, u, v, su, sv = heapq.heappop(self.heap)
            if su != self.version[u] or sv != self.version[v]:
                continue
            if not self._edge_faces(u, v):
                continue
            if self._collapse_ok(u, v):
                self._do_collapse(u, v)
                collapsed = True
                break
            deferred.append((length, u, v, su, sv))
        # rejected candidates may become legal after other collapses
        for item in deferred:
            heapq.heappush(self.heap, item)
        return collapsed

    def _collapse_ok(self, u, v):
        efaces = self._edge_faces(u, v)
        opposite = {w for fi in efaces for w in self.faces[fi] if w not in (u, v)}
        if self._neighbors(u) & self._neighbors(v) != opposite:
            return False  # link condition
        if len(efaces) == 2 and self._is_boundary_vertex(u) \
                and self._is_boundary_vertex(v):
            return False  # interior edge between boundary vertices pinches
        # simulate: no duplicate faces, no vanishing area at the midpoint;
        # any post-collapse duplicate must involve u, so checking the faces
        # around u and v against each other suffices
        mid = 0.5 * (self.pos[u] + self.pos[v])
        new_faces = []
        for fi in (self.vert_faces[u] | self.vert_faces[v]) - efaces:
            f = tuple(u if w == v else w for w in self.faces[fi])
            new_faces.append(f)
        seen = set()
        for f in new_faces:
            key = tuple(sorted(f))
            if key in seen:
                return False
            seen.add(key)
            pts = [mid if w == u else self.pos[w] for w in f]
            area = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
            if area <= self.area_eps:
                return False
        return True

    def _do_collapse(self, u, v):
        for fi in list(self._edge_faces(u, v)):
            for w in self.faces.pop(fi):
                self.vert_faces[w].discard(fi)
        for fi in list(self.vert_faces.get(v, ())):
            f = tuple(u if w == v else w for w in self.faces[fi])
            self.faces[fi] = f
            self.vert_faces[v].discard(fi)
            self.vert_faces[u].add(fi)
        self.vert_faces.pop(v, None)
        self.pos[u] = 0.5 * (self.pos[u] + self.pos[v])
        self.version[u] += 1
        self.version[v] += 1
        for w in self._neighbors(u):
            self._push(min(u, w), max(u, w))

    def to_mesh(self, name):
        used = sorted({w for f in self.faces.values() for w in f})
        remap = {w: i for i, w in enumerate(used)}
        faces = [[remap[w] for w in self.faces[fi]] for fi in sorted(self.faces)]
        # merge any duplicate faces defensively (collapses should not create them)
        seen, out = set(), []
        for f in faces:
            key = tuple(sorted(f))
            if key not in seen:
                seen.add(key)
                out.append(f)
        return TriMesh(self.pos[used], np.array(out, dtype=np.int64), name)
