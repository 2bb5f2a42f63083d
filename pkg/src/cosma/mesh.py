"""Triangle mesh container, file I/O, midpoint subdivision and normalization."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DanglingIndex,
    DegenerateExtent,
    InvalidMesh,
    IoError,
    NonTriangleFace,
    ParseError,
)


@dataclass
class TriMesh:
    """Indexed triangle mesh: float64 positions and int vertex-index triples.

    Vertex and face order is meaningful and preserved by all operations in
    this module. Instances are treated as immutable values; operations return
    new meshes.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        validate_mesh(self)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology, new positions."""
        return TriMesh(np.asarray(vertices, dtype=np.float64), self.faces.copy(), self.name)

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.name)


def validate_mesh(mesh: TriMesh):
    """Raise if the mesh violates its structural invariants."""
    faces = mesh.faces
    if faces.size == 0:
        return
    if faces.min() < 0 or faces.max() >= mesh.n_vertices:
        raise DanglingIndex(
            f"face index out of range (have {mesh.n_vertices} vertices)")
    if ((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])).any():
        raise InvalidMesh("face with repeated vertex")
    seen = set()
    for f in faces:
        key = _cyclic_key(f)
        if key in seen:
            raise InvalidMesh(f"duplicate face {tuple(int(v) for v in f)}")
        seen.add(key)


def _cyclic_key(face):
    """Canonical form of a face under cyclic rotation (orientation kept)."""
    a, b, c = (int(v) for v in face)
    return min((a, b, c), (b, c, a), (c, a, b))


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Sorted unique undirected edges as an (E, 2) array with u < v."""
    if len(faces) == 0:
        return np.empty((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def edge_face_incidence(faces: np.ndarray) -> dict[tuple[int, int], list[int]]:
    """Map from undirected edge (u < v) to the list of incident face indices."""
    inc: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(np.asarray(faces)):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(min(u, v)), int(max(u, v)))
            inc.setdefault(key, []).append(fi)
    return inc


def boundary_vertices(faces: np.ndarray) -> np.ndarray:
    """Vertices lying on an edge with exactly one incident face."""
    inc = edge_face_incidence(faces)
    out = sorted({v for e, fs in inc.items() if len(fs) == 1 for v in e})
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# file I/O

_FORMATS = ("obj", "off", "ply-ascii")


def _infer_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return "obj"
    if ext == ".off":
        return "off"
    if ext == ".ply":
        return "ply-ascii"
    raise IoError(f"cannot infer mesh format from {path!r}")


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Load a triangle mesh from an OBJ, OFF or ascii-PLY file.

    Vertex and face order is preserved exactly as written. Only triangle
    faces are accepted.
    """
    fmt = format or _infer_format(path)
    if fmt not in _FORMATS:
        raise IoError(f"unsupported format {fmt!r}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if fmt == "obj":
        verts, faces = _parse_obj(text)
    elif fmt == "off":
        verts, faces = _parse_off(text)
    else:
        verts, faces = _parse_ply_ascii(text)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    mesh = TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3), name=name)
    return mesh


def _parse_obj(text):
    verts, faces = [], []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError("vertex line needs 3 coordinates", line=ln)
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"bad vertex coordinate: {exc}", line=ln) from exc
        elif tag == "f":
            idx = parts[1:]
            if len(idx) != 3:
                raise NonTriangleFace(
                    f"line {ln}: face with {len(idx)} vertices (triangles only)")
            face = []
            for tok in idx:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ParseError(f"bad face index {tok!r}", line=ln) from exc
                if i <= 0:
                    raise ParseError(f"face index must be positive, got {i}", line=ln)
                face.append(i - 1)
            faces.append(face)
        # vn/vt/g/o/s/usemtl/mtllib are ignored
    _check_indices(faces, len(verts))
    return verts, faces


def _parse_off(text):
    lines = [l.split("#")[0].strip() for l in text.splitlines()]
    lines = [l for l in lines if l]
    if not lines or lines[0] != "OFF":
        raise ParseError("missing OFF header", line=1)
    try:
        nv, nf = int(lines[1].split()[0]), int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"bad OFF count line: {exc}", line=2) from exc
    if len(lines) < 2 + nv + nf:
        raise ParseError("truncated OFF file")
    verts, faces = [], []
    for i in range(nv):
        parts = lines[2 + i].split()
        try:
            verts.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"bad vertex: {exc}", line=3 + i) from exc
    for i in range(nf):
        parts = lines[2 + nv + i].split()
        if int(parts[0]) != 3:
            raise NonTriangleFace(f"face with {parts[0]} vertices (triangles only)")
        faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
    _check_indices(faces, nv)
    return verts, faces


def _parse_ply_ascii(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing ply header", line=1)
    nv = nf = None
    in_vertex = False
    vert_props = []
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if line.startswith("format"):
            if "ascii" not in line:
                raise ParseError("binary PLY is not supported")
        elif line.startswith("element vertex"):
            nv = int(line.split()[2])
            in_vertex = True
        elif line.startswith("element face"):
            nf = int(line.split()[2])
            in_vertex = False
        elif line.startswith("property") and in_vertex:
            vert_props.append(line.split()[-1])
        elif line == "end_header":
            break
    else:
        raise ParseError("missing end_header")
    if nv is None or nf is None:
        raise ParseError("PLY header lacks vertex or face element")
    if vert_props[:3] != ["x", "y", "z"]:
        raise ParseError("vertex properties must start with x y z")
    body = [l.strip() for l in lines[i:] if l.strip()]
    if len(body) < nv + nf:
        raise ParseError("truncated PLY body")
    verts, faces = [], []
    for k in range(nv):
        parts = body[k].split()
        verts.append([float(parts[0]), float(parts[1]), float(parts[2])])
    for k in range(nf):
        parts = body[nv + k].split()
        if int(parts[0]) != 3:
            raise NonTriangleFace(f"face with {parts[0]} vertices (triangles only)")
        faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
    _check_indices(faces, nv)
    return verts, faces


def _check_indices(faces, n_vertices):
    for f in faces:
        for v in f:
            if v < 0 or v >= n_vertices:
                raise DanglingIndex(
                    f"face references vertex {v + 1} but file has {n_vertices}")


def _fmt_coord(x: float) -> str:
    """Exact round-trip decimal with at least 9 significant digits."""
    s = repr(float(x))
    digits = sum(ch.isdigit() for ch in s.split("e")[0].lstrip("-0."))
    if digits < 9:
        return f"{x:.8e}"
    return s


def save_mesh(mesh: TriMesh, path, format: str | None = None):
    """Write a mesh so that ``load_mesh`` reproduces it exactly."""
    fmt = format or _infer_format(path)
    if fmt not in _FORMATS:
        raise IoError(f"unsupported format {fmt!r}")
    out = []
    if fmt == "obj":
        for v in mesh.vertices:
            out.append(f"v {_fmt_coord(v[0])} {_fmt_coord(v[1])} {_fmt_coord(v[2])}")
        for f in mesh.faces:
            out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    elif fmt == "off":
        out.append("OFF")
        out.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        for v in mesh.vertices:
            out.append(f"{_fmt_coord(v[0])} {_fmt_coord(v[1])} {_fmt_coord(v[2])}")
        for f in mesh.faces:
            out.append(f"3 {f[0]} {f[1]} {f[2]}")
    else:
        out.append("ply")
        out.append("format ascii 1.0")
        out.append(f"element vertex {mesh.n_vertices}")
        out.extend(["property double x", "property double y", "property double z"])
        out.append(f"element face {mesh.n_faces}")
        out.append("property list uchar int vertex_indices")
        out.append("end_header")
        for v in mesh.vertices:
            out.append(f"{_fmt_coord(v[0])} {_fmt_coord(v[1])} {_fmt_coord(v[2])}")
        for f in mesh.faces:
            out.append(f"3 {f[0]} {f[1]} {f[2]}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


# ---------------------------------------------------------------------------
# midpoint subdivision

def subdivide_midpoint(mesh: TriMesh) -> TriMesh:
    """One uniform subdivision step: a midpoint on each edge, 4 faces per face.

    Original vertices keep their indices; midpoints are appended in the order
    edges are first encountered (faces in order, edges v0v1, v1v2, v2v0).
    """
    fine, _ = subdivide_midpoint_with_map(mesh)
    return fine


def subdivide_midpoint_with_map(mesh: TriMesh):
    """Subdivide and also return {(u, v) sorted: midpoint index}."""
    verts = list(mesh.vertices)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(u, v):
        key = (min(u, v), max(u, v))
        idx = midpoint.get(key)
        if idx is None:
            idx = len(verts)
            verts.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
            midpoint[key] = idx
        return idx

    faces = []
    for v0, v1, v2 in mesh.faces:
        v0, v1, v2 = int(v0), int(v1), int(v2)
        ab, bc, ca = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        # children in local order: corner at v0, v1, v2, then the central face
        faces.append([v0, ab, ca])
        faces.append([ab, v1, bc])
        faces.append([ca, bc, v2])
        faces.append([ab, bc, ca])
    out = TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                  np.array(faces, dtype=np.int64).reshape(-1, 3), name=mesh.name)
    return out, midpoint


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationTransform:
    """Affine map taking model coordinates into the unit box.

    ``normalized = (x - translation) / scale`` in aspect-preserving mode.
    Per-axis mode additionally stores ``axis_scale`` and divides each axis by
    its own factor; ``scale`` then holds the largest factor and must not be
    used to convert errors back to model units.
    """

    translation: np.ndarray
    scale: float
    axis_scale: np.ndarray | None = None

    def apply(self, points: np.ndarray) -> np.ndarray:
        s = self.axis_scale if self.axis_scale is not None else self.scale
        return (np.asarray(points, dtype=np.float64) - self.translation) / s

    def invert(self, points: np.ndarray) -> np.ndarray:
        s = self.axis_scale if self.axis_scale is not None else self.scale
        return np.asarray(points, dtype=np.float64) * s + self.translation

    def apply_mesh(self, mesh: TriMesh) -> TriMesh:
        return mesh.with_vertices(self.apply(mesh.vertices))

    def invert_mesh(self, mesh: TriMesh) -> TriMesh:
        return mesh.with_vertices(self.invert(mesh.vertices))


def normalize_to_unit_range(meshes, mode: str = "aspect-preserving"):
    """Jointly normalize a sequence of meshes into [-1, 1].

    The bounding box is computed over all meshes together so a deformation
    sequence keeps its temporal coherence. Aspect-preserving mode divides all
    axes by half the largest extent; per-axis mode stretches each axis to fill
    [-1, 1] (a zero-extent axis is centered and left unscaled).

    Returns the normalized meshes and the transform needed to invert the map
    or to convert errors back to model units.
    """
    meshes = list(meshes)
    if not meshes:
        raise DegenerateExtent("empty mesh sequence")
    mode = mode.replace("_", "-")
    if mode not in ("aspect-preserving", "per-axis"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    all_pts = np.concatenate([m.vertices for m in meshes if m.n_vertices],
                             axis=0) if any(m.n_vertices for m in meshes) else None
    if all_pts is None or len(all_pts) == 0:
        raise DegenerateExtent("no vertices to normalize")
    lo = all_pts.min(axis=0)
    hi = all_pts.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if half.max() == 0.0:
        raise DegenerateExtent("zero bounding box")
    if mode == "aspect-preserving":
        transform = NormalizationTransform(center, float(half.max()))
    else:
        axis = np.where(half > 0.0, half, 1.0)
        transform = NormalizationTransform(center, float(axis.max()), axis_scale=axis)
    return [transform.apply_mesh(m) for m in meshes], transform
