"""Triangular surface meshes and piecewise-constant panel geometry.

Every triangle of a :class:`TriangleMesh` doubles as one degree of freedom
(an indicator basis function).  Geometry needed downstream (centroids, areas,
outward normals, edge lengths) is computed once and cached on the mesh.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .validation import check_int, check_points


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


class OFFParseError(MeshError):
    """Raised when an OFF file cannot be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class DegenerateTriangleError(MeshError):
    def __init__(self, triangle):
        self.triangle = int(triangle)
        super().__init__(f"triangle {triangle} is degenerate (zero area)")


@dataclass(frozen=True)
class Panel:
    """Geometry of one piecewise-constant DOF."""

    index: int
    center: np.ndarray
    diameter: float
    area: float
    normal: np.ndarray
    vertices: np.ndarray = field(repr=False)
    vertex_ids: tuple = field(default=(), repr=False)


class TriangleMesh:
    """Immutable triangle surface mesh.

    Parameters
    ----------
    vertices : array_like, shape (nv, 3)
    triangles : array_like of int, shape (nt, 3)
        Vertex indices, ordered counter-clockwise when seen from outside.
    """

    def __init__(self, vertices, triangles):
        verts = check_points(vertices, "vertices")
        tris = np.asarray(triangles)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError(f"triangles must have shape (n, 3), got {tris.shape}")
        if tris.size and not np.issubdtype(tris.dtype, np.integer):
            raise MeshError("triangle indices must be integers")
        tris = np.ascontiguousarray(tris, dtype=np.int64)
        if tris.shape[0] == 0:
            raise MeshError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= verts.shape[0]:
            raise MeshError("triangle index out of range")
        verts.setflags(write=False)
        tris.setflags(write=False)
        self._vertices = verts
        self._triangles = tris
        bad = np.flatnonzero(~(self.areas > 0))
        if bad.size:
            raise DegenerateTriangleError(bad[0])

    @property
    def vertices(self):
        return self._vertices

    @property
    def triangles(self):
        return self._triangles

    @property
    def n_panels(self):
        return self._triangles.shape[0]

    def __len__(self):
        return self.n_panels

    def __repr__(self):
        return f"TriangleMesh(n_vertices={self._vertices.shape[0]}, n_triangles={self.n_panels})"

    # -- cached per-panel geometry -------------------------------------------------

    def _frozen(self, arr):
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        return arr

    @cached_property
    def corners(self):
        """Panel corner coordinates, shape (nt, 3, 3)."""
        return self._frozen(self._vertices[self._triangles])

    @cached_property
    def _cross(self):
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self):
        return self._frozen(0.5 * np.linalg.norm(self._cross, axis=1))

    @cached_property
    def normals(self):
        return self._frozen(self._cross / np.linalg.norm(self._cross, axis=1)[:, None])

    @cached_property
    def centers(self):
        return self._frozen(self.corners.mean(axis=1))

    @cached_property
    def panel_diameters(self):
        """Largest edge length of each triangle."""
        c = self.corners
        edges = np.stack(
            [c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1
        )
        return self._frozen(np.linalg.norm(edges, axis=2).max(axis=1))

    @property
    def h(self):
        """Largest DOF diameter."""
        return float(self.panel_diameters.max())

    @cached_property
    def diameter(self):
        """Largest distance between two mesh vertices."""
        pts = self._vertices
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
        # exact pairwise maximum, chunked to bound memory on large hulls
        best = 0.0
        for start in range(0, pts.shape[0], 256):
            d = pts[start : start + 256, None, :] - pts[None, :, :]
            best = max(best, float(np.einsum("ijk,ijk->ij", d, d).max()))
        return float(np.sqrt(best))

    @cached_property
    def fingerprint(self):
        """Stable hash of the geometry, used to tie containers to a mesh."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self._vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self._triangles, dtype="<i8").tobytes())
        return h.hexdigest()[:32]

    # -- topology --------------------------------------------------------------------

    def _directed_edges(self):
        t = self._triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def is_closed(self):
        """Every undirected edge is shared by exactly two triangles."""
        e = np.sort(self._directed_edges(), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def is_consistently_oriented(self):
        """Each interior edge is traversed in opposite directions by its two triangles."""
        counts = Counter(map(tuple, self._directed_edges().tolist()))
        if any(n > 1 for n in counts.values()):
            return False
        if self.is_closed():
            return all((b, a) in counts for a, b in counts)
        return True

    def panels(self):
        return panels(self)


def panels(mesh):
    """One :class:`Panel` per triangle of ``mesh``."""
    out = []
    for n in range(mesh.n_panels):
        out.append(
            Panel(
                index=n,
                center=mesh.centers[n],
                diameter=float(mesh.panel_diameters[n]),
                area=float(mesh.areas[n]),
                normal=mesh.normals[n],
                vertices=mesh.corners[n],
                vertex_ids=tuple(int(v) for v in mesh.triangles[n]),
            )
        )
    return out


# -- OFF input/output ----------------------------------------------------------------------


def _off_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def load_off(path):
    """Read an ASCII OFF file containing only triangles."""
    text = Path(path).read_text()
    lines = _off_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise OFFParseError("empty file", 1) from None
    tokens = header.split()
    if tokens[0] != "OFF":
        raise OFFParseError(f"expected 'OFF' header, got {tokens[0]!r}", lineno)
    tokens = tokens[1:]
    if not tokens:
        try:
            lineno, counts = next(lines)
        except StopIteration:
            raise OFFParseError("missing counts line", lineno + 1) from None
        tokens = counts.split()
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError):
        raise OFFParseError("malformed counts line", lineno) from None
    if nv < 0 or nf < 0:
        raise OFFParseError("negative element counts", lineno)

    vertices = np.empty((nv, 3))
    for k in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise OFFParseError(
                f"file truncated: expected {nv} vertices, found {k}", lineno + 1
            ) from None
        parts = line.split()
        try:
            vertices[k] = [float(p) for p in parts[:3]]
        except ValueError:
            raise OFFParseError("malformed vertex", lineno) from None
        if len(parts) < 3:
            raise OFFParseError("vertex needs three coordinates", lineno)

    triangles = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise OFFParseError(
                f"file truncated: expected {nf} faces, found {k}", lineno + 1
            ) from None
        parts = line.split()
        try:
            ids = [int(p) for p in parts]
        except ValueError:
            raise OFFParseError("malformed face", lineno) from None
        if len(ids) < 4 or ids[0] != 3:
            raise OFFParseError("only triangular faces ('3 a b c') are supported", lineno)
        if min(ids[1:4]) < 0 or max(ids[1:4]) >= nv:
            raise OFFParseError("face index out of range", lineno)
        triangles[k] = ids[1:4]
    return TriangleMesh(vertices, triangles)


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.vertices.shape[0]} {mesh.n_panels} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


# -- generators ------------------------------------------------------------------------------


def _icosahedron():
    p = (1.0 + 5.0**0.5) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _subdivide(vertices, faces):
    verts = list(vertices)
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = 0.5 * (verts[a] + verts[b])
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    out = np.empty((4 * faces.shape[0], 3), dtype=np.int64)
    for n, (a, b, c) in enumerate(faces.tolist()):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out[4 * n : 4 * n + 4] = [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), out


def gen_sphere(level):
    """Unit sphere from an icosahedron refined ``level`` times (20 * 4**level panels)."""
    level = check_int(level, "level", minimum=0)
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    v = v / np.linalg.norm(v, axis=1)[:, None]
    mesh = TriangleMesh(v, f)
    # icosahedron orientation is outward; keep the check cheap and explicit
    if np.dot(mesh.normals[0], mesh.centers[0]) < 0:
        mesh = TriangleMesh(v, f[:, ::-1])
    return mesh


def gen_blob(level, seed=0, amplitude=0.3):
    """Smooth, non-symmetric closed surface: a radially perturbed, stretched sphere.

    The radial perturbation is a sum of a few random low-order spherical
    waves, so the shape has no reflection symmetry for generic seeds.
    """
    sphere = gen_sphere(level)
    rng = np.random.default_rng(seed)
    u = sphere.vertices
    radius = np.ones(u.shape[0])
    for _ in range(4):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        freq = rng.uniform(1.0, 3.0)
        radius += amplitude / 4 * np.cos(freq * np.pi * (u @ d) + rng.uniform(0, 2 * np.pi))
    stretch = np.array([1.4, 1.0, 0.75])
    v = u * radius[:, None] * stretch
    return TriangleMesh(v, sphere.triangles)
