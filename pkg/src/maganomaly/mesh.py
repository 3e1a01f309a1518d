"""Closed triangulated surfaces: icospheres, ellipsoids, similarity maps."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

MAX_REFINEMENT = 7
RELAX_SWEEPS = 5  # tangential Laplacian smoothing passes on the sphere


@dataclass(frozen=True)
class ShapeSpec:
    """Reference shape of an inclusion (or of the core).

    ``kind`` is ``"unit-ball"`` or ``"ellipsoid"``; ellipsoids carry their
    semi-axes along x, y, z.
    """

    kind: str = "unit-ball"
    refinement: int = 3
    semi_axes: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("unit-ball", "ellipsoid"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind == "unit-ball":
            object.__setattr__(self, "semi_axes", (1.0, 1.0, 1.0))
        if any(a <= 0 for a in self.semi_axes):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        if not 0 <= int(self.refinement) <= MAX_REFINEMENT:
            raise ValueError(
                f"refinement must lie in [0, {MAX_REFINEMENT}], got {self.refinement}"
            )

    @property
    def is_ball(self) -> bool:
        return self.kind == "unit-ball"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Flat-triangle closed surface with per-element geometry.

    Parameters
    ----------
    vertices : (V, 3) array
    triangles : (T, 3) int array, counter-clockwise seen from outside.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        cross = np.cross(p1 - p0, p2 - p0)
        twice_area = np.linalg.norm(cross, axis=1)
        if np.any(twice_area <= 0):
            raise ValueError("degenerate triangle in mesh")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        object.__setattr__(self, "normals", _frozen(cross / twice_area[:, None]))
        object.__setattr__(self, "areas", _frozen(0.5 * twice_area))
        object.__setattr__(self, "centroids", _frozen((p0 + p1 + p2) / 3.0))

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def diameters(self) -> np.ndarray:
        """Longest edge of every triangle."""
        v = self.vertices[self.triangles]
        edges = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    @property
    def max_diameter(self) -> float:
        return float(self.diameters.max())

    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def is_closed_manifold(self) -> bool:
        """Every directed edge appears once and its reverse exactly once."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        keys = {(int(a), int(b)) for a, b in directed}
        if len(keys) != len(directed):
            return False
        return all((b, a) in keys for a, b in keys)

    def distance_to(self, x) -> float:
        """Distance from ``x`` to the nearest vertex or centroid (cheap bound)."""
        x = np.asarray(x, dtype=float)
        d1 = np.linalg.norm(self.vertices - x, axis=1).min()
        d2 = np.linalg.norm(self.centroids - x, axis=1).min()
        return float(min(d1, d2))


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
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
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(vertices, faces):
    verts = list(vertices)
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = 0.5 * (verts[a] + verts[b])
            verts.append(m / np.linalg.norm(m))
            idx = len(verts) - 1
            cache[key] = idx
        return idx

    out = np.empty((4 * len(faces), 3), dtype=np.int64)
    for k, (a, b, c) in enumerate(faces):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out[4 * k: 4 * k + 4] = [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), out


def _relax_on_sphere(v, f, sweeps):
    n = len(v)
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    degree = np.asarray(adj.sum(axis=1)).ravel()
    for _ in range(sweeps):
        v = 0.5 * v + 0.5 * (adj @ v) / degree[:, None]
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def make_mesh(shape: ShapeSpec) -> SurfaceMesh:
    """Icosphere of the requested refinement, stretched for ellipsoids.

    The mesh has ``20 * 4**refinement`` triangles.  After subdivision the
    vertices get a few Laplacian smoothing passes (re-projected onto the
    sphere each time), which evens out the panel shapes.
    """
    v, f = _icosahedron()
    for _ in range(int(shape.refinement)):
        v, f = _subdivide(v, f)
    if shape.refinement > 0:
        v = _relax_on_sphere(v, f, RELAX_SWEEPS)
    if shape.kind == "ellipsoid":
        v = v * np.asarray(shape.semi_axes, dtype=float)
    return SurfaceMesh(v, f)


def sphere_mesh(radius: float = 1.0, refinement: int = 3, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    return scale_translate(make_mesh(ShapeSpec("unit-ball", refinement)), radius, center)


def scale_translate(mesh: SurfaceMesh, delta: float, z) -> SurfaceMesh:
    """Image of ``mesh`` under ``x -> delta * x + z``."""
    if not delta > 0:
        raise ValueError(f"scale must be positive, got {delta}")
    z = np.asarray(z, dtype=float).reshape(3)
    return SurfaceMesh(delta * mesh.vertices + z, mesh.triangles)


def enclosed_volume(mesh: SurfaceMesh) -> float:
    """Divergence-theorem volume, one centroid point per triangle."""
    return float(np.sum(np.einsum("ij,ij->i", mesh.centroids, mesh.normals) * mesh.areas) / 3.0)


def write_off(mesh: SurfaceMesh, path) -> None:
    """Dump ``mesh`` as an OFF indexed triangle list."""
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path) -> SurfaceMesh:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    v = np.array(tokens[pos: pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    f = np.array(tokens[pos: pos + 4 * nf], dtype=np.int64).reshape(nf, 4)
    if np.any(f[:, 0] != 3):
        raise ValueError("only triangular faces are supported")
    return SurfaceMesh(v, f[:, 1:])
