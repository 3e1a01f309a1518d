"""Laplace layer potentials on flat-triangle meshes (centroid collocation).

Kernel convention: ``gamma0(x) = -1 / (4 pi |x|)``.  The adjoint
Neumann-Poincare operator satisfies the jump relation
``d/dnu S[phi] |_(+/-) = (+/- I/2 + K*) phi``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree

from .mesh import SurfaceMesh

FOUR_PI = 4.0 * np.pi
NEAR_FACTOR = 2.5  # pairs closer than this many element diameters get refined quadrature
RCOND_TOL = 1e-12
SPECTRAL_TOL = 1e-2
MEAN_TOL = 1e-10


class ResolventSingularError(np.linalg.LinAlgError):
    pass


def _norm(x):
    return np.linalg.norm(x, axis=-1)


def _check_nonzero(r):
    if np.any(r == 0):
        raise ValueError("singular point: kernel evaluated at x = 0")


def gamma0(x):
    """Fundamental solution of the Laplacian, ``-1/(4 pi |x|)``."""
    x = np.asarray(x, dtype=float)
    r = _norm(x)
    _check_nonzero(r)
    return -1.0 / (FOUR_PI * r)


def grad_gamma0(x):
    """Gradient of :func:`gamma0`: ``x / (4 pi |x|^3)``. Broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    r = _norm(x)
    _check_nonzero(r)
    return x / (FOUR_PI * r[..., None] ** 3)


def hess_gamma0(x):
    """Hessian of :func:`gamma0`, shape ``(..., 3, 3)``; symmetric and traceless."""
    x = np.asarray(x, dtype=float)
    r = _norm(x)
    _check_nonzero(r)
    r = r[..., None, None]
    outer = x[..., :, None] * x[..., None, :]
    return np.eye(3) / (FOUR_PI * r**3) - 3.0 * outer / (FOUR_PI * r**5)


# -- quadrature on triangles -------------------------------------------------

# degree-2 rule, barycentric coordinates and weights summing to 1
_BASE_POINTS = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_BASE_WEIGHTS = np.full(3, 1 / 3)


def subdivided_rule(level: int):
    """Barycentric points/weights of the base rule on ``4**level`` sub-triangles."""
    tris = [np.eye(3)]
    for _ in range(level):
        nxt = []
        for a, b, c in tris:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([b, bc, ab]),
                    np.array([c, ca, bc]), np.array([ab, bc, ca])]
        tris = nxt
    pts = np.concatenate([_BASE_POINTS @ t for t in tris])
    w = np.tile(_BASE_WEIGHTS, len(tris)) / len(tris)
    return pts, w


_NEAR_RULE = subdivided_rule(2)  # 16 sub-triangles


def _inplane_inverse_distance(p, corners):
    """Exact integral of ``1/|p - y|`` over a flat triangle containing ``p``."""
    total = 0.0
    for k in range(3):
        a, b = corners[k], corners[(k + 1) % 3]
        t = b - a
        length = np.linalg.norm(t)
        t = t / length
        foot = a + np.dot(p - a, t) * t
        h = np.linalg.norm(p - foot)
        sa, sb = np.dot(a - foot, t), np.dot(b - foot, t)
        total += h * (np.arcsinh(sb / h) - np.arcsinh(sa / h))
    return abs(total)


def _near_pairs(mesh: SurfaceMesh):
    tree = cKDTree(mesh.centroids)
    radius = NEAR_FACTOR * mesh.max_diameter
    pairs = tree.query_pairs(radius, output_type="ndarray")
    both = np.concatenate([pairs, pairs[:, ::-1]])
    return both[:, 0], both[:, 1]


def _quad_points(mesh: SurfaceMesh, cols):
    """Quadrature nodes (len(cols), Q, 3) and weights (len(cols), Q) on triangles ``cols``."""
    bary, w = _NEAR_RULE
    corners = mesh.corners()[cols]
    pts = np.einsum("qk,tkd->tqd", bary, corners)
    return pts, w[None, :] * mesh.areas[cols, None]


# -- operators ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Dense collocation matrix over the triangles of ``mesh``."""

    matrix: np.ndarray
    kind: str
    mesh: SurfaceMesh | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator matrix must be square")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator matrix has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def _blocks(n, size=512):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def assemble_single_layer(mesh: SurfaceMesh) -> BoundaryOperator:
    """Collocation matrix of ``S``: entry (i, j) = int_{T_j} gamma0(c_i - y) ds_y."""
    c, a = mesh.centroids, mesh.areas
    n = mesh.n_triangles
    mat = np.empty((n, n))
    for rows in _blocks(n):
        r = _norm(c[rows, None, :] - c[None, :, :])
        idx = np.arange(rows.start, rows.stop)
        r[idx - rows.start, idx] = np.inf
        mat[rows] = -a[None, :] / (FOUR_PI * r)
    i, j = _near_pairs(mesh)
    pts, w = _quad_points(mesh, j)
    r = _norm(c[i, None, :] - pts)
    mat[i, j] = -np.sum(w / r, axis=1) / FOUR_PI
    corners = mesh.corners()
    for k in range(n):
        mat[k, k] = -_inplane_inverse_distance(c[k], corners[k]) / FOUR_PI
    return BoundaryOperator(mat, "single-layer", mesh)


def assemble_adjoint_np(mesh: SurfaceMesh) -> BoundaryOperator:
    """Collocation matrix of ``K*``.

    Off-diagonal entries integrate ``d gamma0(c_i - y) / d nu(c_i)`` over
    ``T_j``.  The flat self-panel contributes nothing; the diagonal is then
    fixed so that ``int K*[phi] = 1/2 int phi`` holds exactly for every
    piecewise-constant ``phi`` (the discrete form of zero interior flux).
    """
    c, nu, a = mesh.centroids, mesh.normals, mesh.areas
    n = mesh.n_triangles
    mat = np.empty((n, n))
    for rows in _blocks(n):
        d = c[rows, None, :] - c[None, :, :]
        r = _norm(d)
        idx = np.arange(rows.start, rows.stop)
        r[idx - rows.start, idx] = np.inf
        mat[rows] = np.einsum("ijk,ik->ij", d, nu[rows]) * a[None, :] / (FOUR_PI * r**3)
    i, j = _near_pairs(mesh)
    pts, w = _quad_points(mesh, j)
    d = c[i, None, :] - pts
    r = _norm(d)
    mat[i, j] = np.sum(w * np.einsum("pqk,pk->pq", d, nu[i]) / r**3, axis=1) / FOUR_PI
    np.fill_diagonal(mat, 0.0)
    col = a @ mat
    np.fill_diagonal(mat, (0.5 * a - col) / a)
    return BoundaryOperator(mat, "adjoint-np", mesh)


def normal_component(mesh: SurfaceMesh, field_values) -> np.ndarray:
    """``nu . F`` at the centroids for a (T, 3) array of field values."""
    return np.einsum("ij,ij->i", mesh.normals, field_values)


def _near_spectrum(op: BoundaryOperator, target: complex, skip_half: bool = False) -> bool:
    if abs(target.imag) > SPECTRAL_TOL or abs(target.real) > 0.5 + SPECTRAL_TOL:
        return False
    ev = op.eigenvalues
    if skip_half:
        ev = np.delete(ev, np.argmin(np.abs(ev - 0.5)))
    return bool(np.min(np.abs(ev - target)) < SPECTRAL_TOL)


def resolvent_factor(op: BoundaryOperator, lam, sign: str, deflate: bool = False):
    """LU factors of ``lam I + K*`` (sign '+') or ``lam I - K*`` (sign '-').

    With ``deflate`` (sign '-' only, needs ``op.mesh``) the rank-one term
    ``1 a^T / |dD|`` is added, ``a`` being the area weights. Since
    ``a^T K* = a^T / 2`` this moves the eigenvalue ``lam - 1/2`` to
    ``lam + 1/2`` and leaves the rest of the spectrum alone.
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    lam = complex(lam)
    s = 1.0 if sign == "+" else -1.0
    dtype = complex if lam.imag != 0 else float
    a = s * op.matrix.astype(dtype)
    a[np.diag_indices_from(a)] += lam if dtype is complex else lam.real
    if deflate:
        areas = op.mesh.areas
        a += np.outer(np.ones(op.size), areas / areas.sum())
    anorm = np.abs(a).sum(axis=0).max()
    lu, piv = sla.lu_factor(a, check_finite=False)
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, anorm, norm="1")
    if rcond < RCOND_TOL:
        raise ResolventSingularError(f"resolvent singular: rcond={rcond:.3e}")
    # lam I - K* is singular when lam is an eigenvalue; lam I + K* when -lam is.
    # The eigen-solve only runs when the inverse is already large.
    inv_norm = 1.0 / (rcond * anorm)
    if inv_norm > 0.1 / SPECTRAL_TOL and _near_spectrum(op, -s * lam, skip_half=deflate):
        raise ResolventSingularError(
            f"resolvent singular: lambda={lam} lies on the discrete NP spectrum"
        )
    return lu, piv


def _mean_free(op: BoundaryOperator, rhs) -> bool:
    """True when every column of ``rhs`` has zero area-weighted mean."""
    if op.kind != "adjoint-np" or op.mesh is None or op.mesh.n_triangles != op.size:
        return False
    a = op.mesh.areas
    r = np.asarray(rhs).reshape(op.size, -1)
    scale = np.linalg.norm(a) * np.linalg.norm(r, axis=0)
    return bool(np.all(np.abs(a @ r) <= MEAN_TOL * np.maximum(scale, np.finfo(float).tiny)))


def solve_resolvent(op: BoundaryOperator, lam, sign: str, rhs) -> np.ndarray:
    """Solve ``(lam I +/- K*) phi = rhs``; ``rhs`` may hold several columns.

    For sign '-' and mean-free ``rhs`` the solution is also mean-free, and
    the solve is deflated so that ``lam`` close to the eigenvalue 1/2 (large
    contrast) stays well conditioned.
    """
    rhs = np.asarray(rhs)
    deflate = sign == "-" and abs(complex(lam) - 0.5) < 0.25 and _mean_free(op, rhs)
    lu, piv = resolvent_factor(op, lam, sign, deflate)
    if np.iscomplexobj(rhs) and not np.iscomplexobj(lu):
        return sla.lu_solve((lu, piv), rhs.real) + 1j * sla.lu_solve((lu, piv), rhs.imag)
    return sla.lu_solve((lu, piv), rhs.astype(lu.dtype))


def _check_far(mesh: SurfaceMesh, x, factor=2.0):
    tree = cKDTree(mesh.centroids)
    dist, _ = tree.query(np.atleast_2d(x))
    if np.any(dist < factor * mesh.max_diameter):
        raise ValueError("point too close to surface for one-point quadrature")


def eval_single_layer(mesh: SurfaceMesh, phi, x, check=True) -> np.ndarray:
    """``S[phi](x)`` at off-surface points ``x`` (shape (3,) or (P, 3))."""
    x = np.asarray(x, dtype=float)
    if check:
        _check_far(mesh, x)
    pts = np.atleast_2d(x)
    out = np.stack([
        (gamma0(p - mesh.centroids) * mesh.areas) @ phi for p in pts
    ])
    return out[0] if x.ndim == 1 else out


def eval_grad_single_layer(mesh: SurfaceMesh, phi, x, check=True) -> np.ndarray:
    """``grad S[phi](x)`` at off-surface points; ``phi`` per triangle (may be complex)."""
    x = np.asarray(x, dtype=float)
    if check:
        _check_far(mesh, x)
    pts = np.atleast_2d(x)
    weights = np.asarray(phi) * mesh.areas
    out = np.empty((len(pts), 3), dtype=np.result_type(weights, float))
    for rows in _blocks(len(pts), 256):
        g = grad_gamma0(pts[rows, None, :] - mesh.centroids[None, :, :])
        out[rows] = np.einsum("pjk,j->pk", g, weights)
    return out[0] if x.ndim == 1 else out


_MAGIC = b"NPOP"


def write_operator(op: BoundaryOperator, path) -> None:
    """Flat binary dump: magic, little-endian u32 dimension, row-major float64."""
    m = np.ascontiguousarray(op.matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", m.shape[0]))
        fh.write(m.tobytes(order="C"))


def read_operator(path, kind: str = "adjoint-np", mesh: SurfaceMesh | None = None) -> BoundaryOperator:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("bad magic bytes, not an NPOP operator file")
    (n,) = struct.unpack("<I", raw[4:8])
    m = np.frombuffer(raw[8:], dtype="<f8")
    if m.size != n * n:
        raise ValueError(f"expected {n * n} entries, found {m.size}")
    return BoundaryOperator(m.reshape(n, n).astype(float), kind, mesh)
