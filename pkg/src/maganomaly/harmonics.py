"""Complex spherical harmonics and transforms on Gauss-Legendre sphere grids.

Convention: orthonormal on the unit sphere, Condon-Shortley phase included,
so ``Y_1^1 = -sqrt(3/8pi) (x + iy)`` and ``conj(Y_n^m) = (-1)^m Y_n^-m``.

Arrays holding every ``(n, m)`` up to some ``n_max`` use the flat index
``n*n + n + m`` (see :func:`lm_index`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

UNIT_TOL = 1e-10
POLE_TOL = 1e-8
FOUR_PI = 4.0 * np.pi


def lm_index(n: int, m: int) -> int:
    return n * n + n + m


def n_coeffs(n_max: int) -> int:
    return (n_max + 1) ** 2


def degree_slice(n: int) -> slice:
    """Positions of the ``2n+1`` orders of degree ``n`` in a flat array."""
    return slice(n * n, (n + 1) * (n + 1))


def _check_nm(n, m):
    if n < 0 or abs(m) > n:
        raise ValueError(f"invalid (n, m) = ({n}, {m})")


def _unit(xhat):
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape[-1] != 3:
        raise ValueError("directions must be 3-vectors")
    if np.any(np.abs(np.linalg.norm(xhat, axis=-1) - 1.0) > UNIT_TOL):
        raise ValueError("non-unit vector passed as a direction")
    return xhat


def _solid_harmonics(n_max: int, pts):
    """``r^n Y_n^m`` at arbitrary points, all ``(n, m)`` with ``n <= n_max``.

    Uses ``r^n Y_n^m = Qt_n^m(z, r) (x + iy)^m`` for ``m >= 0``, where ``Qt``
    follows the normalized Legendre recurrence with the ``sin^m`` factor
    stripped out. Nothing here divides by ``sin(theta)``, so the poles are
    ordinary points.
    """
    pts = np.asarray(pts, dtype=float)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    r2 = x * x + y * y + z * z
    rho = x + 1j * y
    out = np.zeros(pts.shape[:-1] + (n_coeffs(n_max),), dtype=complex)
    diag = np.full(pts.shape[:-1], 1.0 / np.sqrt(FOUR_PI))
    rho_m = np.ones(pts.shape[:-1], dtype=complex)
    for m in range(n_max + 1):
        if m > 0:
            diag = -np.sqrt((2 * m + 1) / (2.0 * m)) * diag
            rho_m = rho_m * rho
        prev2 = np.zeros_like(diag)
        prev = diag
        out[..., lm_index(m, m)] = prev * rho_m
        for n in range(m + 1, n_max + 1):
            a = np.sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            if n == m + 1:
                cur = a * z * prev
            else:
                a_prev = np.sqrt((4.0 * (n - 1) ** 2 - 1.0) / ((n - 1) ** 2 - m * m))
                cur = a * (z * prev - r2 * prev2 / a_prev)
            out[..., lm_index(n, m)] = cur * rho_m
            prev2, prev = prev, cur
        if m > 0:
            sign = -1.0 if m % 2 else 1.0
            for n in range(m, n_max + 1):
                out[..., lm_index(n, -m)] = sign * np.conj(out[..., lm_index(n, m)])
    return out


def sph_harm_all(n_max: int, xhat) -> np.ndarray:
    """All ``Y_n^m(xhat)`` for ``n <= n_max``, shape ``(..., (n_max+1)**2)``."""
    return _solid_harmonics(n_max, _unit(xhat))


def sph_harm(n: int, m: int, xhat):
    """``Y_n^m(xhat)``; broadcasts over leading axes of ``xhat``."""
    _check_nm(n, m)
    return sph_harm_all(n, xhat)[..., lm_index(n, m)]


def _cartesian_gradient_solid(n_max: int, pts, R=None):
    """Gradient of ``r^n Y_n^m`` for all ``n <= n_max``, shape ``(..., K, 3)``.

    Ladder relations with ``c_n = sqrt((2n+1)/(2n-1))``::

        d_z       R_n^m =  c_n sqrt((n+m)(n-m))     R_{n-1}^m
        (dx+i dy) R_n^m =  c_n sqrt((n-m)(n-m-1))   R_{n-1}^{m+1}
        (dx-i dy) R_n^m = -c_n sqrt((n+m)(n+m-1))   R_{n-1}^{m-1}
    """
    if R is None:
        R = _solid_harmonics(max(n_max - 1, 0), pts)
    grad = np.zeros(np.shape(pts)[:-1] + (n_coeffs(n_max), 3), dtype=complex)
    for n in range(1, n_max + 1):
        c = np.sqrt((2.0 * n + 1.0) / (2.0 * n - 1.0))
        for m in range(-n, n + 1):
            k = lm_index(n, m)
            if abs(m) <= n - 1:
                dz = c * np.sqrt((n + m) * (n - m)) * R[..., lm_index(n - 1, m)]
            else:
                dz = 0.0
            plus = minus = 0.0
            if abs(m + 1) <= n - 1:
                plus = c * np.sqrt((n - m) * (n - m - 1.0)) * R[..., lm_index(n - 1, m + 1)]
            if abs(m - 1) <= n - 1:
                minus = -c * np.sqrt((n + m) * (n + m - 1.0)) * R[..., lm_index(n - 1, m - 1)]
            grad[..., k, 0] = 0.5 * (plus + minus)
            grad[..., k, 1] = (plus - minus) / 2j
            grad[..., k, 2] = dz
    return grad


def surf_grad_all(n_max: int, xhat) -> np.ndarray:
    """Surface gradients ``grad_S Y_n^m(xhat)``, shape ``(..., K, 3)``.

    Computed as the tangential part of the gradient of the solid harmonic,
    which is well defined at the poles as a Cartesian vector.
    """
    xhat = _unit(xhat)
    Y = _solid_harmonics(n_max, xhat)
    g = _cartesian_gradient_solid(n_max, xhat, Y[..., : n_coeffs(max(n_max - 1, 0))])
    degrees = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    # grad(r^n Y) on r = 1 is n Y xhat + grad_S Y
    return g - (degrees * Y)[..., None] * xhat[..., None, :]


def surf_grad_sph_harm(n: int, m: int, xhat) -> np.ndarray:
    _check_nm(n, m)
    return surf_grad_all(n, xhat)[..., lm_index(n, m), :]


def vector_N_all(n_max: int, xhat) -> np.ndarray:
    """``N^m_{n+1} = (n+1) Y_n^m xhat - grad_S Y_n^m`` for all ``n <= n_max``."""
    xhat = _unit(xhat)
    Y = sph_harm_all(n_max, xhat)
    degrees = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    return ((degrees + 1) * Y)[..., None] * xhat[..., None, :] - surf_grad_all(n_max, xhat)


def vector_N(n: int, m: int, xhat) -> np.ndarray:
    _check_nm(n, m)
    return vector_N_all(n, xhat)[..., lm_index(n, m), :]


def _split(v):
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    vhat = np.where((r > 0)[..., None], v / safe[..., None], np.array([0.0, 0.0, 1.0]))
    return r, vhat


def _radial_powers(n_max, r):
    """``r**n`` for n = 0..n_max, taking ``0**0 = 1``."""
    return np.power.outer(np.asarray(r, dtype=float), np.arange(n_max + 1))


def addition_partial(x, y, n_max: int):
    """Truncated addition series for ``1 / (4 pi |x - y|)``.

    ``sum_{n <= n_max} sum_m Y_n^m(xhat) conj(Y_n^m(yhat)) |y|^n / ((2n+1) |x|^(n+1))``,
    exact as ``n_max -> inf`` for ``|x| > |y|``. ``y = 0`` is allowed.
    """
    rx, xhat = _split(x)
    ry, yhat = _split(y)
    if np.any(rx <= ry):
        raise ValueError("addition series needs |x| > |y|")
    Yx = sph_harm_all(n_max, xhat)
    Yy = sph_harm_all(n_max, yhat)
    rho = _radial_powers(n_max, ry / rx) / (2 * np.arange(n_max + 1) + 1)
    per_degree = np.stack(
        [np.sum(Yx[..., degree_slice(n)] * np.conj(Yy[..., degree_slice(n)]), axis=-1)
         for n in range(n_max + 1)], axis=-1)
    return np.real(np.sum(per_degree * rho, axis=-1)) / rx


def grad_gamma_expansion(x, z, n_max: int):
    """Truncated harmonic expansion of ``grad_gamma0(x - z)`` for ``|z| < |x|``.

    ``sum N^m_{n+1}(xhat) conj(Y_n^m(zhat)) |z|^n / ((2n+1) |x|^(n+2))``. The
    plus sign goes with the kernel ``gamma0 = -1/(4 pi r)``.
    """
    R, xhat = _split(x)
    rz, zhat = _split(z)
    if np.any(rz >= R):
        raise ValueError("expansion needs |z| < |x|")
    N = vector_N_all(n_max, xhat)
    Yz = np.conj(sph_harm_all(n_max, zhat))
    radial = _radial_powers(n_max, rz / R) / (2 * np.arange(n_max + 1) + 1)
    degrees = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    w = Yz * radial[..., degrees]
    out = np.einsum("...k,...kd->...d", w, N)
    return np.real(out) / np.asarray(R)[..., None] ** 2


# -- grids and transforms ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Tensor grid: Gauss-Legendre in ``cos(theta)`` times uniform ``phi``.

    Nodes are stored theta-major. The grid integrates products
    ``Y_n^m conj(Y_n'^m')`` exactly for degrees below :attr:`order`.
    """

    n_theta: int
    n_phi: int
    points: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("grid sizes must be positive")
        t, wt = np.polynomial.legendre.leggauss(self.n_theta)
        theta = np.arccos(t)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        st = np.sin(th)
        pts = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3)
        w = np.repeat(wt, self.n_phi) * (2.0 * np.pi / self.n_phi)
        for name, val in (("points", pts), ("weights", w),
                          ("theta", th.ravel()), ("phi", ph.ravel())):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def order(self) -> int:
        return min(self.n_theta, (self.n_phi + 1) // 2)

    def scaled(self, radius: float) -> np.ndarray:
        return radius * self.points


def sht_forward(grid: SphereGrid, samples, n_max: int) -> np.ndarray:
    """Quadrature projection ``a_nm = sum_q w_q f(x_q) conj(Y_n^m(x_q))``.

    ``samples`` has the grid nodes on its first axis; any trailing axes are
    transformed independently. Returns shape ``(K, ...)``.
    """
    if grid.order < n_max + 1:
        raise ValueError(f"grid order {grid.order} is insufficient for n_max={n_max}")
    f = np.asarray(samples)
    if f.shape[0] != grid.size:
        raise ValueError("sample count does not match the grid")
    Y = sph_harm_all(n_max, grid.points)
    return np.tensordot(np.conj(Y) * grid.weights[:, None], f, axes=(0, 0))


def _frame(xhat):
    """Unit vectors ``e_phi``, ``e_theta`` and the angles; fails near the poles."""
    xhat = _unit(xhat)
    s = np.hypot(xhat[..., 0], xhat[..., 1])
    if np.any(s < POLE_TOL):
        raise ValueError("spherical frame is undefined at the poles")
    theta = np.arctan2(s, xhat[..., 2])
    phi = np.arctan2(xhat[..., 1], xhat[..., 0])
    e_phi = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=-1)
    e_theta = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi),
                        -np.sin(theta)], axis=-1)
    return e_phi, e_theta


def q_matrix(xhat) -> np.ndarray:
    """Rows ``m = -1, 0, 1`` of ``N^m_2`` in the local frame ``(xhat, e_phi, e_theta)``.

    Columns are ``2 Y_1``, ``-(1/sin theta) d_phi Y_1`` and ``-d_theta Y_1``.
    """
    xhat = _unit(xhat)
    e_phi, e_theta = _frame(xhat)
    Y1 = sph_harm_all(1, xhat)[..., 1:4]
    G1 = surf_grad_all(1, xhat)[..., 1:4, :]
    cols = [2.0 * Y1,
            -np.einsum("...kd,...d->...k", G1, e_phi),
            -np.einsum("...kd,...d->...k", G1, e_theta)]
    return np.stack(cols, axis=-1)


# -- multipole coefficients ----------------------------------------------------


@lru_cache(maxsize=64)
def _degree_map_cached(n: int) -> np.ndarray:
    grid = SphereGrid(n + 3, 2 * n + 5)
    N = vector_N_all(n, grid.points)[:, degree_slice(n), :]
    Y = sph_harm_all(n + 1, grid.points)[:, degree_slice(n + 1)]
    A = np.einsum("q,qk,qmc->kmc", grid.weights, np.conj(Y), N)
    A = A.reshape(2 * n + 3, 3 * (2 * n + 1))
    A.setflags(write=False)
    return A


def degree_map(n: int) -> np.ndarray:
    """Matrix taking the flattened ``d^{n, .}`` (order-major, then xyz) to the
    degree ``n+1`` harmonic coefficients of ``sum_m N^m_{n+1} . d^{n,m}``.

    Each Cartesian component of ``N^m_{n+1}`` is a pure degree ``n+1``
    harmonic, so this map loses nothing. It has ``2n+3`` rows and
    ``3(2n+1)`` columns: for ``n >= 1`` part of ``d`` is invisible.
    """
    if n < 0:
        raise ValueError("degree must be non-negative")
    return _degree_map_cached(int(n))


@dataclass(frozen=True, eq=False)
class MultipoleSet:
    """Vector coefficients ``d^{n,m}`` (shape ``(K, 3)``) on the sphere of radius ``radius``."""

    coeffs: np.ndarray
    radius: float
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)  # own copy, frozen below
        k = c.shape[0]
        n_max = int(round(np.sqrt(k))) - 1
        if c.ndim != 2 or c.shape[1] != 3 or n_coeffs(n_max) != k:
            raise ValueError("coefficients must have shape ((n_max+1)**2, 3)")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_max(self) -> int:
        return int(round(np.sqrt(self.coeffs.shape[0]))) - 1

    def degree(self, n: int) -> np.ndarray:
        """``d^{n, m}`` for ``m = -n..n`` as a ``(2n+1, 3)`` array."""
        return self.coeffs[degree_slice(n)]

    def __getitem__(self, nm):
        n, m = nm
        _check_nm(n, m)
        return self.coeffs[lm_index(n, m)]

    def potential_coeffs(self) -> np.ndarray:
        """Harmonic coefficients of the represented potential on the sphere.

        Entry ``lm_index(L, k)`` for ``1 <= L <= n_max + 1``; degree 0 is zero.
        """
        out = np.zeros(n_coeffs(self.n_max + 1), dtype=complex)
        for n in range(self.n_max + 1):
            b = degree_map(n) @ self.degree(n).reshape(-1)
            out[degree_slice(n + 1)] = b / ((2 * n + 1) * self.radius ** (n + 2))
        return out
