"""Recovery of anomaly positions, moments and (ball) permeability from field samples.

Moments are reported in the unit set by ``moment_scale``: the modelled
perturbation is ``moment_scale * sum_l hess_gamma0(x - z_l) @ c_l``. With the
scale set to ``delta**3`` the moments are ``c_l = P_l H0(z_l)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular as sla_solve_triangular
from scipy.optimize import least_squares
from scipy.stats import qmc

from . import harmonics as hm
from .background import BackgroundField
from .forward import FieldSamples, dipole_field
from .layer import FOUR_PI, hess_gamma0
from .polarization import Anomaly, MediumParams, ball_moment_mobius

SQRT_3_4PI = np.sqrt(3.0 / (4.0 * np.pi))
SQRT_3_8PI = np.sqrt(3.0 / (8.0 * np.pi))
ISOTROPY_TOL = 0.05
MERGE_FACTOR = 5.0


class InversionWarning(UserWarning):
    pass


class NoConvergentStartError(RuntimeError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    n_max: int = 8
    count: int = 1
    multistart: int = 32
    gtol: float = 1e-12
    xtol: float = 1e-12
    max_iter: int = 200
    seed: int = 0
    delta: float | None = None  # known inclusion scale, used for units and merge warnings
    start_radius: float = 0.8  # fraction of the measurement radius
    overcount_ratio: float = 1e-3

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("anomaly count must be at least 1")
        if self.multistart < 1:
            raise ValueError("multistart must be at least 1")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def moment_scale(self) -> float:
        return 1.0 if self.delta is None else self.delta**3


@dataclass(frozen=True, eq=False)
class RecoveredAnomaly:
    z: np.ndarray
    c: np.ndarray
    mu: complex | None = None
    residual: float = 0.0
    moment_scale: float = 1.0
    flags: tuple = ()

    def to_dict(self) -> dict:
        out = {"z": [float(v) for v in self.z],
               "c": [[float(v.real), float(v.imag)] for v in np.asarray(self.c, dtype=complex)],
               "residual": float(self.residual),
               "moment_scale": float(self.moment_scale),
               "flags": list(self.flags)}
        if self.mu is not None:
            out["mu"] = [float(np.real(self.mu)), float(np.imag(self.mu))]
        return out


def _warn(msg):
    warnings.warn(msg, InversionWarning, stacklevel=3)


# -- multipole extraction ----------------------------------------------------


def extract_multipoles(samples: FieldSamples, n_max: int, scale: float = 1.0) -> hm.MultipoleSet:
    """Multipole coefficients from the radial component of the samples.

    The degree ``L`` harmonic coefficients of ``xhat . dH`` on the sphere are
    ``-(L+1)/R`` times those of the potential, and degree ``n`` of ``d`` only
    feeds degree ``n+1`` of the potential. Each degree is then one small
    linear system. For ``n >= 1`` that system is underdetermined (a ``4n``
    dimensional family of ``d`` gives the same field) and the minimum-norm
    member is returned; ``info`` records ranks and null-space sizes.
    """
    grid, R = samples.grid, samples.radius
    if grid.order < n_max + 2:
        raise ValueError(f"grid order {grid.order} too low for n_max={n_max} (needs n_max + 2)")
    f = np.einsum("qc,qc->q", grid.points, samples.values) / scale
    a = hm.sht_forward(grid, f, n_max + 1)
    coeffs = np.zeros((hm.n_coeffs(n_max), 3), dtype=complex)
    ranks, nulls, conds = [], [], []
    for n in range(n_max + 1):
        L = n + 1
        u = -R / (L + 1) * a[hm.degree_slice(L)]
        b = (2 * n + 1) * R ** (n + 2) * u
        A = hm.degree_map(n)
        sol, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
        if rank < A.shape[0]:
            raise np.linalg.LinAlgError(
                f"rank-deficient multipole fit at degree {n} (cond {sv[0] / sv[-1]:.3e})")
        coeffs[hm.degree_slice(n)] = sol.reshape(2 * n + 1, 3)
        ranks.append(int(rank))
        nulls.append(int(A.shape[1] - rank))
        conds.append(float(sv[0] / sv[-1]))
    info = {"rank": ranks, "null_dim": nulls, "cond": conds, "scale": float(scale)}
    return hm.MultipoleSet(coeffs, R, info)


def minimum_norm_representative(d: hm.MultipoleSet) -> hm.MultipoleSet:
    """Project every degree of ``d`` onto the row space of its degree map."""
    out = np.array(d.coeffs)
    for n in range(d.n_max + 1):
        A = hm.degree_map(n)
        flat = d.degree(n).reshape(-1)
        out[hm.degree_slice(n)] = (np.linalg.pinv(A) @ (A @ flat)).reshape(2 * n + 1, 3)
    return hm.MultipoleSet(out, d.radius, dict(d.info))


# -- single anomaly -------------------------------------------------------------


def position_from_w(w):
    """Invert ``w_m = |z| conj(Y_1^m(zhat))`` for ``m = -1, 0, 1``.

    Returns the real position and the largest imaginary part that was dropped.
    """
    w = np.asarray(w, dtype=complex)
    z3 = w[1] / SQRT_3_4PI
    plus = w[0] / SQRT_3_8PI     # z1 + i z2
    minus = -w[2] / SQRT_3_8PI   # z1 - i z2
    z1 = 0.5 * (plus + minus)
    z2 = (plus - minus) / 2j
    z = np.array([z1, z2, z3])
    return z.real, float(np.abs(z.imag).max())


def recover_single(d: hm.MultipoleSet, consistency_tol: float = 0.05,
                   zero_tol: float = 1e-14) -> RecoveredAnomaly:
    """Position and moment of one dipole from degrees 0 and 1.

    ``c = 2 sqrt(pi) d^{0,0}``. The degree 1 block must equal ``w_m c`` with
    ``w = |z| conj(Y_1(zhat))``; ``w`` is fitted through the degree map, so
    any representative of the degree 1 class gives the same answer.
    """
    if d.n_max < 1:
        raise ValueError("need multipoles up to degree 1")
    d00 = d[0, 0]
    size = max(float(np.abs(d.coeffs).max()), np.finfo(float).tiny)
    if np.linalg.norm(d00) <= zero_tol * size or not np.any(d00):
        raise ValueError("moment vanishes: background may vanish at the center or P is singular")
    c = 2.0 * np.sqrt(np.pi) * d00
    A1 = hm.degree_map(1)
    b = A1 @ d.degree(1).reshape(-1)
    B = A1 @ np.kron(np.eye(3), c[:, None])
    w, *_ = np.linalg.lstsq(B, b, rcond=None)
    if np.linalg.norm(w) < zero_tol * d.radius * np.linalg.norm(c):
        z, imag = np.zeros(3), 0.0
    else:
        z, imag = position_from_w(w)
    flags = []
    if imag > 1e-6 * d.radius:
        flags.append("imaginary-position-residue")
    # compare every stored degree with the single dipole just found
    resid = single_dipole_misfit(d, z, c)
    if resid > consistency_tol:
        _warn(f"data inconsistent with single-dipole model (relative misfit {resid:.3e})")
        flags.append("inconsistent-single-dipole")
    scale = float(d.info.get("scale", 1.0))
    return RecoveredAnomaly(z, c, None, resid, scale, tuple(flags))


def single_dipole_multipoles(z, c, n_max: int, radius: float) -> hm.MultipoleSet:
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z)
    zhat = z / r if r > 0 else np.array([0.0, 0.0, 1.0])
    degrees = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    w = np.conj(hm.sph_harm_all(n_max, zhat)) * r**degrees
    return hm.MultipoleSet(w[:, None] * np.asarray(c, dtype=complex)[None, :], radius)


def single_dipole_misfit(d: hm.MultipoleSet, z, c) -> float:
    """Relative misfit of the potential coefficients of ``d`` and of one dipole at ``z``."""
    model = single_dipole_multipoles(z, c, d.n_max, d.radius).potential_coeffs()
    data = d.potential_coeffs()
    den = np.linalg.norm(data)
    return float(np.linalg.norm(model - data) / den) if den > 0 else 0.0


def recover_permeability_ball(c, z, anomaly_knowns: Anomaly, med: MediumParams,
                              bg: BackgroundField, moment_scale: float = 1.0) -> complex:
    """Permeability of a ball of known ``delta, eps, sigma`` from its moment.

    ``c / moment_scale`` must equal ``P H0(z)``; for a ball ``P = p(mu) I``
    with ``p`` a Moebius function of ``mu``, inverted here.
    """
    if not anomaly_knowns.shape.is_ball:
        raise ValueError("permeability recovery needs a ball-shaped anomaly")
    h = np.asarray(bg(np.asarray(z, dtype=float)), dtype=complex)
    hn2 = float(np.vdot(h, h).real)
    if hn2 == 0 or np.sqrt(hn2) < 1e-10 * bg.reference_magnitude:
        raise ValueError("background vanishes at anomaly center")
    c = np.asarray(c, dtype=complex) / moment_scale
    p = np.dot(c, np.conj(h)) / hn2
    cn = np.linalg.norm(c)
    if np.linalg.norm(c - p * h) > ISOTROPY_TOL * cn:  # c = 0 passes with p = 0
        raise ValueError("shape assumption violated: moment is not parallel to H0")
    A, B, C, D = ball_moment_mobius(anomaly_knowns, med)
    den = p * C - A
    if abs(den) <= 1e-12 * (abs(A) + abs(p * C)):
        raise ValueError("permeability unidentifiable at this moment value")
    return complex((B - p * D) / den)


def ball_moment_from_mu(mu, anomaly_knowns: Anomaly, med: MediumParams) -> complex:
    A, B, C, D = ball_moment_mobius(anomaly_knowns, med)
    return (A * mu + B) / (C * mu + D)


# -- several anomalies ----------------------------------------------------------


def third_gamma0(x):
    """Third derivatives ``T[..., i, j, k] = d_k d_j d_i gamma0(x)``."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)[..., None, None, None]
    e = np.eye(3)
    xi = x[..., :, None, None]
    xj = x[..., None, :, None]
    xk = x[..., None, None, :]
    t = -3.0 * (e[:, :, None] * xk + e[:, None, :] * xj + e[None, :, :] * xi) / r**5
    return (t + 15.0 * xi * xj * xk / r**7) / FOUR_PI


class _Projection:
    """Variable-projection residual and its exact (Golub-Pereyra) Jacobian."""

    def __init__(self, points, data, weights, count):
        self.points = points
        self.count = count
        self.sw = np.sqrt(weights)[:, None]
        y = (data * self.sw).reshape(-1)
        # unit-norm data keep the optimizer tolerances relative
        self.norm = max(float(np.linalg.norm(y)), np.finfo(float).tiny)
        self.y = y / self.norm
        self.complex = bool(np.iscomplexobj(data) and np.any(np.imag(data)))
        self._key = None

    def _design(self, Z):
        cols = [hess_gamma0(self.points - z) * self.sw[:, :, None] for z in Z]
        return np.concatenate([g.reshape(-1, 3) for g in cols], axis=1)

    def solve(self, flat):
        key = flat.tobytes()
        if key != self._key:
            Z = flat.reshape(self.count, 3)
            Q, Rm = np.linalg.qr(self._design(Z))
            coef = sla_solve_triangular(Rm, Q.T @ self.y)
            r = self.y - Q @ (Q.T @ self.y)
            self._key, self._state = key, (Z, Q, Rm, coef, r)
        return self._state

    def _stack(self, v):
        return np.concatenate([v.real, v.imag], axis=0) if self.complex else np.real(v)

    def residual(self, flat):
        return self._stack(self.solve(flat)[4])

    def jacobian(self, flat):
        Z, Q, Rm, coef, r = self.solve(flat)
        m = coef.reshape(self.count, 3)
        cols = []
        for l in range(self.count):
            T = third_gamma0(self.points - Z[l]) * self.sw[:, :, None, None]
            for k in range(3):
                # derivative of the design block of anomaly l along z_lk
                dB = -T[..., k].reshape(-1, 3)
                dGc = dB @ m[l]
                proj_term = dGc - Q @ (Q.T @ dGc)
                g = np.zeros(3 * self.count, dtype=r.dtype)
                g[3 * l: 3 * l + 3] = dB.T @ r
                adj_term = Q @ sla_solve_triangular(Rm, g, trans="T")
                cols.append(-(proj_term + adj_term))
        return self._stack(np.stack(cols, axis=1))


def _starts(cfg: InversionConfig, radius):
    sampler = qmc.Halton(d=3 * cfg.count, scramble=True, seed=cfg.seed)
    u = sampler.random(cfg.multistart).reshape(cfg.multistart, cfg.count, 3)
    r = cfg.start_radius * radius * u[..., 0] ** (1.0 / 3.0)
    cos_t = 2.0 * u[..., 1] - 1.0
    sin_t = np.sqrt(1.0 - cos_t**2)
    ph = 2.0 * np.pi * u[..., 2]
    return np.stack([r * sin_t * np.cos(ph), r * sin_t * np.sin(ph), r * cos_t], axis=-1)


def _lex_order(Z):
    return sorted(range(len(Z)), key=lambda i: tuple(Z[i]))


def recover_multi(samples: FieldSamples, cfg: InversionConfig,
                  bg: BackgroundField | None = None) -> list:
    """Least-squares fit of ``cfg.count`` point dipoles to the samples.

    Moments are eliminated by linear least squares at every step; positions
    are refined by a trust-region Gauss-Newton solver from ``cfg.multistart``
    quasi-random starts inside ``cfg.start_radius * R``. The best converged
    start wins; output is sorted lexicographically by position.
    """
    R = samples.radius
    proj = _Projection(samples.points, samples.values, samples.weights, cfg.count)
    bound = np.full(3 * cfg.count, R)
    best = None
    for start in _starts(cfg, R):
        try:
            res = least_squares(proj.residual, start.reshape(-1), jac=proj.jacobian,
                                bounds=(-bound, bound), method="trf", x_scale="jac",
                                gtol=cfg.gtol, xtol=cfg.xtol, ftol=cfg.xtol,
                                max_nfev=cfg.max_iter)
        except (np.linalg.LinAlgError, ValueError):
            continue
        Z = res.x.reshape(cfg.count, 3)
        if res.status < 1 or np.any(np.linalg.norm(Z, axis=1) >= R):
            continue
        cost = float(res.cost)
        key = (cost, tuple(map(tuple, Z[_lex_order(Z)])))
        if best is None or key < best[0]:
            best = (key, res.x.copy())
    if best is None:
        raise NoConvergentStartError("no convergent start among the multistart runs")
    Z, Q, _, coef, r = proj.solve(best[1])
    order = _lex_order(Z)
    Z = Z[order]
    coef = coef.reshape(cfg.count, 3)[order]
    scale = cfg.moment_scale
    m = coef * proj.norm / scale
    total = float(np.linalg.norm(r))  # data were normalized to unit length

    flags = [[] for _ in range(cfg.count)]
    if cfg.delta is not None:
        for i in range(cfg.count):
            for j in range(i):
                if np.linalg.norm(Z[i] - Z[j]) < MERGE_FACTOR * cfg.delta:
                    _warn(f"merged anomalies: recovered centers {j} and {i} are within 5 delta")
                    flags[i].append("merged")
                    flags[j].append("merged")
    if cfg.count > 1:
        # size of each dipole's own field in the normalized data units
        G = proj._design(Z)
        contrib = np.array([np.linalg.norm(G[:, 3 * i: 3 * i + 3] @ coef[i])
                            for i in range(cfg.count)])
        floor = max(cfg.overcount_ratio * contrib.max(), total)
        for i in range(cfg.count):
            if contrib[i] <= floor:
                # one source and two coincident ones give identical data
                _warn(f"possible overcount: recovered moment {i} is below the noise floor "
                      "(fewer sources than requested, or merged anomalies)")
                flags[i].append("possible-overcount")
    return [RecoveredAnomaly(Z[i].copy(), m[i].astype(complex), None, total, scale,
                             tuple(flags[i])) for i in range(cfg.count)]


def model_field(points, recovered) -> np.ndarray:
    if not recovered:
        return np.zeros(np.shape(points), dtype=complex)
    Z = np.array([r.z for r in recovered])
    M = np.array([r.moment_scale * np.asarray(r.c, dtype=complex) for r in recovered])
    return dipole_field(points, Z, M)


def residual_certificate(samples: FieldSamples, recovered) -> float:
    """Quadrature-weighted relative L2 misfit of the rebuilt dipole model."""
    diff = samples.values - model_field(samples.points, recovered)
    w = samples.weights[:, None]
    num = np.sqrt(np.sum(w * np.abs(diff) ** 2))
    den = np.sqrt(np.sum(w * np.abs(samples.values) ** 2))
    return float(num / den) if den > 0 else float(num)
