"""Polarization tensors of a small inclusion from Neumann-Poincare resolvents.

All tensors live on the reference shape (the inclusion is ``delta * shape + z``);
the ``delta**3`` factor is applied by the forward model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import layer
from .mesh import ShapeSpec, SurfaceMesh, make_mesh

BALL_VOLUME = 4.0 * np.pi / 3.0
DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class MediumParams:
    """Free-space and shell constants in one dimensionless unit system."""

    mu0: float = 1.0
    eps0: float = 1.0
    eps_s: float = 1.0
    omega: float = 0.0

    def __post_init__(self):
        if not (self.mu0 > 0 and self.eps0 > 0 and self.eps_s > 0):
            raise ValueError("mu0, eps0 and eps_s must be positive")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")

    @property
    def shell_degenerate(self) -> bool:
        """True when the shell permittivity equals the free-space one."""
        return abs(self.eps_s - self.eps0) < DEGENERATE_RTOL * self.eps0

    @property
    def lambda_eps(self) -> float:
        if self.shell_degenerate:
            return np.inf
        return (self.eps_s + self.eps0) / (2.0 * (self.eps_s - self.eps0))


@dataclass(frozen=True)
class Anomaly:
    """One inclusion ``D = delta * shape + z`` with its material constants."""

    z: tuple
    delta: float
    shape: ShapeSpec = field(default_factory=ShapeSpec)
    mu: float = 2.0
    eps: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(float(c) for c in np.asarray(self.z).reshape(3)))
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.eps > 0 or self.sigma < 0:
            raise ValueError("need eps > 0 and sigma >= 0")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.z)

    def gamma(self, omega: float) -> complex:
        """Complex permittivity ``eps + i sigma / omega``."""
        if self.sigma == 0:
            return complex(self.eps)
        if omega <= 0:
            raise ValueError("gamma undefined at omega=0 when sigma > 0")
        return complex(self.eps, self.sigma / omega)

    def lambda_mu(self, mu0: float) -> float:
        if self.mu == mu0:
            raise ValueError("mu must differ from mu0")
        return (self.mu + mu0) / (2.0 * (self.mu - mu0))

    def lambda_gamma(self, med: MediumParams) -> complex:
        g = self.gamma(med.omega)
        if g == med.eps_s:
            raise ValueError("gamma must differ from eps_s")
        return (g + med.eps_s) / (2.0 * (g - med.eps_s))

    def wave_number(self, omega: float) -> complex:
        """``omega * sqrt(mu * gamma)`` on the branch with non-negative imaginary part."""
        k = omega * np.sqrt(self.mu * self.gamma(omega) + 0j)
        return -k if k.imag < 0 else k


@dataclass(frozen=True, eq=False)
class PolarizationTensors:
    P0: np.ndarray
    D: np.ndarray
    M: np.ndarray
    P: np.ndarray

    @classmethod
    def combine(cls, P0, D, M, med: MediumParams) -> "PolarizationTensors":
        return cls(P0, D, M, med.mu0 * M - med.eps0 * D - P0)


def _first_moment(mesh: SurfaceMesh, phi, frame=None):
    """``int y phi ds`` column by column; ``frame=(z, delta)`` maps back to the reference shape."""
    c, a = mesh.centroids, mesh.areas
    if frame is not None:
        z, delta = frame
        c = (c - np.asarray(z, dtype=float)) / delta
        a = a / delta**2
    return (c * a[:, None]).T @ phi


def _operator(mesh, K):
    return layer.assemble_adjoint_np(mesh) if K is None else K


def _shell_factor(mesh, med, K):
    """``eps_s/(eps_s - eps0) (lambda_eps I - K*)^{-1}[nu]``, or ``nu`` in the degenerate limit."""
    if med.shell_degenerate:
        return mesh.normals.astype(float)
    phi = layer.solve_resolvent(K, med.lambda_eps, "-", mesh.normals)
    return med.eps_s / (med.eps_s - med.eps0) * phi


def tensor_P0(mesh: SurfaceMesh, med: MediumParams, K=None, frame=None) -> np.ndarray:
    """Shell-contrast tensor; exactly zero when ``eps_s == eps0``."""
    if med.shell_degenerate:
        return np.zeros((3, 3))
    K = _operator(mesh, K)
    phi = layer.solve_resolvent(K, med.lambda_eps, "-", mesh.normals)
    return _first_moment(mesh, phi, frame)


def tensor_D(mesh: SurfaceMesh, anomaly: Anomaly, med: MediumParams, K=None, frame=None,
             shell=None) -> np.ndarray:
    K = _operator(mesh, K)
    g = anomaly.gamma(med.omega)
    lam = anomaly.lambda_gamma(med)
    shell = _shell_factor(mesh, med, K) if shell is None else shell
    phi = layer.solve_resolvent(K, lam, "+", shell)
    return _first_moment(mesh, phi, frame).astype(complex) / (g - med.eps_s)


def tensor_M(mesh: SurfaceMesh, anomaly: Anomaly, med: MediumParams, K=None, frame=None,
             shell=None) -> np.ndarray:
    K = _operator(mesh, K)
    lam = anomaly.lambda_mu(med.mu0)
    shell = _shell_factor(mesh, med, K) if shell is None else shell
    phi = layer.solve_resolvent(K, lam, "-", shell)
    return _first_moment(mesh, phi, frame).astype(complex) / (anomaly.mu - med.mu0)


def tensor_P(mesh: SurfaceMesh, anomaly: Anomaly, med: MediumParams, K=None,
             frame=None) -> PolarizationTensors:
    """Compute ``P0, D, M`` and ``P = mu0 M - eps0 D - P0`` with one operator assembly."""
    K = _operator(mesh, K)
    shell = _shell_factor(mesh, med, K)
    P0 = tensor_P0(mesh, med, K, frame)
    D = tensor_D(mesh, anomaly, med, K, frame, shell)
    M = tensor_M(mesh, anomaly, med, K, frame, shell)
    return PolarizationTensors.combine(P0, D, M, med)


def magnetostatic_moment_tensor(mesh: SurfaceMesh, anomaly: Anomaly, med: MediumParams,
                                K=None) -> np.ndarray:
    """``mu0/(mu - mu0) int y (lambda_mu I - K*)^{-1}[nu] ds``, the ``eps_s = eps0``, ``omega -> 0`` tensor."""
    K = _operator(mesh, K)
    phi = layer.solve_resolvent(K, anomaly.lambda_mu(med.mu0), "-", mesh.normals)
    return med.mu0 / (anomaly.mu - med.mu0) * _first_moment(mesh, phi)


def tensors_for(anomaly: Anomaly, med: MediumParams, method: str = "numeric") -> PolarizationTensors:
    """Tensors of an anomaly on its own reference mesh, or via the ball formula."""
    if method == "closed-form":
        if not anomaly.shape.is_ball:
            raise ValueError("closed-form tensors need a unit-ball shape")
        return ball_tensors_closed_form(anomaly, med)
    if method != "numeric":
        raise ValueError(f"unknown tensor method {method!r}")
    mesh, K = reference_operator(anomaly.shape)
    return tensor_P(mesh, anomaly, med, K)


@lru_cache(maxsize=8)
def reference_operator(shape: ShapeSpec):
    """Mesh and ``K*`` of a reference shape, assembled once per process."""
    mesh = make_mesh(shape)
    return mesh, layer.assemble_adjoint_np(mesh)


def ball_tensors_closed_form(anomaly: Anomaly, med: MediumParams) -> PolarizationTensors:
    """Ball tensors from ``K*[nu] = nu/6``, term by term."""
    if not anomaly.shape.is_ball:
        raise ValueError("closed form only holds for the unit ball")
    mu, mu0, e0, es = anomaly.mu, med.mu0, med.eps0, med.eps_s
    if mu == mu0:
        raise ValueError("mu must differ from mu0")
    g = anomaly.gamma(med.omega)
    if g == es:
        raise ValueError("gamma must differ from eps_s")
    eye = np.eye(3) * BALL_VOLUME
    # 9 eps_s / (eps_s + 2 eps0) equals 3 when the shell is degenerate, so no special case
    shell = 9.0 * es / (es + 2.0 * e0)
    M = shell / (mu + 2.0 * mu0) * eye
    D = shell / (2.0 * g + es) * eye
    P0 = 3.0 * (es - e0) / (es + 2.0 * e0) * eye
    if med.shell_degenerate:
        P0 = np.zeros((3, 3))
    return PolarizationTensors.combine(P0, D.astype(complex), M.astype(complex), med)


def ball_P_closed_form(anomaly: Anomaly, med: MediumParams) -> np.ndarray:
    return ball_tensors_closed_form(anomaly, med).P


def ball_moment_mobius(anomaly: Anomaly, med: MediumParams):
    """Coefficients ``(A, B, C, D)`` with ball scalar ``p(mu) = (A mu + B) / (C mu + D)``.

    ``p`` is the diagonal entry of ``P`` for the unit ball; the other material
    constants (``eps``, ``sigma``) are held at the values stored in ``anomaly``.
    """
    mu0, e0, es = med.mu0, med.eps0, med.eps_s
    g = anomaly.gamma(med.omega)
    alpha = 9.0 * mu0 * es / (es + 2.0 * e0)
    beta = -9.0 * e0 * es / ((2.0 * g + es) * (es + 2.0 * e0))
    if not med.shell_degenerate:
        beta -= 3.0 * (es - e0) / (es + 2.0 * e0)
    v = BALL_VOLUME
    return v * beta, v * (alpha + 2.0 * mu0 * beta), 1.0, 2.0 * mu0


def parameter_condition_value(anomaly: Anomaly, med: MediumParams) -> complex:
    """``mu es^2 + 2(mu0 - mu) es g + 2(mu + 2 mu0) e0 g - mu0 es^2``.

    Advisory only. A nonzero value does not rule out ``P = 0`` (the unit ball
    with ``eps_s = eps0`` vanishes when ``mu + 2 mu0 = 2 gamma + eps_s``), so
    :func:`check_nonsingular` inspects the tensor itself.
    """
    mu, mu0, e0, es = anomaly.mu, med.mu0, med.eps0, med.eps_s
    g = anomaly.gamma(med.omega)
    return mu * es**2 + 2 * (mu0 - mu) * es * g + 2 * (mu + 2 * mu0) * e0 * g - mu0 * es**2


def check_nonsingular(P, rtol: float = 1e-10) -> bool:
    """True unless the smallest singular value falls below ``rtol`` times the largest."""
    s = np.linalg.svd(np.asarray(P, dtype=complex), compute_uv=False)
    if s[0] == 0:
        return False
    return bool(s[-1] >= rtol * s[0])
