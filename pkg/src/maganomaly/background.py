"""Steady background fields ``H0``: uniform, point dipole, or generated by a core.

The core branch represents the exterior field as ``grad S[phi]`` with
``(I/2 + K*) phi = g``, where ``g`` is the normal trace on the core surface.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import layer
from .mesh import SurfaceMesh

GUARD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class BackgroundField:
    """Curl- and divergence-free field away from its sources.

    Build with :meth:`uniform`, :meth:`dipole` or :meth:`core_trace`; call the
    instance (or :func:`eval_background`) on points of shape ``(3,)`` or ``(P, 3)``.
    """

    kind: str
    h: np.ndarray | None = None
    moment: np.ndarray | None = None
    center: np.ndarray | None = None
    mesh: SurfaceMesh | None = field(default=None, repr=False)
    trace: np.ndarray | None = field(default=None, repr=False)
    density: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def uniform(cls, h) -> "BackgroundField":
        return cls("uniform", h=np.asarray(h, dtype=float).reshape(3))

    @classmethod
    def dipole(cls, moment, center=(0.0, 0.0, 0.0)) -> "BackgroundField":
        """``H(x) = hess_gamma0(x - center) @ moment``."""
        return cls("dipole", moment=np.asarray(moment, dtype=float).reshape(3),
                   center=np.asarray(center, dtype=float).reshape(3))

    @classmethod
    def core_trace(cls, mesh: SurfaceMesh, g, K: layer.BoundaryOperator | None = None,
                   mean_tol: float = 1e-10) -> "BackgroundField":
        """Exterior field with normal trace ``g`` (one value per triangle) on ``mesh``.

        A nonzero area-weighted mean of ``g`` carries net flux, which a
        source-free core cannot produce; it is removed with a warning.
        """
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.shape[0] != mesh.n_triangles:
            raise ValueError("trace length must equal the triangle count")
        mean = float(mesh.areas @ g) / mesh.total_area
        scale = max(float(np.abs(g).max()), np.finfo(float).tiny)
        if abs(mean) > mean_tol * scale:
            warnings.warn(f"core trace has nonzero mean {mean:.3e}; subtracting it",
                          RuntimeWarning, stacklevel=2)
            g = g - mean
        if K is None:
            K = layer.assemble_adjoint_np(mesh)
        phi = layer.solve_resolvent(K, 0.5, "+", g)
        return cls("core-trace", mesh=mesh, trace=g, density=phi)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.broadcast_to(self.h, x.shape).copy()
        if self.kind == "dipole":
            return np.einsum("...ij,j->...i", layer.hess_gamma0(x - self.center), self.moment)
        return layer.eval_grad_single_layer(self.mesh, self.density, x)

    @property
    def reference_magnitude(self) -> float:
        """Typical field size near the sources, used to scale the vanishing test."""
        if self.kind == "uniform":
            return float(np.linalg.norm(self.h))
        if self.kind == "dipole":
            return float(2.0 * np.linalg.norm(self.moment) / (4.0 * np.pi))
        return float(np.sqrt(self.mesh.areas @ self.trace**2 / self.mesh.total_area))

    def describe(self) -> dict:
        if self.kind == "uniform":
            return {"type": "uniform", "h": self.h.tolist()}
        if self.kind == "dipole":
            return {"type": "dipole", "moment": self.moment.tolist(), "center": self.center.tolist()}
        return {"type": "core-trace", "triangles": self.mesh.n_triangles}


def eval_background(bg: BackgroundField, x) -> np.ndarray:
    return bg(x)


def validate_harmonic(bg: BackgroundField, probe, h: float = 1e-4):
    """Central-difference divergence and curl norm of ``bg`` at ``probe``."""
    probe = np.asarray(probe, dtype=float).reshape(3)
    steps = np.eye(3) * h
    pts = np.concatenate([probe + steps, probe - steps])
    vals = bg(pts)
    jac = (vals[:3] - vals[3:]).T / (2.0 * h)  # jac[i, j] = d H_i / d x_j
    div = float(np.trace(jac))
    curl = np.array([jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]])
    return div, float(np.linalg.norm(curl))


class BackgroundVanishesError(ValueError):
    pass


def nonvanishing_guard(bg: BackgroundField, points, reference: float | None = None) -> None:
    """Raise when ``|H0|`` at any of ``points`` falls below ``1e-10 * reference``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return
    ref = bg.reference_magnitude if reference is None else reference
    mags = np.linalg.norm(bg(points), axis=-1)
    bad = np.flatnonzero((mags < GUARD_RTOL * ref) | (mags == 0))
    if bad.size:
        raise BackgroundVanishesError(
            f"background vanishes at anomaly center {points[bad[0]].tolist()}"
        )
