"""Transmission-problem reference solution for one finite inclusion.

With ``H = H0 + grad S_D[phi]`` outside and continuity of ``mu d_nu u``, the
density solves ``(lambda_mu I - K*) phi = nu . H0`` on ``dD``. This is the
classical normalization: for a unit ball with ``mu = 2`` in ``e_3`` the
perturbation at ``(0, 0, 2)`` is ``+1/16``.

The asymptotic model with ``P = mu0 M`` predicts ``-mu0/(mu - mu0)`` times
this field, so :func:`asymptotic_error` rescales the oracle by that factor
(``normalization="asymptotic"``) before comparing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layer
from .background import BackgroundField
from .forward import Scenario, asymptotic_perturbation
from .harmonics import SphereGrid
from .mesh import SurfaceMesh, scale_translate
from .polarization import (Anomaly, MediumParams, PolarizationTensors,
                           magnetostatic_moment_tensor, reference_operator)


@dataclass(frozen=True, eq=False)
class TransmissionSolution:
    mesh: SurfaceMesh
    density: np.ndarray
    factor: float = 1.0
    residual: float = 0.0

    def perturbation(self, x) -> np.ndarray:
        return self.factor * layer.eval_grad_single_layer(self.mesh, self.density, x)

    def __call__(self, x):
        return self.perturbation(x)


def solve_transmission(anomaly: Anomaly, med: MediumParams, bg: BackgroundField,
                       normalization: str = "classical") -> TransmissionSolution:
    """Solve the permeability transmission problem on ``delta * Omega + z``.

    The ``K*`` matrix of the reference shape is reused: it does not change
    under the similarity map.
    """
    if normalization not in ("classical", "asymptotic"):
        raise ValueError(f"unknown normalization {normalization!r}")
    ref_mesh, K = reference_operator(anomaly.shape)
    mesh = scale_translate(ref_mesh, anomaly.delta, anomaly.center)
    lam = anomaly.lambda_mu(med.mu0)
    rhs = layer.normal_component(mesh, bg(mesh.centroids))
    phi = layer.solve_resolvent(K, lam, "-", rhs)
    scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(lam * phi - K.matrix @ phi - rhs)) / scale
    factor = 1.0
    if normalization == "asymptotic":
        factor = -med.mu0 / (anomaly.mu - med.mu0)
    return TransmissionSolution(mesh, phi, factor, residual)


def magnetostatic_tensors(anomaly: Anomaly, med: MediumParams) -> PolarizationTensors:
    """Tensors of the ``eps_s = eps0``, ``sigma = 0`` limit, where ``P = mu0 M``."""
    mesh, K = reference_operator(anomaly.shape)
    M = magnetostatic_moment_tensor(mesh, anomaly, med, K) / med.mu0
    zero = np.zeros((3, 3))
    return PolarizationTensors(zero, zero.astype(complex), M.astype(complex),
                               (med.mu0 * M).astype(complex))


def asymptotic_error(anomaly: Anomaly, med: MediumParams, bg: BackgroundField,
                     grid: SphereGrid, radius: float) -> float:
    """``max |dH_asym - dH_oracle| / max |dH_oracle|`` over the grid scaled to ``radius``."""
    sc = Scenario(med, bg, [anomaly], radius, grid)
    pts = sc.points
    asym = asymptotic_perturbation(sc, [magnetostatic_tensors(anomaly, med)], pts)
    exact = solve_transmission(anomaly, med, bg, "asymptotic")(pts)
    num = np.linalg.norm(asym - exact, axis=1).max()
    return float(num / np.linalg.norm(exact, axis=1).max())


def fit_dipole(points, field, center) -> np.ndarray:
    """Least-squares moment ``m`` with ``field ~ hess_gamma0(x - center) @ m``."""
    H = layer.hess_gamma0(np.asarray(points) - np.asarray(center)).reshape(-1, 3)
    m, *_ = np.linalg.lstsq(H, np.asarray(field).reshape(-1), rcond=None)
    return m
