"""Leading-order perturbation field of small inclusions and synthetic data.

For anomalies ``D_l = delta_l * Omega_l + z_l`` in a background ``H0`` the
perturbation is

    dH(x) = sum_l delta_l**3 hess_gamma0(x - z_l) @ (P_l @ H0(z_l)),

the gradient of ``u(x) = sum_l delta_l**3 grad_gamma0(x - z_l) . m_l`` with
moments ``m_l = P_l H0(z_l)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import harmonics as hm
from .background import BackgroundField, nonvanishing_guard
from .layer import grad_gamma0, hess_gamma0
from .polarization import Anomaly, MediumParams, PolarizationTensors, tensors_for

SEPARATION_FACTOR = 10.0
CSV_COLUMNS = ["x", "y", "z", "re(Hx)", "im(Hx)", "re(Hy)", "im(Hy)", "re(Hz)", "im(Hz)", "weight"]


@dataclass(eq=False)
class Scenario:
    """Medium, background, anomalies and the measurement sphere.

    Checks at construction that anomalies are at least ``10 * delta`` apart
    and lie strictly inside the sphere of radius ``radius``.
    """

    medium: MediumParams
    background: BackgroundField
    anomalies: list
    radius: float
    grid: hm.SphereGrid
    noise_level: float = 0.0
    seed: int = 0
    _tensors: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.anomalies = list(self.anomalies)
        if not self.radius > 0:
            raise ValueError("measurement radius must be positive")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")
        for k, a in enumerate(self.anomalies):
            if np.linalg.norm(a.center) + a.delta >= self.radius:
                raise ValueError(f"anomaly {k} is not strictly inside the measurement sphere")
            for j in range(k):
                b = self.anomalies[j]
                gap = np.linalg.norm(a.center - b.center)
                if gap < SEPARATION_FACTOR * max(a.delta, b.delta):
                    raise ValueError(f"anomalies {j} and {k} are closer than 10 delta")

    @property
    def centers(self) -> np.ndarray:
        return np.array([a.center for a in self.anomalies]).reshape(-1, 3)

    @property
    def points(self) -> np.ndarray:
        return self.grid.scaled(self.radius)

    def tensors(self, method: str = "numeric") -> list:
        """Polarization tensors per anomaly, computed once per method."""
        if method not in self._tensors:
            self._tensors[method] = [tensors_for(a, self.medium, method) for a in self.anomalies]
        return self._tensors[method]


@dataclass(frozen=True, eq=False)
class FieldSamples:
    """Perturbation values at the nodes of ``grid`` scaled to ``radius``."""

    grid: hm.SphereGrid
    values: np.ndarray
    radius: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.size, 3):
            raise ValueError("need one 3-vector per grid node")
        v = v.astype(complex) if np.iscomplexobj(v) else v.astype(float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def points(self) -> np.ndarray:
        return self.grid.scaled(self.radius)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights of the measurement sphere (sum ``4 pi R**2``)."""
        return self.grid.weights * self.radius**2

    def rms(self) -> float:
        """Root-mean-square over nodes and components."""
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2)))

    def with_values(self, values) -> "FieldSamples":
        return FieldSamples(self.grid, values, self.radius)


def moments(scenario: Scenario, tensors) -> np.ndarray:
    """``m_l = P_l H0(z_l)``, shape ``(L, 3)`` complex."""
    if len(scenario.anomalies) == 0:
        return np.zeros((0, 3), dtype=complex)
    h0 = scenario.background(scenario.centers)
    return np.stack([np.asarray(t.P) @ h for t, h in zip(tensors, h0)]).astype(complex)


def _deltas(scenario):
    return np.array([a.delta for a in scenario.anomalies])


def dipole_field(points, centers, weighted_moments) -> np.ndarray:
    """``sum_l hess_gamma0(x - z_l) @ m_l`` at ``points`` (P, 3)."""
    points = np.atleast_2d(points)
    out = np.zeros(points.shape, dtype=complex)
    for z, m in zip(np.atleast_2d(centers), np.atleast_2d(weighted_moments)):
        out += np.einsum("pij,j->pi", hess_gamma0(points - z), m)
    return out


def asymptotic_perturbation(scenario: Scenario, tensors, x) -> np.ndarray:
    """``delta**3 sum_l hess_gamma0(x - z_l) P_l H0(z_l)`` at ``x`` ((3,) or (P, 3))."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    for a in scenario.anomalies:
        if np.any(np.linalg.norm(pts - a.center, axis=1) < SEPARATION_FACTOR * a.delta):
            raise ValueError("probe too close to an anomaly (< 10 delta)")
    m = moments(scenario, tensors) * (_deltas(scenario) ** 3)[:, None]
    out = dipole_field(pts, scenario.centers, m)
    return out[0] if x.ndim == 1 else out


def direct_potential(scenario: Scenario, tensors, x) -> np.ndarray:
    """``u(x) = sum_l grad_gamma0(x - z_l) . m_l`` without the ``delta**3`` factor."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    m = moments(scenario, tensors)
    out = np.zeros(len(pts), dtype=complex)
    for z, ml in zip(scenario.centers, m):
        out += grad_gamma0(pts - z) @ ml
    return out if np.ndim(x) > 1 else out[0]


def multipole_direct(scenario: Scenario, tensors, n_max: int,
                     include_delta: bool = False) -> hm.MultipoleSet:
    """``d^{n,m} = sum_l conj(Y_n^m(zhat_l)) |z_l|^n m_l``.

    With ``include_delta`` each term also carries ``delta_l**3``, which makes
    the set describe the measured perturbation itself.
    """
    nonvanishing_guard(scenario.background, scenario.centers)
    m = moments(scenario, tensors)
    if include_delta:
        m = m * (_deltas(scenario) ** 3)[:, None]
    coeffs = np.zeros((hm.n_coeffs(n_max), 3), dtype=complex)
    degrees = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    for z, ml in zip(scenario.centers, m):
        r = np.linalg.norm(z)
        zhat = z / r if r > 0 else np.array([0.0, 0.0, 1.0])
        # |z|^n Y_n^m(zhat) -> 0 for n >= 1 as z -> 0; 0.0**0 == 1 keeps n = 0
        w = np.conj(hm.sph_harm_all(n_max, zhat)) * r**degrees
        coeffs += w[:, None] * ml[None, :]
    return hm.MultipoleSet(coeffs, scenario.radius)


def reconstruct_scalar_from_multipoles(d: hm.MultipoleSet, xhat):
    """``sum_{n,m} N^m_{n+1}(xhat) . d^{n,m} / ((2n+1) R**(n+2))`` on the sphere ``R``."""
    N = hm.vector_N_all(d.n_max, xhat)
    degrees = np.repeat(np.arange(d.n_max + 1), 2 * np.arange(d.n_max + 1) + 1)
    scale = 1.0 / ((2 * degrees + 1) * d.radius ** (degrees + 2.0))
    return np.einsum("...kc,kc,k->...", N, d.coeffs, scale)


def field_from_multipoles(d: hm.MultipoleSet, x) -> np.ndarray:
    """Gradient of the exterior potential represented by ``d``, at ``|x| >= R``.

    Uses ``grad(Y_L^k / r^(L+1)) = -N^k_{L+1}(xhat) / r^(L+2)``.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    xhat = x / r[..., None]
    coeff = d.potential_coeffs()
    L = d.n_max + 1
    N = hm.vector_N_all(L, xhat)
    degrees = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    R = d.radius
    # potential = sum coeff_Lk (R/r)^(L+1) Y_L^k
    radial = R ** (degrees + 1.0) / r[..., None] ** (degrees + 2.0)
    return -np.einsum("...k,k,...kc->...c", radial, coeff, N)


def sample_measurements(scenario: Scenario, tensors) -> FieldSamples:
    """Perturbation on the measurement grid, noise added per the scenario settings."""
    values = asymptotic_perturbation(scenario, tensors, scenario.points)
    if not np.any(values.imag):
        values = values.real
    samples = FieldSamples(scenario.grid, values, scenario.radius)
    if scenario.noise_level > 0:
        samples = add_noise(samples, scenario.noise_level, scenario.seed)
    return samples


def add_noise(samples: FieldSamples, level: float, seed: int) -> FieldSamples:
    """Independent Gaussian noise with standard deviation ``level * rms`` per component.

    ``rms`` is taken over nodes and components, so the noise-to-signal RMS
    ratio is ``level``. Complex data get complex noise of the same variance,
    split evenly between real and imaginary parts. Draws run in node order
    from ``numpy.random.default_rng(seed)``.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return samples
    rng = np.random.default_rng(seed)
    std = level * samples.rms()
    v = samples.values
    if np.iscomplexobj(v):
        z = rng.standard_normal(v.shape + (2,)) * (std / np.sqrt(2.0))
        noise = z[..., 0] + 1j * z[..., 1]
    else:
        noise = rng.standard_normal(v.shape) * std
    return samples.with_values(v + noise)


# -- CSV exchange ------------------------------------------------------------


def samples_to_csv(samples: FieldSamples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    vals = samples.values.astype(complex)
    for p, v, wt in zip(samples.points, vals, samples.weights):
        row = list(p) + [c for comp in v for c in (comp.real, comp.imag)] + [wt]
        w.writerow([repr(float(c)) for c in row])
    return buf.getvalue()


def read_samples_csv(path):
    """Return ``(points, values, weights)`` from a samples CSV file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != CSV_COLUMNS:
        raise ValueError(f"samples file header must be {','.join(CSV_COLUMNS)}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(CSV_COLUMNS))
    values = data[:, 3:9:2] + 1j * data[:, 4:9:2]
    return data[:, :3], values, data[:, 9]


def samples_from_csv(path, grid: hm.SphereGrid, radius: float, tol: float = 1e-9) -> FieldSamples:
    """Load samples and check they sit on ``grid`` scaled to ``radius``."""
    pts, values, _ = read_samples_csv(path)
    expected = grid.scaled(radius)
    if pts.shape != expected.shape or np.abs(pts - expected).max() > tol * radius:
        raise ValueError("grid mismatch between samples file and configuration")
    if not np.any(values.imag):
        values = values.real
    return FieldSamples(grid, values, radius)
