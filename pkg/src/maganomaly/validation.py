"""Numbered acceptance checks, shared by the test suite and ``maganomaly validate``.

Every check returns a :class:`CriterionResult` carrying the measured values
next to their thresholds.
"""
from __future__ import annotations

import json
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import forward as fw
from . import harmonics as hm
from . import inversion as iv
from . import layer
from .background import BackgroundField
from .mesh import ShapeSpec, make_mesh
from .oracle import asymptotic_error
from .polarization import (Anomaly, MediumParams, ball_P_closed_form,
                           magnetostatic_moment_tensor, reference_operator, tensor_P)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{status}] {self.number:2d} {self.title} ({self.seconds:.1f} s): {parts}"

    def to_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "passed": bool(self.passed),
                "measured": _jsonable(self.measured)}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.3e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


# -- 1 ---------------------------------------------------------------------------


def np_sphere_errors(refinement: int):
    """``|K*[nu_k] - nu_k/6| / |nu_k/6|`` for k = x, y, z on the unit icosphere."""
    mesh, K = reference_operator(ShapeSpec("unit-ball", refinement))
    nu = mesh.normals
    return [_rel(K @ nu[:, k], nu[:, k] / 6.0) for k in range(3)]


@_timed
def criterion_1(coarse: int = 3, fine: int = 4) -> CriterionResult:
    e3 = np_sphere_errors(coarse)
    e4 = np_sphere_errors(fine)
    ok = max(e3) <= 2e-2 and all(b < a for a, b in zip(e3, e4))
    return CriterionResult(1, "NP sphere identity K*[nu] = nu/6", ok,
                           {"err_ref3": e3, "err_ref4": e4, "tol_ref3": 2e-2})


# -- 2 ---------------------------------------------------------------------------

BALL_MEDIUM = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=0.0)
COMPLEX_MEDIUM = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=1e-3)


def ball_cases(refinement: int):
    shape = ShapeSpec("unit-ball", refinement)
    return [
        (Anomaly((0, 0, 0), 1.0, shape, mu=2.0, eps=2.0, sigma=0.0), BALL_MEDIUM),
        (Anomaly((0, 0, 0), 1.0, shape, mu=2.0, eps=2.0, sigma=1.0), COMPLEX_MEDIUM),
    ]


def ball_tensor_errors(refinement: int):
    mesh, K = reference_operator(ShapeSpec("unit-ball", refinement))
    return [_rel(tensor_P(mesh, a, med, K).P, ball_P_closed_form(a, med))
            for a, med in ball_cases(refinement)]


@_timed
def criterion_2() -> CriterionResult:
    e3 = ball_tensor_errors(3)
    e4 = ball_tensor_errors(4)
    ok = max(e3) <= 2e-2 and max(e4) <= 1e-2
    return CriterionResult(2, "ball tensor vs closed form", ok,
                           {"err_ref3": e3, "err_ref4": e4, "tol_ref3": 2e-2, "tol_ref4": 1e-2})


# -- 3 ---------------------------------------------------------------------------


@_timed
def criterion_3(refinement: int = 3) -> CriterionResult:
    med = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.0, omega=1e-3)
    a = Anomaly((0, 0, 0), 1.0, ShapeSpec("unit-ball", refinement), mu=2.0, eps=1.0, sigma=1.0)
    mesh, K = reference_operator(a.shape)
    t = tensor_P(mesh, a, med, K)
    static = magnetostatic_moment_tensor(mesh, a, med, K)  # already mu0 M
    err = _rel(t.P, static)
    p0_zero = bool(np.all(t.P0 == 0))
    return CriterionResult(3, "degenerate shell limit", p0_zero and err <= 2e-2,
                           {"P0_exactly_zero": p0_zero, "rel_err": err, "tol": 2e-2})


# -- 4 ---------------------------------------------------------------------------

ASYMPTOTIC_BACKGROUND = BackgroundField.dipole((0.0, 0.0, 1.0), (0.0, 0.0, 0.0))


def asymptotic_errors(refinement: int = 4, deltas=(0.1, 0.05), bg=ASYMPTOTIC_BACKGROUND):
    med = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.0, omega=0.0)
    grid = hm.SphereGrid(20, 40)
    shape = ShapeSpec("unit-ball", refinement)
    return [asymptotic_error(Anomaly((0.0, 0.0, 0.3), d, shape, mu=3.0), med, bg, grid, 2.0)
            for d in deltas]


@_timed
def criterion_4(refinement: int = 4) -> CriterionResult:
    e1, e2 = asymptotic_errors(refinement)
    ratio = e1 / e2
    ok = 1.5 <= ratio <= 2.8 and max(e1, e2) <= 0.15
    return CriterionResult(4, "asymptotic vs transmission oracle", ok,
                           {"err_delta_0.1": e1, "err_delta_0.05": e2, "ratio": ratio,
                            "ratio_window": [1.5, 2.8], "err_tol": 0.15})


# -- 5 ---------------------------------------------------------------------------


def _unit_tensors(count):
    base = [np.eye(3), np.diag([1.0, 2.0, 3.0]), np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.5]])]
    from .polarization import PolarizationTensors
    z = np.zeros((3, 3))
    return [PolarizationTensors(z, z.astype(complex), base[i % 3].astype(complex),
                                base[i % 3].astype(complex)) for i in range(count)]


def multipole_reconstruction_error(n_max: int = 25, radius: float = 2.0):
    """Max ``|u_multipole - u_direct| / max |u_direct|`` on a sphere grid."""
    med = MediumParams()
    bg = BackgroundField.uniform((0.3, -0.2, 1.0))
    zs = [(0.3, -0.2, 0.25), (-0.2, 0.35, -0.1)]
    sc = fw.Scenario(med, bg, [Anomaly(z, 0.01) for z in zs], radius, hm.SphereGrid(40, 80))
    T = _unit_tensors(len(zs))
    d = fw.multipole_direct(sc, T, n_max)
    u = fw.direct_potential(sc, T, sc.points)
    ur = fw.reconstruct_scalar_from_multipoles(d, sc.grid.points)
    return float(np.abs(u - ur).max() / np.abs(u).max())


def extraction_error(n_max: int = 6, radius: float = 2.0, seed: int = 7):
    """Max entrywise gap between extracted and known coefficients (min-norm class member)."""
    rng = np.random.default_rng(seed)
    K = hm.n_coeffs(n_max)
    d_true = hm.MultipoleSet(rng.normal(size=(K, 3)) + 1j * rng.normal(size=(K, 3)), radius)
    grid = hm.SphereGrid(n_max + 4, 2 * n_max + 8)
    samples = fw.FieldSamples(grid, fw.field_from_multipoles(d_true, grid.scaled(radius)), radius)
    d_est = iv.extract_multipoles(samples, n_max)
    target = iv.minimum_norm_representative(d_true)
    deg0 = float(np.abs(d_est.degree(0) - d_true.degree(0)).max())
    return float(np.abs(d_est.coeffs - target.coeffs).max()), deg0


@_timed
def criterion_5() -> CriterionResult:
    e_rec = multipole_reconstruction_error()
    e_ext, e_deg0 = extraction_error()
    ok = e_rec <= 1e-8 and e_ext <= 1e-10 and e_deg0 <= 1e-10
    return CriterionResult(5, "multipole round trip", ok,
                           {"reconstruction_rel_err": e_rec, "extraction_err": e_ext,
                            "extraction_err_degree0": e_deg0, "tol_rec": 1e-8, "tol_ext": 1e-10})


# -- 6 ---------------------------------------------------------------------------

SINGLE_MEDIUM = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=1e-3)


def single_scenario(noise: float = 0.0, seed: int = 0):
    a = Anomaly((0.2, -0.3, 0.4), 0.1, ShapeSpec("unit-ball"), mu=2.0, eps=2.0, sigma=1.0)
    bg = BackgroundField.uniform((0.3, -0.2, 1.0))
    return fw.Scenario(SINGLE_MEDIUM, bg, [a], 2.0, hm.SphereGrid(50, 100), noise, seed)


def single_recovery(sc: fw.Scenario, samples: fw.FieldSamples):
    a = sc.anomalies[0]
    d = iv.extract_multipoles(samples, 8, scale=a.delta**3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", iv.InversionWarning)
        rec = iv.recover_single(d)
    mu = iv.recover_permeability_ball(rec.c, rec.z, a, sc.medium, sc.background)
    return rec, mu


@_timed
def criterion_6(seeds: int = 20) -> CriterionResult:
    sc = single_scenario()
    T = sc.tensors("closed-form")
    clean = fw.sample_measurements(sc, T)
    a = sc.anomalies[0]
    rec, mu = single_recovery(sc, clean)
    pos_err = float(np.linalg.norm(rec.z - a.center))
    mu_err = abs(mu - a.mu) / a.mu
    noisy = []
    for s in range(seeds):
        samples = fw.add_noise(clean, 0.01, s)
        r, _ = single_recovery(sc, samples)
        noisy.append(np.linalg.norm(r.z - a.center) / np.linalg.norm(a.center))
    med = float(np.median(noisy))
    ok = pos_err <= 1e-6 * sc.radius and mu_err <= 1e-6 and med <= 0.02
    return CriterionResult(6, "single-anomaly inversion", ok,
                           {"pos_err_over_R": pos_err / sc.radius, "mu_rel_err": mu_err,
                            "noisy_median_pos_err_over_|z|": med})


# -- 7 ---------------------------------------------------------------------------

MULTI_CENTERS = [(0.5, 0.0, 0.0), (-0.4, 0.3, 0.2), (0.1, -0.5, -0.3)]
MULTI_MU = [2.0, 4.0, 6.0]


def multi_scenario(count: int):
    med = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.0, omega=0.0)
    bg = BackgroundField.dipole((0.2, -0.1, 1.0), (0.0, 0.0, 0.0))
    an = [Anomaly(MULTI_CENTERS[i], 0.05, mu=MULTI_MU[i], eps=2.0) for i in range(count)]
    return fw.Scenario(med, bg, an, 2.0, hm.SphereGrid(24, 48))


def match_error(true_z, est_z) -> float:
    cost = np.linalg.norm(np.asarray(true_z)[:, None] - np.asarray(est_z)[None], axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


def multi_runs(count: int, runs: int = 20, multistart: int = 16):
    sc = multi_scenario(count)
    samples = fw.sample_measurements(sc, sc.tensors("closed-form"))
    successes, certs = 0, []
    for run in range(runs):
        cfg = iv.InversionConfig(count=count, multistart=multistart, seed=run, delta=0.05)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", iv.InversionWarning)
                rec = iv.recover_multi(samples, cfg)
        except iv.NoConvergentStartError:
            continue
        err = match_error(sc.centers, [r.z for r in rec])
        cert = iv.residual_certificate(samples, rec)
        if err <= 1e-4 * sc.radius:
            successes += 1
            certs.append(cert)
    return successes / runs, (max(certs) if certs else float("inf"))


@_timed
def criterion_7(runs: int = 20) -> CriterionResult:
    rate2, cert2 = multi_runs(2, runs)
    rate3, cert3 = multi_runs(3, runs)
    ok = min(rate2, rate3) >= 0.8 and max(cert2, cert3) <= 1e-6
    return CriterionResult(7, "multi-anomaly inversion", ok,
                           {"success_l2": rate2, "success_l3": rate3,
                            "max_certificate": max(cert2, cert3)})


# -- 8 ---------------------------------------------------------------------------


def addition_error():
    return abs(hm.addition_partial([2.0, 0, 0], [0.5, 0, 0], 20) - 1.0 / (4 * np.pi * 1.5))


def gradient_expansion_error(n_max: int = 25, samples: int = 64, seed: int = 3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(samples, 3))
    x = 2.0 * x / np.linalg.norm(x, axis=1, keepdims=True)
    z = rng.normal(size=(samples, 3))
    z = 0.5 * z / np.linalg.norm(z, axis=1, keepdims=True)
    pts = np.concatenate([x, [[0.0, 0.0, 2.0]]])
    zs = np.concatenate([z, [[0.0, 0.0, 0.5]]])
    return float(np.abs(hm.grad_gamma_expansion(pts, zs, n_max) - layer.grad_gamma0(pts - zs)).max())


@_timed
def criterion_8() -> CriterionResult:
    e_add = addition_error()
    e_grad = gradient_expansion_error()
    return CriterionResult(8, "harmonic expansions", e_add <= 1e-10 and e_grad <= 1e-9,
                           {"addition_err": e_add, "gradient_err": e_grad})


# -- 9 ---------------------------------------------------------------------------


def core_dipole_error(refinement: int = 3, radius: float = 0.3):
    from .mesh import sphere_mesh
    mesh = sphere_mesh(radius, refinement)
    dip = BackgroundField.dipole((0.2, -0.5, 1.0))
    g = layer.normal_component(mesh, dip(mesh.centroids))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        core = BackgroundField.core_trace(mesh, g)
    rng = np.random.default_rng(11)
    dirs = rng.normal(size=(128, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    errs = []
    for r in (1.0, 2.0, 4.0):
        a, b = core(r * dirs), dip(r * dirs)
        errs.append(float((np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)).max()))
    return max(errs)


@_timed
def criterion_9() -> CriterionResult:
    err = core_dipole_error()
    return CriterionResult(9, "core-trace background", err <= 2e-2, {"rel_err": err, "tol": 2e-2})


# -- 10 --------------------------------------------------------------------------

DETERMINISM_CONFIG = {
    "medium": {"mu0": 1.0, "eps0": 1.0, "eps_s": 1.0, "omega": 0.0},
    "background": {"type": "uniform", "h": [0.3, -0.2, 1.0]},
    "anomalies": [{"center": [0.2, -0.3, 0.4], "delta": 0.1, "shape": "unit-ball",
                   "refinement": 2, "mu": 2.0, "eps": 2.0, "sigma": 0.0}],
    "measurement": {"radius": 2.0, "grid_theta": 16, "grid_phi": 32,
                    "noise": {"level": 0.01, "seed": 5}},
    "inversion": {"n_max": 4, "count": 1, "multistart": 4, "tol": 1e-12, "seed": 9},
    "tensors": {"method": "numeric"},
}


def determinism_check():
    from . import cli
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "config.json"
        cfg_path.write_text(json.dumps(DETERMINISM_CONFIG))
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            code_s = cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)])
            code_i = cli.main(["invert", "--config", str(cfg_path), "--samples",
                               str(out / "samples.csv"), "--out", str(out)])
            if code_s != 0 or code_i != 0:
                return False, {"exit_codes": [code_s, code_i]}
            digests.append({name: (out / name).read_bytes() for name in
                            ("samples.csv", "simulate_report.json", "invert_report.json")})
    same = {name: digests[0][name] == digests[1][name] for name in digests[0]}
    return all(same.values()), same


@_timed
def criterion_10() -> CriterionResult:
    ok, detail = determinism_check()
    return CriterionResult(10, "byte-reproducible simulate and invert", ok, detail)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}

SUITES = {
    "np": (1, 9),
    "tensors": (2, 3),
    "asymptotic": (4,),
    "harmonics": (5, 8),
    "inversion": (6, 7, 10),
}


def run_suite(name: str):
    if name == "all":
        numbers = sorted(CRITERIA)
    elif name in SUITES:
        numbers = SUITES[name]
    else:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))} or all")
    return [CRITERIA[n]() for n in numbers]
