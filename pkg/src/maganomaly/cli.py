"""Command line front end: ``maganomaly {tensors,simulate,invert,validate}``.

Exit codes: 0 success, 1 validation failure or residual above threshold,
2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import forward as fw
from . import harmonics as hm
from . import inversion as iv
from .background import BackgroundField, BackgroundVanishesError
from .layer import ResolventSingularError, normal_component
from .mesh import ShapeSpec, sphere_mesh
from .polarization import (Anomaly, MediumParams, ball_P_closed_form, check_nonsingular,
                           parameter_condition_value)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

CONVENTIONS = {
    "harmonics": "orthonormal complex Y_n^m with Condon-Shortley phase",
    "kernel": "gamma0(x) = -1/(4 pi |x|)",
    "perturbation": "dH = delta^3 sum_l hess_gamma0(x - z_l) P_l H0(z_l)",
    "moment": "c = P H0(z)",
    "noise": "Gaussian per component, std = level * RMS over nodes and components",
    "units": "dimensionless; lengths, mu, eps, sigma, omega share one unit system",
}

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["medium", "background", "anomalies", "measurement"],
    "properties": {
        "medium": {
            "type": "object",
            "properties": {"mu0": _POS, "eps0": _POS, "eps_s": _POS,
                           "omega": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
        "background": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["uniform", "dipole", "core-trace"]},
                "h": _VEC3, "moment": _VEC3, "center": _VEC3,
                "core": {"type": "object",
                         "properties": {"radius": _POS, "refinement": {"type": "integer", "minimum": 0},
                                        "center": _VEC3},
                         "additionalProperties": False},
                "trace": {"type": "array", "items": {"type": "number"}},
                "trace_from_dipole": {"type": "object", "required": ["moment"],
                                      "properties": {"moment": _VEC3, "center": _VEC3},
                                      "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "anomalies": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["center", "delta", "mu"],
                "properties": {
                    "center": _VEC3, "delta": _POS,
                    "shape": {"enum": ["unit-ball", "ellipsoid"]},
                    "semi_axes": _VEC3,
                    "refinement": {"type": "integer", "minimum": 0, "maximum": 7},
                    "mu": _POS, "eps": _POS, "sigma": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "measurement": {
            "type": "object",
            "required": ["radius", "grid_theta", "grid_phi"],
            "properties": {
                "radius": _POS,
                "grid_theta": {"type": "integer", "minimum": 1},
                "grid_phi": {"type": "integer", "minimum": 1},
                "noise": {"type": "object",
                          "properties": {"level": {"type": "number", "minimum": 0},
                                         "seed": {"type": "integer"}},
                          "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "inversion": {
            "type": "object",
            "properties": {
                "n_max": {"type": "integer", "minimum": 1},
                "count": {"type": "integer", "minimum": 1},
                "multistart": {"type": "integer", "minimum": 1},
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "delta": _POS,
                "residual_threshold": _POS,
                "recover_mu": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "tensors": {"type": "object",
                    "properties": {"method": {"enum": ["numeric", "closed-form"]}},
                    "additionalProperties": False},
        "output": {"type": "object", "properties": {"dir": {"type": "string"}},
                   "additionalProperties": False},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


# -- config loading ------------------------------------------------------------


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def load_config(path, seed_override: int | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(raw), key=_path)
    if errors:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    cfg = copy.deepcopy(raw)
    if seed_override is not None:
        cfg.setdefault("measurement", {}).setdefault("noise", {})["seed"] = seed_override
        cfg.setdefault("inversion", {})["seed"] = seed_override
    return cfg


def build_medium(cfg) -> MediumParams:
    m = cfg.get("medium", {})
    try:
        return MediumParams(m.get("mu0", 1.0), m.get("eps0", 1.0), m.get("eps_s", 1.0),
                            m.get("omega", 0.0))
    except ValueError as exc:
        raise ConfigError(f"medium: {exc}") from exc


def build_anomalies(cfg, med: MediumParams) -> list:
    out = []
    for k, a in enumerate(cfg["anomalies"]):
        where = f"anomalies[{k}]"
        kind = a.get("shape", "unit-ball")
        try:
            shape = ShapeSpec(kind, a.get("refinement", 3), tuple(a.get("semi_axes", (1, 1, 1))))
            an = Anomaly(tuple(a["center"]), a["delta"], shape, a["mu"], a.get("eps", 1.0),
                         a.get("sigma", 0.0))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        if an.mu == med.mu0:
            raise ConfigError(f"{where}.mu: mu must differ from mu0")
        if an.sigma > 0 and med.omega == 0:
            raise ConfigError(f"{where}.sigma: gamma undefined at omega=0 when sigma > 0")
        if an.gamma(med.omega) == med.eps_s:
            raise ConfigError(f"{where}.eps: gamma must differ from eps_s")
        out.append(an)
    return out


def build_background(cfg) -> BackgroundField:
    b = cfg["background"]
    kind = b["type"]
    need = {"uniform": ["h"], "dipole": ["moment"], "core-trace": ["core"]}[kind]
    for key in need:
        if key not in b:
            raise ConfigError(f"background.{key}: required for type {kind!r}")
    if kind == "uniform":
        return BackgroundField.uniform(b["h"])
    if kind == "dipole":
        return BackgroundField.dipole(b["moment"], b.get("center", (0.0, 0.0, 0.0)))
    core = b["core"]
    mesh = sphere_mesh(core.get("radius", 0.3), core.get("refinement", 3),
                       core.get("center", (0.0, 0.0, 0.0)))
    if "trace" in b:
        g = np.asarray(b["trace"], dtype=float)
        if g.shape != (mesh.n_triangles,):
            raise ConfigError(f"background.trace: expected {mesh.n_triangles} values, got {g.size}")
    elif "trace_from_dipole" in b:
        src = b["trace_from_dipole"]
        dip = BackgroundField.dipole(src["moment"], src.get("center", (0.0, 0.0, 0.0)))
        g = normal_component(mesh, dip(mesh.centroids))
    else:
        raise ConfigError("background: core-trace needs 'trace' or 'trace_from_dipole'")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return BackgroundField.core_trace(mesh, g)


def build_scenario(cfg) -> fw.Scenario:
    med = build_medium(cfg)
    anomalies = build_anomalies(cfg, med)
    bg = build_background(cfg)
    meas = cfg["measurement"]
    noise = meas.get("noise", {})
    grid = hm.SphereGrid(meas["grid_theta"], meas["grid_phi"])
    try:
        sc = fw.Scenario(med, bg, anomalies, meas["radius"], grid,
                         noise.get("level", 0.0), noise.get("seed", 0))
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    try:
        from .background import nonvanishing_guard
        nonvanishing_guard(bg, sc.centers)
    except BackgroundVanishesError as exc:
        raise ConfigError(f"background: {exc}") from exc
    return sc


def inversion_config(cfg, scenario: fw.Scenario) -> iv.InversionConfig:
    inv = cfg.get("inversion", {})
    delta = inv.get("delta")
    if delta is None:
        deltas = {a.delta for a in scenario.anomalies}
        delta = deltas.pop() if len(deltas) == 1 else None
    tol = inv.get("tol", 1e-12)
    return iv.InversionConfig(n_max=inv.get("n_max", 8), count=inv.get("count", 1),
                              multistart=inv.get("multistart", 32), gtol=tol, xtol=tol,
                              max_iter=inv.get("max_iter", 200), seed=inv.get("seed", 0),
                              delta=delta)


# -- output helpers ------------------------------------------------------------


def _complex_matrix(a) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in a]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report(command: str, cfg: dict, outputs: dict) -> dict:
    return {"toolkit": {"name": "maganomaly", "version": __version__},
            "conventions": CONVENTIONS, "command": command, "config": cfg, "outputs": outputs}


def _emit(out_dir: Path, command: str, report: dict, seconds: float) -> None:
    write_atomic(out_dir / f"{command}_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    # timings live in their own file so the report stays byte-reproducible
    write_atomic(out_dir / f"{command}_timings.json",
                 json.dumps({"command": command, "wall_seconds": seconds}, indent=2) + "\n")


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.get("output", {}).get("dir", "."))


# -- commands --------------------------------------------------------------------


def cmd_tensors(cfg: dict) -> tuple[dict, int]:
    sc = build_scenario(cfg)
    method = cfg.get("tensors", {}).get("method", "numeric")
    rows = []
    for k, (a, t) in enumerate(zip(sc.anomalies, sc.tensors(method))):
        row = {"anomaly": k, "method": method,
               "P0": _complex_matrix(t.P0), "D": _complex_matrix(t.D),
               "M": _complex_matrix(t.M), "P": _complex_matrix(t.P),
               "nonsingular": check_nonsingular(t.P)}
        cond = parameter_condition_value(a, sc.medium)
        row["parameter_condition_advisory"] = [float(np.real(cond)), float(np.imag(cond))]
        if a.shape.is_ball:
            closed = ball_P_closed_form(a, sc.medium)
            row["closed_form_P"] = _complex_matrix(closed)
            row["closed_form_rel_err"] = float(np.linalg.norm(t.P - closed) / np.linalg.norm(closed))
        rows.append(row)
    return {"tensors": rows}, EXIT_OK


def simulate(cfg: dict):
    sc = build_scenario(cfg)
    method = cfg.get("tensors", {}).get("method", "numeric")
    T = sc.tensors(method)
    clean = fw.sample_measurements(fw.Scenario(sc.medium, sc.background, sc.anomalies,
                                               sc.radius, sc.grid), T)
    samples = fw.add_noise(clean, sc.noise_level, sc.seed)
    return sc, clean, samples


def cmd_simulate(cfg: dict, out_dir: Path) -> tuple[dict, int]:
    sc, clean, samples = simulate(cfg)
    path = out_dir / "samples.csv"
    write_atomic(path, fw.samples_to_csv(samples))
    outputs = {"samples_path": path.name, "nodes": sc.grid.size,
               "rms_field": clean.rms(), "rms_samples": samples.rms(),
               "noise": {"level": sc.noise_level, "seed": sc.seed}}
    return outputs, EXIT_OK


def cmd_invert(cfg: dict, samples_path) -> tuple[dict, int]:
    sc = build_scenario(cfg)
    try:
        samples = fw.samples_from_csv(samples_path, sc.grid, sc.radius)
    except OSError as exc:
        raise ConfigError(f"cannot read samples {samples_path}: {exc}") from exc
    icfg = inversion_config(cfg, sc)
    inv = cfg.get("inversion", {})
    found = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", iv.InversionWarning)
        if icfg.count == 1:
            d = iv.extract_multipoles(samples, icfg.n_max, scale=icfg.moment_scale)
            rec = iv.recover_single(d)
            mu = None
            if inv.get("recover_mu", True) and len(sc.anomalies) == 1 and sc.anomalies[0].shape.is_ball:
                try:
                    mu = iv.recover_permeability_ball(rec.c, rec.z, sc.anomalies[0], sc.medium,
                                                      sc.background)
                except ValueError as exc:
                    warnings.warn(str(exc), iv.InversionWarning)
            found = [iv.RecoveredAnomaly(rec.z, rec.c, mu, rec.residual, rec.moment_scale, rec.flags)]
            extraction = {"rank": d.info["rank"], "null_dim": d.info["null_dim"],
                          "cond": d.info["cond"]}
        else:
            found = iv.recover_multi(samples, icfg, sc.background)
            extraction = None
    cert = iv.residual_certificate(samples, found)
    outputs = {"recovered": [r.to_dict() for r in found], "residual_certificate": cert,
               "warnings": [str(w.message) for w in caught]}
    if extraction is not None:
        outputs["extraction"] = extraction
    if sc.anomalies and len(sc.anomalies) == len(found):
        from .validation import match_error
        outputs["position_error"] = match_error(sc.centers, [r.z for r in found])
    threshold = inv.get("residual_threshold")
    code = EXIT_OK
    if threshold is not None and cert > threshold:
        outputs["residual_threshold_exceeded"] = True
        code = EXIT_FAIL
    return outputs, code


def cmd_validate(suite: str) -> tuple[dict, int]:
    from .validation import run_suite
    results = run_suite(suite)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    return {"suite": suite, "results": [r.to_dict() for r in results]}, (EXIT_OK if ok else EXIT_FAIL)


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maganomaly", description="Magnetic anomaly toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("tensors", "simulate", "invert"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--seed-override", type=int)
        if name == "invert":
            s.add_argument("--samples", required=True)
    v = sub.add_parser("validate")
    v.add_argument("--suite", required=True,
                   choices=["np", "tensors", "asymptotic", "harmonics", "inversion", "all"])
    v.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        if args.command == "validate":
            outputs, code = cmd_validate(args.suite)
            cfg = {"suite": args.suite}
            out_dir = Path(args.out) if args.out else None
        else:
            cfg = load_config(args.config, args.seed_override)
            out_dir = _out_dir(args, cfg)
            if args.command == "tensors":
                outputs, code = cmd_tensors(cfg)
            elif args.command == "simulate":
                outputs, code = cmd_simulate(cfg, out_dir)
            else:
                outputs, code = cmd_invert(cfg, args.samples)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResolventSingularError, iv.NoConvergentStartError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # grid mismatch and similar input problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if out_dir is not None:
        _emit(out_dir, args.command, _report(args.command, cfg, outputs), time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
