import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from maganomaly import layer
from maganomaly.background import (BackgroundField, BackgroundVanishesError, eval_background,
                                   nonvanishing_guard, validate_harmonic)
from maganomaly.mesh import sphere_mesh


@pytest.fixture(scope="module")
def core():
    mesh = sphere_mesh(0.3, 3)
    dip = BackgroundField.dipole((0.2, -0.5, 1.0))
    g = layer.normal_component(mesh, dip(mesh.centroids))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return BackgroundField.core_trace(mesh, g), dip


def test_uniform():
    bg = BackgroundField.uniform((0, 0, 1))
    assert_allclose(eval_background(bg, [[3.0, -1, 2], [0, 0, 0]]), [[0, 0, 1], [0, 0, 1]])
    assert validate_harmonic(bg, [1.0, 2.0, 3.0]) == (0.0, 0.0)


def test_dipole_on_axis():
    bg = BackgroundField.dipole((0, 0, 1))
    assert_allclose(bg([0, 0, 2.0])[2], -1 / (16 * np.pi), rtol=1e-14)
    assert_allclose(bg([0, 0, 2.0]), layer.hess_gamma0([0, 0, 2.0]) @ [0, 0, 1])


def test_dipole_harmonic():
    bg = BackgroundField.dipole((0.3, 0.1, 1.0), (0.1, 0.0, -0.2))
    div, curl = validate_harmonic(bg, [1.0, 1.0, 1.0])
    size = np.linalg.norm(bg([1.0, 1.0, 1.0]))
    assert abs(div) <= 1e-6 * size and curl <= 1e-6 * size


def test_core_trace_matches_dipole(core):
    field, dip = core
    rng = np.random.default_rng(2)
    d = rng.normal(size=(64, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    for r in (1.0, 2.0, 4.0):
        a, b = field(r * d), dip(r * d)
        assert np.max(np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)) <= 2e-2


def test_core_trace_harmonic(core):
    field, _ = core
    p = np.array([0.8, -0.6, 0.9])
    div, curl = validate_harmonic(field, p)
    size = np.linalg.norm(field(p))
    assert abs(div) <= 1e-5 * size and curl <= 1e-5 * size


def test_core_trace_zero_and_mean():
    mesh = sphere_mesh(0.3, 2)
    zero = BackgroundField.core_trace(mesh, np.zeros(mesh.n_triangles))
    assert np.all(zero([1.0, 0, 0]) == 0)
    with pytest.warns(RuntimeWarning, match="nonzero mean"):
        bg = BackgroundField.core_trace(mesh, np.ones(mesh.n_triangles) + mesh.normals[:, 2])
    assert abs(mesh.areas @ bg.trace) <= 1e-10 * mesh.total_area
    with pytest.raises(ValueError, match="too close"):
        bg([0.31, 0, 0])
    with pytest.raises(ValueError):
        BackgroundField.core_trace(mesh, np.zeros(3))


def test_guard():
    nonvanishing_guard(BackgroundField.uniform((0, 0, 1)), [[0.1, 0.2, 0.3], [1, 1, 1]])
    nonvanishing_guard(BackgroundField.dipole((0, 0, 1)), [])
    with pytest.raises(BackgroundVanishesError, match="background vanishes at anomaly center"):
        nonvanishing_guard(BackgroundField.dipole((0, 0, 1)), [[0, 0, 1e4]])
    with pytest.raises(BackgroundVanishesError):
        nonvanishing_guard(BackgroundField.uniform((0, 0, 0)), [[0, 0, 0.5]])


def test_describe():
    assert BackgroundField.uniform((1, 0, 0)).describe() == {"type": "uniform", "h": [1.0, 0.0, 0.0]}
    assert BackgroundField.dipole((0, 0, 2)).describe()["type"] == "dipole"
