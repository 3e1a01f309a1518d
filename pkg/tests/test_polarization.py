import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from maganomaly import layer
from maganomaly.mesh import ShapeSpec, scale_translate
from maganomaly.polarization import (Anomaly, MediumParams, ball_P_closed_form,
                                     ball_moment_mobius, ball_tensors_closed_form, check_nonsingular,
                                     magnetostatic_moment_tensor, reference_operator, tensor_D,
                                     tensor_M, tensor_P, tensor_P0, tensors_for)

VOL = 4 * np.pi / 3
MED = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=0.0)
BALL = Anomaly((0, 0, 0), 1.0, ShapeSpec("unit-ball", 3), mu=2.0, eps=2.0)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_hand_values():
    # from K*[nu] = nu/6 on the sphere: (lam - 1/6)^-1 and (lam + 1/6)^-1 factors
    p0 = 3 * 0.5 / 3.5 * VOL
    d = 9 * 1.5 / ((2 * 2 + 1.5) * 3.5) * VOL
    m = 9 * 1.5 / ((2 + 2) * 3.5) * VOL
    assert_allclose([p0, d, m, m - d - p0], [1.7952, 2.9375, 4.0392, -0.6935], atol=1e-4)
    t = ball_tensors_closed_form(BALL, MED)
    assert_allclose(np.diag(t.P0), p0, rtol=1e-14)
    assert_allclose(np.diag(t.D), d, rtol=1e-14)
    assert_allclose(np.diag(t.M), m, rtol=1e-14)
    assert_allclose(ball_P_closed_form(BALL, MED), (m - d - p0) * np.eye(3), rtol=1e-13)


def test_numeric_components_match_ball(sphere3):
    mesh, K = sphere3
    t = tensor_P(mesh, BALL, MED, K)
    ref = ball_tensors_closed_form(BALL, MED)
    for name in ("P0", "D", "M", "P"):
        assert rel(getattr(t, name), getattr(ref, name)) <= 2e-2, name
    assert rel(t.P0, t.P0.T) <= 2e-2
    assert np.abs(t.D.imag).max() <= 1e-14


def test_combination_is_exact(sphere2):
    mesh, K = sphere2
    med = MediumParams(1.3, 0.7, 1.9, 2e-3)
    a = Anomaly((0, 0, 0), 1.0, ShapeSpec("unit-ball", 2), mu=3.0, eps=1.2, sigma=0.4)
    t = tensor_P(mesh, a, med, K)
    assert np.array_equal(t.P, med.mu0 * t.M - med.eps0 * t.D - t.P0)


def test_mesh_convergence():
    errs = []
    for level in (2, 3, 4):
        a = Anomaly((0, 0, 0), 1.0, ShapeSpec("unit-ball", level), mu=2.0, eps=2.0)
        errs.append(rel(tensors_for(a, MED).P, ball_P_closed_form(a, MED)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-2


def test_degenerate_shell(sphere3):
    mesh, K = sphere3
    med = MediumParams(1.0, 1.0, 1.0, 1e-3)
    a = Anomaly((0, 0, 0), 1.0, ShapeSpec("unit-ball", 3), mu=2.0, eps=1.0, sigma=1.0)
    assert np.all(tensor_P0(mesh, med, K) == 0)
    D = tensor_D(mesh, a, med, K)
    base = np.linalg.norm(((mesh.centroids * mesh.areas[:, None]).T
                           @ layer.solve_resolvent(K, 0.5, "+", mesh.normals)))
    assert np.linalg.norm(D) <= 2 * med.omega * base / a.sigma
    M = tensor_M(mesh, a, med, K)
    assert np.all(np.linalg.eigvalsh(((M + M.conj().T) / 2).real) > 0)
    assert rel(M, magnetostatic_moment_tensor(mesh, a, med, K) / med.mu0) <= 1e-12


def test_omega_limit_closed_form():
    med = MediumParams(1.0, 1.0, 1.0, 1e-9)
    a = Anomaly((0, 0, 0), 1.0, mu=2.0, eps=1.0, sigma=1.0)
    # gamma ~ i 1e9 kills the D term
    assert_allclose(ball_P_closed_form(a, med), 3 / 4 * VOL * np.eye(3), rtol=1e-8)


def test_errors():
    with pytest.raises(ValueError, match="differ from mu0"):
        Anomaly((0, 0, 0), 1.0, mu=1.0).lambda_mu(1.0)
    a = Anomaly((0, 0, 0), 1.0, mu=2.0, eps=1.5)
    with pytest.raises(ValueError, match="eps_s"):
        a.lambda_gamma(MED)
    with pytest.raises(ValueError, match="gamma undefined"):
        Anomaly((0, 0, 0), 1.0, sigma=1.0).gamma(0.0)
    with pytest.raises(ValueError):
        MediumParams(mu0=0.0)
    with pytest.raises(ValueError, match="unit-ball"):
        tensors_for(Anomaly((0, 0, 0), 1.0, ShapeSpec("ellipsoid", 1, (2, 1, 1))), MED, "closed-form")


def test_check_nonsingular():
    assert check_nonsingular(ball_P_closed_form(BALL, MED))
    assert not check_nonsingular(np.zeros((3, 3)))
    assert check_nonsingular(np.eye(3))
    # mu + 2 mu0 = 2 gamma + eps_s makes the degenerate-shell ball invisible
    med = MediumParams(1.0, 1.0, 1.0, 0.0)
    assert not check_nonsingular(ball_P_closed_form(Anomaly((0, 0, 0), 1.0, mu=3.0, eps=2.0), med))


def test_scale_independence(sphere2):
    mesh, K = sphere2
    a = Anomaly((0.2, 0.1, -0.3), 0.05, ShapeSpec("unit-ball", 2), mu=4.0, eps=2.0)
    small = scale_translate(mesh, a.delta, a.center)
    Ks = layer.assemble_adjoint_np(small)
    t_ref = tensor_P(mesh, a, MED, K)
    t_small = tensor_P(small, a, MED, Ks, frame=(a.center, a.delta))
    assert_allclose(t_small.P, t_ref.P, rtol=1e-10, atol=1e-10)


def test_ellipsoid_diagonal():
    a = Anomaly((0, 0, 0), 1.0, ShapeSpec("ellipsoid", 3, (1.5, 1.0, 0.7)), mu=3.0, eps=2.0)
    P = tensors_for(a, MED).P
    off = P - np.diag(np.diag(P))
    assert np.linalg.norm(off) <= 2e-2 * np.linalg.norm(P)


@given(mu=st.floats(0.1, 50).filter(lambda m: abs(m - 1) > 1e-3),
       eps=st.floats(0.1, 10).filter(lambda e: abs(e - 1.5) > 1e-3))
def test_mobius_matches_closed_form(mu, eps):
    a = Anomaly((0, 0, 0), 1.0, mu=mu, eps=eps)
    A, B, C, D = ball_moment_mobius(a, MED)
    assert_allclose((A * mu + B) / (C * mu + D), ball_P_closed_form(a, MED)[0, 0], rtol=1e-10)


def test_reference_operator_cached():
    s = ShapeSpec("unit-ball", 2)
    assert reference_operator(s)[1] is reference_operator(ShapeSpec("unit-ball", 2))[1]
