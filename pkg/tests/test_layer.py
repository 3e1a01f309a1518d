import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from maganomaly import layer
from maganomaly.mesh import ShapeSpec, make_mesh, scale_translate, sphere_mesh

nonzero_vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-2)


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(3)])


def test_gamma0_values():
    assert_allclose(layer.gamma0([1.0, 0, 0]), -1 / (4 * np.pi), rtol=1e-15)
    with pytest.raises(ValueError, match="singular point"):
        layer.gamma0([0.0, 0, 0])
    with pytest.raises(ValueError, match="singular point"):
        layer.grad_gamma0(np.zeros(3))
    with pytest.raises(ValueError, match="singular point"):
        layer.hess_gamma0(np.zeros(3))


def test_grad_gamma0_finite_differences():
    for x in ([1.0, 0, 0], [0, 0, 2.0], [0.3, -0.7, 1.1]):
        assert_allclose(layer.grad_gamma0(x), fd_grad(layer.gamma0, x), atol=1e-9)
    # |x| = 2: x / (4 pi |x|^3) = e3 / (16 pi)
    assert_allclose(layer.grad_gamma0([0, 0, 2.0]), [0, 0, 1 / (16 * np.pi)], rtol=1e-14)


def test_hess_gamma0_finite_differences():
    x = np.array([1.0, 0, 0])
    assert_allclose(layer.hess_gamma0(x), np.diag([-2.0, 1, 1]) / (4 * np.pi), atol=1e-15)
    y = np.array([0.4, 0.5, -0.9])
    assert_allclose(layer.hess_gamma0(y), fd_grad(layer.grad_gamma0, y), atol=1e-8)


@given(nonzero_vec)
def test_kernel_symmetries(x):
    x = np.asarray(x)
    assert_allclose(layer.gamma0(2 * x), layer.gamma0(x) / 2, rtol=1e-13)
    assert_allclose(layer.grad_gamma0(-x), -layer.grad_gamma0(x), rtol=1e-13)
    H = layer.hess_gamma0(x)
    assert_allclose(H, H.T, rtol=0, atol=0)
    assert abs(np.trace(H)) <= 1e-12 * np.abs(H).max()


def test_single_layer_shell_theorem(sphere3):
    mesh, _ = sphere3
    S = layer.assemble_single_layer(mesh)
    assert np.all(np.isfinite(S.matrix)) and np.all(S.matrix < 0)
    assert_allclose(S @ np.ones(mesh.n_triangles), -1.0, atol=2e-2)
    S2 = layer.assemble_single_layer(scale_translate(mesh, 2.0, (0, 0, 0)))
    assert_allclose(S2 @ np.ones(mesh.n_triangles), -2.0, atol=4e-2)


def test_np_sphere_eigenrelation(sphere3):
    mesh, K = sphere3
    for k in range(3):
        nu = mesh.normals[:, k]
        assert np.linalg.norm(K @ nu - nu / 6) / np.linalg.norm(nu / 6) <= 2e-2


def test_np_spectrum_bounds(sphere2):
    _, K = sphere2
    ev = K.eigenvalues
    assert np.abs(ev.imag).max() < 2e-2
    assert ev.real.min() > -0.5 - 2e-2
    assert ev.real.max() <= 0.5 + 2e-2


def test_adjoint_np_scale_invariance(sphere2):
    mesh, K = sphere2
    K2 = layer.assemble_adjoint_np(scale_translate(mesh, 0.05, (0.3, -0.2, 0.1)))
    assert_allclose(K2.matrix, K.matrix, rtol=0, atol=1e-12)


def test_resolvent_eigenrelation_and_errors(sphere3):
    mesh, K = sphere3
    rhs = mesh.normals[:, 2]
    phi = layer.solve_resolvent(K, 1.5, "-", rhs)
    assert np.linalg.norm(1.5 * phi - K @ phi - rhs) <= 1e-10 * np.linalg.norm(rhs)
    assert_allclose(phi, 0.75 * rhs, atol=2e-2)
    with pytest.raises(layer.ResolventSingularError, match="resolvent singular"):
        layer.solve_resolvent(K, 1 / 6, "-", rhs)
    assert np.all(layer.solve_resolvent(K, 2.0 + 1j, "+", np.zeros(mesh.n_triangles)) == 0)
    with pytest.raises(ValueError):
        layer.solve_resolvent(K, 2.0, "*", rhs)


def test_zero_mean_plus_resolvent(sphere3, rng):
    mesh, K = sphere3
    g = rng.normal(size=mesh.n_triangles)
    g -= (mesh.areas @ g) / mesh.total_area
    phi = layer.solve_resolvent(K, 0.5, "+", g)
    assert abs(mesh.areas @ phi) <= 1e-8 * np.linalg.norm(g) * mesh.total_area


def test_grad_single_layer_sphere_in_uniform_field(sphere3):
    mesh, K = sphere3
    phi = layer.solve_resolvent(K, 1.5, "-", mesh.normals[:, 2])
    g = layer.eval_grad_single_layer(mesh, phi, [0, 0, 2.0])
    # exterior perturbation of a mu = 2 ball: dipole with beta = 1/4
    assert_allclose(g, [0, 0, 0.0625], atol=0.0625 * 2e-2)
    assert_allclose(layer.eval_grad_single_layer(mesh, np.zeros(mesh.n_triangles), [0, 0, 2.0]), 0)


def test_grad_single_layer_curl_free(sphere3):
    mesh, K = sphere3
    phi = layer.solve_resolvent(K, 1.5, "-", mesh.normals[:, 2])
    x, h = np.array([0, 0, 2.0]), 1e-4
    jac = np.array([(layer.eval_grad_single_layer(mesh, phi, x + h * e)
                     - layer.eval_grad_single_layer(mesh, phi, x - h * e)) / (2 * h) for e in np.eye(3)]).T
    curl = [jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]]
    field = layer.eval_grad_single_layer(mesh, phi, x)
    assert np.linalg.norm(curl) <= 1e-6 * np.linalg.norm(field)


def test_grad_is_gradient_of_single_layer(sphere2, rng):
    mesh, _ = sphere2
    phi = rng.normal(size=mesh.n_triangles)
    x = np.array([1.5, -1.0, 2.0])
    fd = fd_grad(lambda p: layer.eval_single_layer(mesh, phi, p), x, 1e-5)
    assert_allclose(layer.eval_grad_single_layer(mesh, phi, x), fd, rtol=1e-7)


def test_too_close_to_surface(sphere2):
    mesh, _ = sphere2
    with pytest.raises(ValueError, match="too close"):
        layer.eval_grad_single_layer(mesh, np.ones(mesh.n_triangles), [0, 0, 1.01])


def test_exterior_decay(sphere2, rng):
    mesh, _ = sphere2
    phi = 1.0 + rng.normal(size=mesh.n_triangles)
    r = np.linspace(5, 50, 10)
    vals = np.abs(layer.eval_single_layer(mesh, phi, r[:, None] * np.array([0.6, 0.0, 0.8])))
    assert np.all(vals * r <= 1.05 * (vals * r)[0])


def test_jump_relation(sphere3):
    mesh, K = sphere3
    phi = mesh.normals[:, 2] ** 2  # smooth, nonconstant
    # exterior normal derivative by extrapolating one-sided differences of S[phi]
    ts = np.array([0.15, 0.2, 0.25])
    vals = []
    for t in ts:
        pts_a = mesh.centroids + t * mesh.normals
        pts_b = mesh.centroids + (t + 1e-3) * mesh.normals
        ua = layer.eval_single_layer(mesh, phi, pts_a, check=False)
        ub = layer.eval_single_layer(mesh, phi, pts_b, check=False)
        vals.append((ub - ua) / 1e-3)
    vals = np.array(vals)
    coef = np.polyfit(ts, vals, 2)
    dn = coef[-1]
    expected = 0.5 * phi + K @ phi
    assert np.linalg.norm(dn - expected) / np.linalg.norm(expected) <= 5e-2


def test_operator_file_round_trip(tmp_path, sphere2):
    _, K = sphere2
    layer.write_operator(K, tmp_path / "k.npop")
    back = layer.read_operator(tmp_path / "k.npop")
    assert_allclose(back.matrix, K.matrix, rtol=0, atol=0)
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError, match="magic"):
        layer.read_operator(tmp_path / "bad")


def test_high_contrast_resolvent(sphere3):
    mesh, K = sphere3
    lam = (1e6 + 1) / (2 * (1e6 - 1))
    rhs = mesh.normals[:, 0]
    phi = layer.solve_resolvent(K, lam, "-", rhs)
    assert np.linalg.norm(lam * phi - K @ phi - rhs) <= 1e-10 * np.linalg.norm(rhs)
    assert abs(mesh.areas @ phi) <= 1e-10 * np.linalg.norm(phi) * mesh.total_area
    # a right-hand side carrying net flux excites the 1/2 mode
    with pytest.raises(layer.ResolventSingularError):
        layer.solve_resolvent(K, lam, "-", rhs + 1.0)
