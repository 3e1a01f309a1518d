import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy.special import sph_harm_y

from maganomaly import harmonics as hm
from maganomaly.layer import gamma0, grad_gamma0

angles = st.tuples(st.floats(0.05, np.pi - 0.05), st.floats(0, 2 * np.pi))


def direction(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


@given(angles)
def test_matches_scipy(tp):
    theta, phi = tp
    Y = hm.sph_harm_all(8, direction(theta, phi))
    for n in range(9):
        for m in range(-n, n + 1):
            assert_allclose(Y[hm.lm_index(n, m)], sph_harm_y(n, m, theta, phi), atol=1e-12)


def test_low_degree_values():
    assert_allclose(hm.sph_harm(0, 0, [0.6, 0.0, 0.8]), 1 / (2 * np.sqrt(np.pi)), rtol=1e-15)
    assert_allclose(hm.sph_harm(1, 0, [0, 0, 1.0]), np.sqrt(3 / (4 * np.pi)), rtol=1e-15)
    # the poles are regular points
    assert_allclose(hm.sph_harm(3, 2, [0, 0, -1.0]), 0.0, atol=1e-15)


def test_invalid_arguments():
    with pytest.raises(ValueError, match="invalid"):
        hm.sph_harm(2, 3, [0, 0, 1.0])
    with pytest.raises(ValueError, match="non-unit"):
        hm.sph_harm(1, 0, [0, 0, 1.1])


@given(angles)
def test_conjugate_symmetry(tp):
    Y = hm.sph_harm_all(6, direction(*tp))
    for n in range(7):
        for m in range(-n, n + 1):
            assert_allclose(np.conj(Y[hm.lm_index(n, m)]), (-1) ** m * Y[hm.lm_index(n, -m)], atol=1e-14)


def test_grid_weights_and_orthonormality():
    grid = hm.SphereGrid(12, 24)
    assert abs(grid.weights.sum() - 4 * np.pi) <= 1e-12
    Y = hm.sph_harm_all(11, grid.points)
    gram = (np.conj(Y) * grid.weights[:, None]).T @ Y
    assert_allclose(gram, np.eye(hm.n_coeffs(11)), atol=1e-12)
    small = hm.SphereGrid(3, 6)
    y21 = hm.sph_harm(2, 1, small.points)
    assert_allclose(np.sum(small.weights * y21 * np.conj(y21)), 1.0, atol=1e-12)


def test_sht_forward():
    grid = hm.SphereGrid(8, 16)
    a = hm.sht_forward(grid, hm.sph_harm(3, 2, grid.points), 5)
    expected = np.zeros(hm.n_coeffs(5))
    expected[hm.lm_index(3, 2)] = 1
    assert_allclose(a, expected, atol=1e-12)
    assert np.all(hm.sht_forward(grid, np.zeros(grid.size), 4) == 0)
    f = hm.sph_harm(1, 0, grid.points) + 2 * hm.sph_harm(2, 0, grid.points)
    a = hm.sht_forward(grid, f, 4)
    assert_allclose(a[[hm.lm_index(1, 0), hm.lm_index(2, 0)]], [1, 2], atol=1e-12)
    with pytest.raises(ValueError, match="insufficient"):
        hm.sht_forward(grid, f, 8)


def test_surface_gradient_finite_differences():
    theta, phi, h = 1.0, 0.5, 1e-6
    x = direction(theta, phi)
    e_theta = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    e_phi = np.array([-np.sin(phi), np.cos(phi), 0.0])
    d_theta = (sph_harm_y(2, 1, theta + h, phi) - sph_harm_y(2, 1, theta - h, phi)) / (2 * h)
    d_phi = (sph_harm_y(2, 1, theta, phi + h) - sph_harm_y(2, 1, theta, phi - h)) / (2 * h)
    expected = d_phi / np.sin(theta) * e_phi + d_theta * e_theta
    assert_allclose(hm.surf_grad_sph_harm(2, 1, x), expected, atol=1e-6)


@given(angles)
def test_surface_gradient_tangent(tp):
    x = direction(*tp)
    G = hm.surf_grad_all(6, x)
    assert np.abs(G @ x).max() <= 1e-12
    assert np.all(G[0] == 0)


def test_surface_gradient_at_pole_is_finite():
    # Cartesian surface gradients are defined at the poles
    G = hm.surf_grad_all(4, [0, 0, 1.0])
    assert np.all(np.isfinite(G))
    assert abs(G @ np.array([0, 0, 1.0])).max() <= 1e-14


@given(angles)
def test_vector_N_properties(tp):
    x = direction(*tp)
    assert_allclose(hm.vector_N(0, 0, x), x / (2 * np.sqrt(np.pi)), atol=1e-15)
    N = hm.vector_N_all(5, x)
    Y = hm.sph_harm_all(5, x)
    deg = np.repeat(np.arange(6), 2 * np.arange(6) + 1)
    assert_allclose(N @ x, (deg + 1) * Y, atol=1e-12)


def test_vector_N_is_minus_gradient():
    R, h = 2.0, 1e-5
    xhat = direction(0.9, 2.1)

    def f(p, n, m):
        r = np.linalg.norm(p)
        return sph_harm_y(n, m, np.arccos(p[2] / r), np.arctan2(p[1], p[0])) / r ** (n + 1)

    for n, m in [(0, 0), (1, -1), (2, 1), (3, 3)]:
        x = R * xhat
        grad = np.array([(f(x + h * e, n, m) - f(x - h * e, n, m)) / (2 * h) for e in np.eye(3)])
        assert_allclose(-grad, hm.vector_N(n, m, xhat) / R ** (n + 2), atol=1e-8)


def test_addition_formula():
    x, y = np.array([2.0, 0, 0]), np.array([0.5, 0, 0])
    assert abs(hm.addition_partial(x, y, 20) - 1 / (4 * np.pi * 1.5)) <= 1e-10
    assert_allclose(hm.addition_partial(x, np.zeros(3), 0), 1 / (4 * np.pi * 2), rtol=1e-15)
    with pytest.raises(ValueError):
        hm.addition_partial(y, x, 5)


def test_addition_monotone():
    x, y = np.array([2.0, 0, 0]), np.array([0.5, 0, 0])
    exact = -gamma0(x - y)
    errs = np.array([abs(hm.addition_partial(x, y, n) - exact) for n in range(0, 18)])
    assert np.all(np.diff(errs) < 0)


def test_addition_geometric_rate():
    x = 2.0 * direction(0.7, 0.3)
    y = 0.8 * direction(1.9, 4.0)
    exact = -gamma0(x - y)
    errs = np.array([abs(hm.addition_partial(x, y, n) - exact) for n in range(0, 25)])
    # envelope of the tail ~ (|y|/|x|)^n; single terms may dip through zeros of P_n
    env = np.maximum.accumulate(errs[::-1])[::-1]
    slope = np.polyfit(np.arange(5, 25), np.log(env[5:25]), 1)[0]
    assert abs(np.exp(slope) - 0.4) < 0.08


def test_gradient_expansion():
    x, z = np.array([0, 0, 2.0]), np.array([0, 0, 0.5])
    assert_allclose(hm.grad_gamma_expansion(x, z, 25), grad_gamma0(x - z), atol=1e-9)
    x2 = 2.0 * direction(1.2, 0.4)
    assert_allclose(hm.grad_gamma_expansion(x2, np.zeros(3), 0), grad_gamma0(x2), rtol=1e-14)
    with pytest.raises(ValueError):
        hm.grad_gamma_expansion(x, 2.5 * direction(0.1, 0.1), 5)


def test_gradient_expansion_rate():
    x = 2.0 * direction(1.1, 0.2)
    z = 0.6 * direction(0.5, 2.5)
    exact = grad_gamma0(x - z)
    e10 = np.linalg.norm(hm.grad_gamma_expansion(x, z, 10) - exact)
    e11 = np.linalg.norm(hm.grad_gamma_expansion(x, z, 11) - exact)
    assert abs(e11 / e10 - 0.3) < 0.1
    errs = [np.linalg.norm(hm.grad_gamma_expansion(x, z, n) - exact) for n in (5, 10, 15)]
    bound = [e / 0.3 ** (n + 1) for e, n in zip(errs, (5, 10, 15))]
    assert max(bound) <= 20 * min(bound)


def test_q_matrix():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    Q = hm.q_matrix(d)
    assert np.abs(np.linalg.det(Q)).min() > 1e-3
    q = hm.q_matrix([1.0, 0, 0])
    assert np.all(np.isfinite(q)) and abs(np.linalg.det(q)) > 0
    with pytest.raises(ValueError, match="poles"):
        hm.q_matrix([0, 0, 1.0])


def test_q_matrix_reconstructs_N():
    x = direction(1.3, 0.8)
    theta, phi = 1.3, 0.8
    e_phi = np.array([-np.sin(phi), np.cos(phi), 0.0])
    e_theta = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    frame = np.stack([x, e_phi, e_theta])
    N2 = np.stack([hm.vector_N(1, m, x) for m in (-1, 0, 1)])
    assert_allclose(hm.q_matrix(x) @ frame, N2, atol=1e-12)


@pytest.mark.parametrize("n", [0, 1, 2, 5])
def test_degree_map_shape_and_spectrum(n):
    A = hm.degree_map(n)
    assert A.shape == (2 * n + 3, 3 * (2 * n + 1))
    s = np.linalg.svd(A, compute_uv=False)
    assert_allclose(s, s[0], rtol=1e-10)
    assert A.shape[1] - np.linalg.matrix_rank(A) == 4 * n


def test_degree_separation(rng):
    grid = hm.SphereGrid(12, 24)
    d = hm.MultipoleSet(rng.normal(size=(hm.n_coeffs(4), 3)) + 1j * rng.normal(size=(hm.n_coeffs(4), 3)), 2.0)
    N = hm.vector_N_all(4, grid.points)
    for n in range(5):
        piece = np.einsum("qkc,kc->q", N[:, hm.degree_slice(n)], d.degree(n))
        a = hm.sht_forward(grid, piece, 6)
        mask = np.ones(hm.n_coeffs(6), bool)
        mask[hm.degree_slice(n + 1)] = False
        assert np.abs(a[mask]).max() <= 1e-10 * np.abs(a).max()


def test_multipole_set_validation():
    with pytest.raises(ValueError):
        hm.MultipoleSet(np.zeros((5, 3)), 1.0)
    with pytest.raises(ValueError):
        hm.MultipoleSet(np.zeros((4, 3)), 0.0)
    d = hm.MultipoleSet(np.arange(12).reshape(4, 3), 1.0)
    assert d.n_max == 1
    assert_allclose(d[1, -1], [3, 4, 5])


@given(st.integers(0, 30))
def test_index_layout(n):
    ks = [hm.lm_index(n, m) for m in range(-n, n + 1)]
    assert ks == list(range(n * n, (n + 1) ** 2))
    assert hm.degree_slice(n) == slice(ks[0], ks[-1] + 1)
