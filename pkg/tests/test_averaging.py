from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellip_tow import functions as fn
from ellip_tow.averaging import (
    S_r,
    avg_over_ellipsoid,
    divergence_p_laplacian,
    expansion_residual,
    f_u,
    infinity_laplacian,
    normalized_p_laplacian,
    one_laplacian,
    p_laplacian,
    p_laplacian_mv2,
    predicted_increment,
    sample_points,
)
from ellip_tow.errors import SingularGradientError
from ellip_tow.geometry import Ellipsoid, ball, sampling_ellipsoid
from ellip_tow.quadrature import QuadratureRule, monte_carlo_rule, product_rule, search_rule
from ellip_tow.scaling import make_params

P3 = make_params(2, 3.0, 2.0, "above")
X0 = np.array([1.0, 0.0])


# quadrature ------------------------------------------------------------------------


@pytest.mark.parametrize("N,nr,ns", [(2, 2, 8), (2, 4, 16), (3, 2, 16), (3, 3, 64), (4, 2, 40)])
def test_product_rule_moments(N, nr, ns):
    Q = product_rule(N, nr, ns)
    assert abs(Q.weights.sum() - 1.0) <= 1e-14
    assert Q.symmetric
    np.testing.assert_allclose(Q.weights @ Q.nodes, 0.0, atol=1e-14)
    M = Q.moment2()
    if N <= 3:
        np.testing.assert_allclose(M, np.eye(N) / (N + 2), atol=1e-14)
    else:
        assert np.trace(M) == pytest.approx(N / (N + 2), abs=1e-14)


def test_monte_carlo_rule_is_symmetric():
    Q = monte_carlo_rule(3, 1001, seed=4)
    assert len(Q) == 1000
    np.testing.assert_allclose(Q.weights @ Q.nodes, 0.0, atol=1e-15)


def test_quadrature_rule_validation():
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros((2, 2)), np.array([0.5, 0.6]), True)
    with pytest.raises(ValueError):
        QuadratureRule(np.array([[2.0, 0.0]]), np.array([1.0]), True)


def test_search_rule_contains_boundary_and_is_symmetric():
    S = search_rule(3)
    assert len(S.directions) == 256
    assert 1.0 in S.radial_levels
    assert S.is_symmetric()
    Z = S.candidates()
    assert np.all(Z[-1] == 0)
    with pytest.raises(ValueError):
        search_rule(2, 8, radial_levels=(0.5,))


# averages --------------------------------------------------------------------------


def _E():
    return Ellipsoid(np.array([0.3, -0.7]), 0.4, 2.2, np.array([0.6, 0.8]))


def test_avg_constant_and_linear():
    Q = product_rule(2, 2, 8)
    assert avg_over_ellipsoid(lambda x: np.full(x.shape[0], 7.0), _E(), Q) == pytest.approx(7.0, abs=1e-14)
    b = np.array([1.3, -0.4])
    assert avg_over_ellipsoid(lambda x: x @ b, _E(), Q) == pytest.approx(_E().center @ b, abs=1e-14)


@pytest.mark.parametrize("N", [2, 3])
def test_avg_norm_squared_unit_ball(N):
    Q = product_rule(N, 2)
    E = Ellipsoid(np.zeros(N), 1.0, 1.0, np.zeros(N))
    u = fn.norm_squared(N).value
    exact = N / (N + 2)
    assert avg_over_ellipsoid(u, E, Q) == pytest.approx(exact, abs=1e-14)
    # independent Monte Carlo confirmation with 10^6 samples
    rng = np.random.default_rng(11)
    g = rng.standard_normal((1_000_000, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    y = g * rng.random((1_000_000, 1)) ** (1.0 / N)
    mc = (y * y).sum(1)
    assert abs(mc.mean() - exact) < 4 * mc.std() / 1000


def test_f_u_examples():
    Q = product_rule(2, 2, 8)
    r = 0.05
    assert f_u(lambda x: np.full(x.shape[0], 3.0), X0, X0, r, P3, Q) == pytest.approx(3.0)
    b = np.array([0.5, 2.0])
    x = X0 + np.array([0.03, -0.02])
    assert f_u(lambda y: y @ b, x, X0, r, P3, Q) == pytest.approx(x @ b, abs=1e-14)
    val = f_u(fn.norm_squared(2).value, X0, X0, r, P3, Q)
    assert val == pytest.approx(1 + 2 * r**2, abs=1e-14)
    # brute-force sampling of the ball B(x0, 2r)
    mc = monte_carlo_rule(2, 400_000, seed=3)
    brute = float(mc.weights @ fn.norm_squared(2).value(X0 + 2 * r * mc.nodes))
    assert brute == pytest.approx(1 + 2 * r**2, abs=2e-5)


def test_sample_points_match_ellipsoid_map():
    P = make_params(2, 2.0, np.sqrt(8.0), "below")
    Q = product_rule(2, 2, 8)
    Z = np.array([[0.0, 0.0], [0.6, -0.8], [0.3, 0.1]])
    pts = sample_points(X0, 0.1, P, Z, Q.nodes)
    from ellip_tow.geometry import ellipsoid_map

    for k, z in enumerate(Z):
        E = sampling_ellipsoid(X0, X0 + 0.1 * z, 0.1, P)
        np.testing.assert_allclose(pts[k], ellipsoid_map(Q.nodes, E), atol=1e-15)


def test_S_r_constant_and_linear():
    assert S_r(lambda x: np.full(x.shape[0], -2.5), X0, 0.1, P3).value == pytest.approx(-2.5, abs=1e-14)
    b = np.array([0.7, -1.1])
    res = S_r(lambda x: x @ b, X0, 0.1, P3)
    assert res.value == pytest.approx(X0 @ b, abs=1e-14)
    np.testing.assert_allclose(res.z_max, b / np.linalg.norm(b), atol=0.05)
    np.testing.assert_allclose(res.z_min, -res.z_max, atol=1e-12)


def test_S_r_norm_squared_against_dense_search():
    u = fn.norm_squared(2)
    for r in (0.05, 0.025):
        res = S_r(u.value, X0, r, P3, grad=u.gradient(X0))
        assert (res.value - 1.0) / r**2 == pytest.approx(3.0, abs=1e-9)
    # oracle: 10^4 candidate shifts in the closed ball, exact ball averages
    rng = np.random.default_rng(0)
    th = rng.uniform(0, 2 * np.pi, 10_000)
    rad = np.sqrt(rng.random(10_000))
    rad[:2000] = 1.0
    Z = np.stack([rad * np.cos(th), rad * np.sin(th)], 1)
    r = 0.05
    vals = np.sum((X0 + r * Z) ** 2, 1) + 2 * r**2
    brute = 0.5 * (vals.min() + vals.max())
    res = S_r(u.value, X0, r, P3, grad=u.gradient(X0))
    assert res.value == pytest.approx(brute, abs=1e-6)


def _bumps(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.5, 1.5, (5, 2))
    a = rng.normal(size=5)
    return lambda x: np.sum(a * np.exp(-np.sum((x[:, None, :] - c) ** 2, -1)), -1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.2), st.floats(-5, 5))
def test_S_r_monotone_shift_and_bounds(seed, r, c):
    u = _bumps(seed)
    v = _bumps(seed + 1)
    w = lambda x: u(x) + v(x) ** 2  # noqa: E731  w >= u everywhere
    P = make_params(2, 2.5, None, "below")
    Q = product_rule(2, 2, 8)
    S = search_rule(2, 32, (0.5, 1.0))
    x0 = np.array([0.2, -0.1])
    su = S_r(u, x0, r, P, Q, S).value
    assert S_r(w, x0, r, P, Q, S).value >= su - 1e-14
    assert S_r(lambda x: u(x) + c, x0, r, P, Q, S).value == pytest.approx(su + c, abs=1e-12)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((20_000, 2))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    R = P.reach * r
    pts = x0 + R * g * np.sqrt(rng.random((20_000, 1)))
    pts = np.concatenate([pts, x0 + R * g])
    uv = u(pts)
    # sampled inf/sup can only be less extreme than the true ones; allow slack
    slack = 0.05 * (uv.max() - uv.min()) + 1e-12
    assert uv.min() - slack <= su <= uv.max() + slack


# reference operators ----------------------------------------------------------------


def test_p_laplacian_examples():
    assert p_laplacian(fn.linear([1.0, 2.0]), X0, 3.0) == 0.0
    f = fn.norm_squared(2)
    assert p_laplacian(f, X0, 3.0) == pytest.approx(12.0, rel=1e-14)
    assert divergence_p_laplacian(f, X0, 3.0) == pytest.approx(12.0, rel=1e-10)
    for p, N in [(3.0, 2), (2.0, 3), (3.0, 3), (5.0, 2), (1.5, 3)]:
        v = fn.RadialPHarmonic(p, N).as_test_function()
        x = np.linspace(0.7, 1.9, N)
        assert abs(p_laplacian(v, x, p)) <= 1e-8


def test_singular_gradient_errors():
    f = fn.norm_squared(2)
    for op in (infinity_laplacian, one_laplacian):
        with pytest.raises(SingularGradientError):
            op(f, np.zeros(2))
    with pytest.raises(SingularGradientError):
        p_laplacian(f, np.zeros(2), 3.0)
    with pytest.raises(SingularGradientError):
        expansion_residual(f, np.zeros(2), 0.1, P3)


def _rand_fn(rng, N):
    A = rng.normal(size=(N, N))
    if rng.random() < 0.5:
        return fn.quadratic(A + A.T, rng.normal(size=N), rng.normal())
    return fn.exp_mix(rng.normal(size=N))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.floats(1.05, 8.0))
def test_divergence_form_matches(seed, N, p):
    rng = np.random.default_rng(seed)
    f = _rand_fn(rng, N)
    x = rng.uniform(-1, 1, N)
    if np.linalg.norm(f.gradient(x)) < 1e-2:
        return
    ref = p_laplacian(f, x, p)
    g = np.linalg.norm(f.gradient(x))
    H = np.abs(f.hessian(x)).sum()
    scale = g ** (p - 2) * H * (1 + abs(p - 2))
    assert abs(divergence_p_laplacian(f, x, p) - ref) <= 1e-9 * scale


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.floats(1.01, 20.0))
def test_mv2_identity(seed, N, p):
    rng = np.random.default_rng(seed)
    f = _rand_fn(rng, N)
    x = rng.uniform(-1, 1, N)
    if np.linalg.norm(f.gradient(x)) < 1e-3:
        return
    a, b = p_laplacian(f, x, p), p_laplacian_mv2(f, x, p)
    g = np.linalg.norm(f.gradient(x))
    scale = g ** (p - 2) * np.abs(f.hessian(x)).sum() * (1 + p)
    assert abs(a - b) <= 1e-12 * scale


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.lists(st.floats(1.01, 20.0), min_size=3, max_size=3, unique=True))
def test_three_exponent_identity(seed, N, ps):
    p, q, s = sorted(ps)
    if q - p < 1e-6 or s - q < 1e-6:
        return
    rng = np.random.default_rng(seed)
    f = _rand_fn(rng, N)
    x = rng.uniform(-1, 1, N)
    if np.linalg.norm(f.gradient(x)) < 1e-3:
        return
    lhs = (s - q) * normalized_p_laplacian(f, x, p)
    rhs = (s - p) * normalized_p_laplacian(f, x, q) + (p - q) * normalized_p_laplacian(f, x, s)
    scale = np.abs(f.hessian(x)).sum() * s * s
    assert abs(lhs - rhs) <= 1e-12 * scale


# expansion -------------------------------------------------------------------------


def test_predicted_increment_closed_form():
    f = fn.norm_squared(2)
    assert predicted_increment(f, X0, 0.1, P3) == pytest.approx(3 * 0.01, rel=1e-14)
    Pd = make_params(2, 3.0, branch="degenerate")
    # r^2 / (2(p-1)) * normalized p-Laplacian = r^2 / 4 * 6
    assert predicted_increment(f, X0, 0.1, Pd) == pytest.approx(0.01 * 6 / 4, rel=1e-14)


def test_residual_linear_is_zero():
    for b in ("below", "above", "degenerate"):
        P = make_params(2, 3.0, None, b)
        assert abs(expansion_residual(fn.linear([0.4, -1.0], 2.0), X0, 0.1, P)) <= 1e-14


@pytest.mark.parametrize("branch", ["below", "above", "degenerate"])
def test_residual_quadratic_is_cubic(branch):
    P = make_params(2, 3.0, 2.0 if branch == "above" else None, branch)
    f = fn.quadratic(np.array([[2.0, 0.7], [0.7, -1.0]]), [0.3, 0.5])
    x0 = np.array([1.0, 0.2])
    K = max(abs(expansion_residual(f, x0, r, P)) / r**3 for r in (0.1, 0.05, 0.025))
    r = 0.0125
    assert abs(expansion_residual(f, x0, r, P)) <= 1.5 * K * r**3


def test_residual_radial_p_harmonic_is_small_o_r2():
    P = make_params(2, 3.0, 2.0, "above")
    v = fn.RadialPHarmonic(3.0, 2).as_test_function()
    x0 = np.array([1.5, 0.0])
    m = [abs(expansion_residual(v, x0, r, P)) / r**2 for r in (0.1, 0.05, 0.025)]
    assert m[1] < m[0] and m[2] < m[1]
