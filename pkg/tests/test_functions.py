from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellip_tow import functions as fn
from ellip_tow.averaging import p_laplacian
from ellip_tow.errors import ConfigurationError


def _fd_grad(f, x, h):
    N = x.size
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(N)])


def _fd_hess(g, x, h):
    N = x.size
    return np.array([(g(x + h * e) - g(x - h * e)) / (2 * h) for e in np.eye(N)])


_FUNCS = [
    fn.linear([1.0, -2.0, 0.5]),
    fn.quadratic(np.array([[1.0, 0.3, 0.0], [0.3, -2.0, 0.1], [0.0, 0.1, 0.5]]), [0.1, 0.2, 0.3], 1.0),
    fn.norm_squared(3),
    fn.exp_mix([0.3, -0.2, 0.4]),
    fn.RadialPHarmonic(2.0, 3).as_test_function(),
    fn.RadialPHarmonic(3.0, 3).as_test_function(),
    fn.RadialPHarmonic(5.0, 3, (0.1, 0.0, -0.2)).as_test_function(),
]


@pytest.mark.parametrize("f", _FUNCS, ids=lambda f: f.name)
def test_derivatives_match_central_differences(f):
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(0.5, 1.5, 3) * rng.choice([-1, 1], 3)
        errs = []
        for h in (1e-2, 5e-3):
            eg = np.abs(_fd_grad(f.value, x, h) - f.gradient(x)).max()
            eh = np.abs(_fd_hess(f.gradient, x, h) - f.hessian(x)).max()
            errs.append((eg, eh))
        # O(h^2): halving h divides the error by about four (or it is at rounding level)
        for k in range(2):
            assert errs[1][k] <= 0.3 * errs[0][k] + 1e-9


def test_vectorized_shapes():
    X = np.zeros((4, 5, 2)) + 0.7
    for f in (fn.constant(1.0), fn.linear([1, 2]), fn.norm_squared(2), fn.exp_mix([0.1, 0.2])):
        assert f.value(X).shape == (4, 5)
        assert f.gradient(X).shape == (4, 5, 2)
        assert f.hessian(X).shape == (4, 5, 2, 2)


@pytest.mark.parametrize("p,N", [(2.0, 2), (3.0, 2), (2.0, 3), (3.0, 3), (1.5, 2), (7.0, 3)])
def test_radial_profile_increasing(p, N):
    v = fn.RadialPHarmonic(p, N)
    t = np.linspace(0.1, 10.0, 500)
    assert np.all(np.diff(v.v(t)) > 0)


def test_radial_profile_values():
    assert fn.RadialPHarmonic(2.0, 3).v(2.0) == pytest.approx(-0.5)
    assert fn.RadialPHarmonic(3.0, 2).v(4.0) == pytest.approx(2.0)
    assert fn.RadialPHarmonic(2.0, 2).v(np.e) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.1, 10.0), st.integers(2, 4), st.floats(0.3, 3.0), st.floats(0, 2 * np.pi))
def test_radial_is_p_harmonic(p, N, t, th):
    v = fn.RadialPHarmonic(p, N).as_test_function()
    x = np.zeros(N)
    x[0], x[1] = t * np.cos(th), t * np.sin(th)
    g = np.linalg.norm(v.gradient(x))
    assert abs(p_laplacian(v, x, p)) <= 1e-8 * max(1.0, g ** (p - 2) * np.abs(v.hessian(x)).sum())


def test_t_min_clamp():
    v = fn.RadialPHarmonic(3.0, 2, t_min=0.5)
    assert v.value(np.zeros(2)) == v.v(0.5)
    assert v.value(np.array([2.0, 0.0])) == pytest.approx(fn.RadialPHarmonic(3.0, 2).v(2.0))


def test_registry():
    f = fn.function_from_spec({"name": "radial-p-harmonic"}, 2, 3.0)
    assert f.spec["p"] == 3.0
    assert fn.function_from_spec({"name": "constant", "c": 4.0}, 2).value(np.zeros(2)) == 4.0
    with pytest.raises(ConfigurationError):
        fn.function_from_spec({"name": "radial-p-harmonic"}, 2)
    with pytest.raises(ConfigurationError):
        fn.function_from_spec({"name": "nope"}, 2)
    d = fn.function_from_spec({"name": "distance-to-point", "point": [1.0, 0.0]}, 2)
    assert d.value(np.array([0.0, 0.0])) == -1.0
    with pytest.raises(ConfigurationError):
        d.gradient(np.zeros(2))
