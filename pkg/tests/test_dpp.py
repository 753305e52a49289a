from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ellip_tow import functions as fn
from ellip_tow.dpp import (
    _SHIFT_VAR,
    DppOperator,
    GridField,
    Lattice,
    SolverConfig,
    _interp_cov,
    _matched_points,
    _multilinear,
    _spread,
    apply_T,
    boundary_modulus,
    eval_field,
    solve_dpp,
    with_config,
)
from ellip_tow.errors import ConfigurationError, OutOfRangeError
from ellip_tow.geometry import annulus, ball, box, sampling_ellipsoid
from ellip_tow.quadrature import product_rule
from ellip_tow.scaling import make_params

P3 = make_params(2, 3.0, 2.0, "above")
PB = make_params(2, 2.0, np.sqrt(8.0), "below")
BALL = ball([0.0, 0.0], 1.0)


def _const(c):
    return lambda x: np.full(np.asarray(x).shape[:-1], float(c))


# configuration ---------------------------------------------------------------------


def test_solver_config_defaults_and_validation():
    C = SolverConfig(0.2)
    assert C.h == pytest.approx(0.025)
    for kw in ({"h": 0.03}, {"tol": 0.0}, {"init": "max"}, {"stencil": "cubic"}, {"max_iter": 0}):
        with pytest.raises(ConfigurationError):
            SolverConfig(0.2, **kw)
    with pytest.raises(ConfigurationError):
        SolverConfig(1.0)
    assert with_config(C, tol=1e-3).tol == 1e-3
    assert C.to_dict()["stencil"] == "moment"


def test_lattice_covering():
    L = Lattice.covering(np.array([-1.0, -0.5]), np.array([1.0, 0.5]), 0.25)
    assert np.all(L.origin <= [-1.0, -0.5]) and np.all(L.upper >= [1.0, 0.5])
    assert L.coords().shape == (L.size, 2)
    assert np.allclose(L.origin / 0.25, np.round(L.origin / 0.25))


# stencils --------------------------------------------------------------------------


def _moments(corners, w):
    m = np.einsum("mk,mkn->mn", w, corners)
    d = corners - m[:, None, :]
    return m, np.einsum("mk,mki,mkj->mij", w, d, d)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 3), arrays(float, (16, 3), elements=st.floats(-6, 6)))
def test_spread_moments(N, off):
    off = off[:, :N]
    strides = np.array([1000, 1], dtype=np.int64) if N == 2 else np.array([10**6, 1000, 1], dtype=np.int64)
    flats, w, corners = _spread(off, strides)
    assert w.min() >= 0
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-14)
    np.testing.assert_array_equal(flats, corners @ strides)
    m, cov = _moments(corners.astype(float), w)
    np.testing.assert_allclose(m, off, atol=1e-12)
    np.testing.assert_allclose(cov, np.broadcast_to(_SHIFT_VAR * np.eye(N), cov.shape), atol=1e-12)


def test_spread_rejects_high_dimension():
    with pytest.raises(ConfigurationError):
        _spread(np.zeros((1, 4)), np.ones(4, dtype=np.int64))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (8, 2), elements=st.floats(-5, 5)))
def test_multilinear_reproduces_mean(off):
    _, w, corners = _multilinear(off, np.array([100, 1], dtype=np.int64))
    assert w.min() >= 0
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.einsum("mk,mkn->mn", w, corners), off, atol=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 0.6, 1.8])
def test_matched_points_hit_target(alpha):
    Q = product_rule(2, 2, 8)
    nu = np.array([0.6, 0.8])
    scale = 16.0
    target = scale**2 * (np.eye(2) + (alpha**2 - 1) * np.outer(nu, nu)) / 4 - _SHIFT_VAR * np.eye(2)
    pts = _matched_points(Q.nodes, Q.weights, target)
    assert pts is not None
    np.testing.assert_allclose(_interp_cov(pts, Q.weights), target, atol=1e-10 * np.abs(target).max())
    np.testing.assert_allclose(Q.weights @ pts, 0.0, atol=1e-12)


def test_matched_points_flat_target_unavailable():
    Q = product_rule(2, 2, 8)
    target = np.diag([4.0, -0.1])
    assert _matched_points(Q.nodes, Q.weights, target) is None


def _exact_candidates(op, A, b, x):
    """min/max over shifts of exact ellipsoid averages of a quadratic."""
    P, eps = op.P, op.C.eps
    vals = []
    for z in op.Z:
        E = sampling_ellipsoid(x, x + eps * z, eps, P)
        nu = E.orientation
        y = x + eps * z
        base = 0.5 * y @ A @ y + b @ y
        tr = np.trace(A) + (E.aspect**2 - 1) * (nu @ A @ nu)
        vals.append(base + 0.5 * E.radius**2 * tr / (P.N + 2))
    return min(vals), max(vals)


@pytest.mark.parametrize("P", [P3, PB], ids=["a=1", "a<1"])
def test_moment_stencil_exact_on_quadratics(P):
    A = np.array([[1.2, 0.4], [0.4, -0.7]])
    b = np.array([0.3, -0.2])
    q = fn.quadratic(A, b)
    C = SolverConfig(0.2, n_directions=16)
    op = DppOperator(BALL, P, q.value, C)
    assert op.stencil == "moment"
    u = q.value(op.lattice.coords())
    ext = op.extrema(u)
    coords = op.lattice.coords()[op.interior]
    rng = np.random.default_rng(0)
    for k in rng.choice(np.flatnonzero(op.d == 1.0), 25, replace=False):
        lo, hi = _exact_candidates(op, A, b, coords[k])
        assert ext["vmin"][k] == pytest.approx(lo, abs=1e-12)
        assert ext["vmax"][k] == pytest.approx(hi, abs=1e-12)
    lin = DppOperator(BALL, P, q.value, with_config(C, stencil="linear"))
    el = lin.extrema(u)
    lo, hi = _exact_candidates(lin, A, b, coords[k])
    assert abs(el["vmax"][k] - hi) > 1e-6


def test_flat_ellipsoid_falls_back_to_linear(caplog):
    Pd = make_params(2, 3.0, branch="degenerate")
    op = DppOperator(BALL, Pd, _const(0.0), SolverConfig(0.2, n_directions=16))
    assert op.stencil == "linear"
    assert "multilinear" in caplog.text


# eval_field ------------------------------------------------------------------------


def _linear_field():
    L = Lattice.covering(np.array([-1.5, -1.5]), np.array([1.5, 1.5]), 0.1)
    lin = fn.linear([0.5, -1.0], 0.2)
    F = fn.norm_squared(2).value
    return GridField(L, lin.value(L.coords()).reshape(L.shape), F), lin, F


def test_eval_field_examples():
    W, lin, F = _linear_field()
    out = np.array([1.2, 0.3])
    assert eval_field(W, BALL, out) == F(out)
    node = W.lattice.coords()[W.lattice.size // 2 + 3]
    assert eval_field(W, BALL, node) == pytest.approx(W.values.ravel()[W.lattice.size // 2 + 3], abs=1e-15)
    mid = node + 0.05
    assert eval_field(W, BALL, mid) == pytest.approx(lin.value(mid), abs=1e-14)
    with pytest.raises(OutOfRangeError):
        W.interpolate(np.array([3.0, 0.0]))


# T_eps and the solver --------------------------------------------------------------


@pytest.fixture(scope="module")
def small_op():
    F = fn.exp_mix([0.3, -0.2])
    return DppOperator(BALL, P3, F.value, SolverConfig(0.2, n_directions=32)), F


def test_apply_T_constant_fixed_point():
    C = SolverConfig(0.2, n_directions=16)
    op = DppOperator(BALL, P3, _const(2.0), C)
    W = op.field(np.full(op.lattice.size, 2.0))
    W2 = apply_T(W, BALL, C, P3, op)
    np.testing.assert_allclose(W2.values, 2.0, atol=1e-14)


def test_apply_T_monotone_and_bounded(small_op):
    op, F = small_op
    rng = np.random.default_rng(5)
    lo, hi = op.F_nodes.min(), op.F_nodes.max()
    u = op.initial("min")
    v = u.copy()
    v[op.interior] += rng.random(op.interior.size) * (hi - lo)
    Tu, _, _ = op.apply(u)
    Tv, _, _ = op.apply(v)
    assert np.all(Tv >= Tu - 1e-14)
    assert Tu.max() <= hi + 1e-14 and Tu.min() >= lo - 1e-14


def test_apply_T_rejects_eps_mismatch(small_op):
    op, _ = small_op
    W = op.field(op.initial("min"))
    with pytest.raises(ConfigurationError):
        apply_T(W, BALL, SolverConfig(0.1), P3)


def test_constant_data_solves_exactly():
    W = solve_dpp(_const(5.0), BALL, SolverConfig(0.2, n_directions=16), P3)
    assert np.abs(W.values - 5.0).max() <= 1e-12
    assert W.info.iterations <= 2 and W.info.converged


def test_affine_data_is_a_fixed_point():
    lin = fn.linear([0.7, -0.3], 1.0)
    W = solve_dpp(lin.value, BALL, SolverConfig(0.2, n_directions=16, tol=1e-11), P3)
    assert np.abs(W.values.ravel() - lin.value(W.lattice.coords())).max() <= 1e-8


def test_solver_properties(small_op):
    op, F = small_op
    W = op.solve()
    info = W.info
    assert info.converged
    assert np.abs(W.values).max() <= np.abs(op.F_nodes).max() + 1e-14
    coords = W.lattice.coords()
    ext = np.ones(op.lattice.size, dtype=bool)
    ext[op.interior] = False
    np.testing.assert_array_equal(W.values.ravel()[ext], F.value(coords[ext]))
    # residual: one more sweep moves the field by less than tol
    _, dmax, _ = op.apply(W.values.ravel())
    assert dmax < info.tol
    # fixed point reached from the data itself as well
    W2 = op.solve(init="data")
    assert np.abs(W2.values - W.values).max() <= 10 * info.tol


def test_solution_monotone_in_data():
    C = SolverConfig(0.2, n_directions=16, tol=1e-10)
    F = fn.exp_mix([0.3, -0.2]).value
    G = lambda x: F(x) + 0.1 * np.sin(3 * x[..., 0]) ** 2  # noqa: E731
    W = solve_dpp(F, BALL, C, P3)
    V = solve_dpp(G, BALL, C, P3)
    assert np.all(V.values >= W.values - 1e-9)


def test_box_and_annulus_domains_solve():
    C = SolverConfig(0.2, n_directions=16, tol=1e-8)
    v = fn.RadialPHarmonic(3.0, 2)
    W = solve_dpp(v.value, annulus([0.0, 0.0], 1.0, 2.0), C, P3)
    assert W.info.converged
    W = solve_dpp(fn.linear([1.0, 0.0]).value, box([0.0, 0.0], [1.0, 1.0]), C, PB)
    assert W.info.converged


def test_boundary_modulus_table(small_op):
    op, _ = small_op
    W = op.solve()
    rows = boundary_modulus(W, BALL, [0.05, 0.2])
    assert [r["delta"] for r in rows] == [0.05, 0.2]
    assert rows[0]["oscillation"] <= rows[1]["oscillation"]


def test_domain_params_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        DppOperator(ball([0.0, 0.0, 0.0], 1.0), P3, _const(0.0), SolverConfig(0.2))
