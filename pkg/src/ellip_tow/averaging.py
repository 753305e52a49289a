"""Ellipsoid averages, the superposed operator S_r and reference operators.

Notation: for a shift ``z`` in the closed unit ball the averaged value is

    f_u(x0 + r z) = sum_i w_i u(x0 + r z + gamma r (y_i + c <y_i, z> z)),

with ``c = a - 1`` (``-1`` in the degenerate branch), and

    S_r u(x0) = (min_z f_u + max_z f_u) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SingularGradientError
from .functions import SmoothTestFunction
from .geometry import Ellipsoid, ellipsoid_map, sampling_ellipsoid
from .quadrature import QuadratureRule, SearchRule, product_rule, search_rule
from .scaling import Params

Oracle = Callable[[np.ndarray], np.ndarray]


def avg_over_ellipsoid(u: Oracle, E: Ellipsoid, Q: QuadratureRule) -> float:
    pts = ellipsoid_map(Q.nodes, E)
    return float(Q.weights @ np.asarray(u(pts), dtype=float))


def f_u(u: Oracle, x: np.ndarray, x0: np.ndarray, r: float, P: Params, Q: QuadratureRule) -> float:
    return avg_over_ellipsoid(u, sampling_ellipsoid(x0, x, r, P), Q)


def sample_points(x0: np.ndarray, r: float, P: Params, Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Quadrature points for every shift: array of shape (len(Z), len(Y), N)."""
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    yz = Y @ Z.T  # (Q, C)
    deform = P.aspect_slope * yz.T[:, :, None] * Z[:, None, :]
    return np.asarray(x0, dtype=float) + r * Z[:, None, :] + P.gamma * r * (Y[None, :, :] + deform)


@dataclass(frozen=True)
class SearchResult:
    value: float
    f_min: float
    f_max: float
    z_min: np.ndarray
    z_max: np.ndarray
    values: np.ndarray
    candidates: np.ndarray


def first_extremum(values: np.ndarray, mode: str, rel_tol: float = 1e-12) -> int:
    """Index of the first candidate within a relative tolerance of the extremum."""
    ext = values.min() if mode == "min" else values.max()
    tol = rel_tol * max(1.0, abs(ext))
    hit = values <= ext + tol if mode == "min" else values >= ext - tol
    return int(np.argmax(hit))


def S_r(
    u: Oracle,
    x0: np.ndarray,
    r: float,
    P: Params,
    Q: QuadratureRule | None = None,
    S: SearchRule | None = None,
    grad: np.ndarray | None = None,
) -> SearchResult:
    """Evaluate S_r u(x0) over a discrete search set.

    If ``grad`` is given and nonzero, the directions +-grad/|grad| are added to
    the search set, where the extremal shifts concentrate.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    x0 = np.asarray(x0, dtype=float)
    Q = Q or product_rule(P.N, 4, 16 if P.N == 2 else 64)
    S = S or search_rule(P.N)
    if grad is not None and np.linalg.norm(grad) > 0:
        S = S.with_directions(np.asarray(grad, dtype=float))
    Z = S.candidates()
    pts = sample_points(x0, r, P, Z, Q.nodes)
    vals = np.asarray(u(pts.reshape(-1, P.N)), dtype=float).reshape(len(Z), len(Q)) @ Q.weights
    i_min = first_extremum(vals, "min")
    i_max = first_extremum(vals, "max")
    f_min, f_max = float(vals[i_min]), float(vals[i_max])
    return SearchResult(0.5 * (f_min + f_max), f_min, f_max, Z[i_min], Z[i_max], vals, Z)


# Reference differential operators ------------------------------------------------


def _derivs(f: SmoothTestFunction, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    x = np.asarray(x, dtype=float)
    g = np.asarray(f.gradient(x), dtype=float)
    H = np.asarray(f.hessian(x), dtype=float)
    ng = float(np.linalg.norm(g))
    return g, H, ng


def laplacian(f: SmoothTestFunction, x: np.ndarray) -> float:
    return float(np.trace(np.asarray(f.hessian(np.asarray(x, dtype=float)))))


def infinity_laplacian(f: SmoothTestFunction, x: np.ndarray) -> float:
    """Normalized: <H g/|g|, g/|g|>."""
    g, H, ng = _derivs(f, x)
    if ng == 0.0:
        raise SingularGradientError("gradient vanishes")
    e = g / ng
    return float(e @ H @ e)


def one_laplacian(f: SmoothTestFunction, x: np.ndarray) -> float:
    """|g|^{-1} (Delta f - Delta_inf f)."""
    g, H, ng = _derivs(f, x)
    if ng == 0.0:
        raise SingularGradientError("gradient vanishes")
    e = g / ng
    return float((np.trace(H) - e @ H @ e) / ng)


def p_laplacian(f: SmoothTestFunction, x: np.ndarray, p: float) -> float:
    """|g|^{p-2} (Delta f + (p-2) Delta_inf f)."""
    g, H, ng = _derivs(f, x)
    if ng == 0.0:
        raise SingularGradientError("gradient vanishes")
    e = g / ng
    return float(ng ** (p - 2.0) * (np.trace(H) + (p - 2.0) * (e @ H @ e)))


def p_laplacian_mv2(f: SmoothTestFunction, x: np.ndarray, p: float) -> float:
    """|g|^{p-2} (|g| Delta_1 f + (p-1) Delta_inf f)."""
    g, H, ng = _derivs(f, x)
    if ng == 0.0:
        raise SingularGradientError("gradient vanishes")
    return float(ng ** (p - 2.0) * (ng * one_laplacian(f, x) + (p - 1.0) * infinity_laplacian(f, x)))


def normalized_p_laplacian(f: SmoothTestFunction, x: np.ndarray, p: float) -> float:
    """|g|^{2-p} Delta_p f = Delta f + (p-2) Delta_inf f."""
    g, H, ng = _derivs(f, x)
    if ng == 0.0:
        raise SingularGradientError("gradient vanishes")
    e = g / ng
    return float(np.trace(H) + (p - 2.0) * (e @ H @ e))


def predicted_increment(f: SmoothTestFunction, x0: np.ndarray, r: float, P: Params) -> float:
    """gamma^2 r^2 / (2(N+2)) |grad f|^{2-p} Delta_p f(x0).

    In the degenerate branch gamma^2 = (N+2)/(p-1), so the same formula gives
    r^2 / (2(p-1)) |grad f|^{2-p} Delta_p f.
    """
    return P.gamma**2 * r**2 / (2.0 * (P.N + 2)) * normalized_p_laplacian(f, x0, P.p)


def expansion_residual(
    f: SmoothTestFunction,
    x0: np.ndarray,
    r: float,
    P: Params,
    Q: QuadratureRule | None = None,
    S: SearchRule | None = None,
) -> float:
    x0 = np.asarray(x0, dtype=float)
    pred = predicted_increment(f, x0, r, P)
    g = np.asarray(f.gradient(x0), dtype=float)
    res = S_r(f.value, x0, r, P, Q, S, grad=g)
    return float(res.value - float(f.value(x0)) - pred)


def divergence_p_laplacian(
    f: SmoothTestFunction, x: np.ndarray, p: float, h: float | None = None, levels: int = 4
) -> float:
    """div(|grad f|^{p-2} grad f) by Richardson-extrapolated central differences.

    Differentiates the flux field built from the analytic gradient, so the
    result does not depend on ``p_laplacian``. The default step is
    ``min(0.05, 0.2 |g| / |grad g|)``, where ``|grad g|`` is estimated from
    gradient differences. This keeps the stencil inside the region where the
    flux is smooth when |g| is small.
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    if h is None:
        g0 = np.asarray(f.gradient(x), dtype=float)
        d = 1e-4
        J = np.stack([(np.asarray(f.gradient(x + d * e)) - np.asarray(f.gradient(x - d * e))) / (2 * d) for e in np.eye(N)])
        jn = float(np.linalg.norm(J, 2))
        h = 0.05 if jn == 0.0 else min(0.05, 0.2 * float(np.linalg.norm(g0)) / jn)

    def flux(y: np.ndarray) -> np.ndarray:
        g = np.asarray(f.gradient(y), dtype=float)
        ng = np.linalg.norm(g)
        if ng == 0.0:
            raise SingularGradientError("gradient vanishes")
        return ng ** (p - 2.0) * g

    def central(step: float) -> float:
        tot = 0.0
        for i in range(N):
            e = np.zeros(N)
            e[i] = step
            tot += (flux(x + e)[i] - flux(x - e)[i]) / (2.0 * step)
        return tot

    # Neville table on h^2: each column removes one more even power of h
    T = [central(h / 2**k) for k in range(levels)]
    for j in range(1, levels):
        fac = 4.0**j
        T = [(fac * T[k + 1] - T[k]) / (fac - 1.0) for k in range(len(T) - 1)]
    return float(T[0])
