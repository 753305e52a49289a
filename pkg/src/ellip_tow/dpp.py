"""Lattice fields and the monotone fixed-point solver of the scale-eps problem

    u = d_eps S_eps u + (1 - d_eps) F.

Discretization
--------------
Values live on a uniform lattice covering the domain box inflated by
``eps * (1 + gamma * max(a, 1)) + 2h``. Lattice nodes outside the domain hold
``F`` exactly. At an interior node ``x`` each candidate shift ``z`` contributes

    K_z u(x) = I_z[A_z u](x + eps z),

where ``A_z u`` is the quadrature average over the sampling ellipsoid of the
shift, read from the lattice, and ``I_z`` carries the shifted value back to
lattice nodes. Shifts with the same ellipsoid shape share one ``A_z u``
evaluation (for a = 1 every shift samples the same ball).

Two stencil families are available:

``moment`` (default)
    ``I_z`` is a positive stencil with exact mean ``eps z / h`` and a fixed
    per-axis variance of 1/4 cell^2; the ellipsoid nodes are rescaled so that
    their multilinear stencil plus that variance reproduces the exact second
    moments of the continuous average. The composed stencil is then exact on
    quadratics, so the lattice adds no O(h^2) diffusion of its own.
``linear``
    Plain multilinear interpolation for both steps. Each interpolation adds a
    direction-dependent diffusion of order h^2, which at a fixed ratio h/eps
    does not vanish as eps -> 0.

All weights are nonnegative and sum to one, so the discrete operator is
monotone, commutes with constants and is exact on affine data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigurationError, MonotonicityError, OutOfRangeError
from .geometry import Domain
from .quadrature import QuadratureRule, SearchRule, product_rule, search_rule
from .scaling import Params

log = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], np.ndarray]
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    eps: float
    h: float | None = None
    tol: float | None = None
    max_iter: int = 100_000
    n_radial: int = 2
    n_sphere: int | None = None
    n_directions: int | None = None
    radial_levels: tuple[float, ...] = (1.0,)
    include_center: bool = True
    init: str = "min"
    stencil: str = "moment"

    def __post_init__(self) -> None:
        if not 0 < self.eps < 1:
            raise ConfigurationError("eps must lie in (0, 1)")
        if self.h is None:
            object.__setattr__(self, "h", self.eps / 8.0)
        if not 0 < self.h <= self.eps / 8.0 * (1 + 1e-12):
            raise ConfigurationError("lattice spacing must satisfy 0 < h <= eps/8")
        if self.tol is not None and not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.init not in ("min", "data"):
            raise ConfigurationError("init must be 'min' or 'data'")
        if self.stencil not in ("moment", "linear"):
            raise ConfigurationError("stencil must be 'moment' or 'linear'")
        object.__setattr__(self, "radial_levels", tuple(float(t) for t in self.radial_levels))

    def quadrature(self, N: int) -> QuadratureRule:
        return product_rule(N, self.n_radial, self.n_sphere if self.n_sphere else (8 if N == 2 else 16))

    def search(self, N: int) -> SearchRule:
        return search_rule(N, self.n_directions, self.radial_levels, self.include_center)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "h": self.h,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "n_radial": self.n_radial,
            "n_sphere": self.n_sphere,
            "n_directions": self.n_directions,
            "radial_levels": list(self.radial_levels),
            "include_center": self.include_center,
            "init": self.init,
            "stencil": self.stencil,
        }


@dataclass(frozen=True)
class Lattice:
    origin: np.ndarray
    h: float
    shape: tuple[int, ...]

    @property
    def N(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self) -> np.ndarray:
        s = np.ones(self.N, dtype=np.int64)
        for d in range(self.N - 2, -1, -1):
            s[d] = s[d + 1] * self.shape[d + 1]
        return s

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * (np.asarray(self.shape) - 1)

    def axes(self) -> list[np.ndarray]:
        return [self.origin[d] + self.h * np.arange(self.shape[d]) for d in range(self.N)]

    def coords(self) -> np.ndarray:
        """All node coordinates, shape (size, N), C order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @classmethod
    def covering(cls, lo: np.ndarray, hi: np.ndarray, h: float) -> "Lattice":
        """Lattice aligned to integer multiples of h covering [lo, hi]."""
        i0 = np.floor(np.asarray(lo) / h - 1e-9).astype(np.int64)
        i1 = np.ceil(np.asarray(hi) / h + 1e-9).astype(np.int64)
        return cls(i0 * h, float(h), tuple(int(n) for n in (i1 - i0 + 1)))


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = math.inf
    converged: bool = False
    tol: float = 0.0
    contraction: float = math.nan
    init: str = "min"

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
            "contraction": self.contraction,
            "init": self.init,
        }


@dataclass
class GridField:
    """Lattice values of a scale-eps field plus the data used outside the domain."""

    lattice: Lattice
    values: np.ndarray
    boundary_data: Oracle
    eps: float | None = None
    params: Params | None = None
    info: SolveInfo | None = None
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lattice.origin, self.lattice.upper

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of lattice values (no domain test)."""
        x = np.asarray(x, dtype=float)
        lat = self.lattice
        t = (x - lat.origin) / lat.h
        hi = np.asarray(lat.shape) - 1
        if np.any(t < -1e-9) or np.any(t > hi + 1e-9):
            raise OutOfRangeError("point outside the lattice box")
        t = np.clip(t, 0, hi)
        base = np.minimum(np.floor(t).astype(np.int64), np.maximum(hi - 1, 0))
        frac = t - base
        vals = self.values
        out = np.zeros(x.shape[:-1])
        for bits in range(1 << lat.N):
            idx = []
            w = np.ones(x.shape[:-1])
            for d in range(lat.N):
                if bits >> d & 1:
                    idx.append(base[..., d] + 1)
                    w = w * frac[..., d]
                else:
                    idx.append(base[..., d])
                    w = w * (1.0 - frac[..., d])
            out = out + w * vals[tuple(idx)]
        return out


def eval_field(W: GridField, D: Domain, x: np.ndarray) -> np.ndarray | float:
    """F outside the domain, multilinear interpolation inside; vectorized."""
    x = np.asarray(x, dtype=float)
    inside = D.contains(x)
    out = np.empty(x.shape[:-1])
    if np.any(~inside):
        out[~inside] = W.boundary_data(x[~inside])
    if np.any(inside):
        out[inside] = W.interpolate(x[inside])
    return float(out) if out.ndim == 0 else out


def _multilinear(off: np.ndarray, strides: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner flat offsets, weights and integer corner shifts for lattice offsets ``off`` (M, N)."""
    M, N = off.shape
    base = np.floor(off).astype(np.int64)
    frac = off - base
    flats, weights, corners = [], [], []
    for bits in range(1 << N):
        b = np.array([(bits >> d) & 1 for d in range(N)], dtype=np.int64)
        corner = base + b
        w = np.prod(np.where(b == 1, frac, 1.0 - frac), axis=1)
        flats.append(corner @ strides)
        weights.append(w)
        corners.append(corner)
    return np.stack(flats, 1), np.stack(weights, 1), np.stack(corners, 1)


# Per-axis variance of the three-point shift stencil; the largest variance
# two-point (multilinear) interpolation can produce, so it is always attainable.
_SHIFT_VAR = 0.25


def _spread(off: np.ndarray, strides: np.ndarray, var: float = _SHIFT_VAR) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positive lattice stencils with mean ``off`` and covariance ``var * I`` (N <= 3).

    Nodes are c = round(off), c +- e_i and one diagonal c + sgn(s_i) e_i + sgn(s_j) e_j
    per axis pair, with s = off - c. The diagonal carries |s_i s_j|, which
    cancels the cross moment; the axis weights then fix the mean and variance.
    """
    M, N = off.shape
    if N > 3:
        raise ConfigurationError("moment-matched shift stencils support N <= 3")
    center = np.rint(off).astype(np.int64)
    s = off - center
    sg = np.where(s >= 0, 1, -1).astype(np.int64)
    shifts: list[np.ndarray] = [np.zeros((M, N), dtype=np.int64)]
    weights: list[np.ndarray] = []
    Q = np.zeros((M, N))
    diag_w, diag_t = [], []
    for i in range(N):
        for j in range(i + 1, N):
            q = np.abs(s[:, i] * s[:, j])
            t = np.zeros((M, N), dtype=np.int64)
            t[:, i], t[:, j] = sg[:, i], sg[:, j]
            Q[:, i] += q
            Q[:, j] += q
            diag_w.append(q)
            diag_t.append(t)
    axis_w, axis_t = [], []
    for i in range(N):
        m1 = s[:, i] - sg[:, i] * Q[:, i]
        m2 = var + s[:, i] ** 2 - Q[:, i]
        for sign in (1, -1):
            t = np.zeros((M, N), dtype=np.int64)
            t[:, i] = sign
            axis_w.append((m2 + sign * m1) / 2.0)
            axis_t.append(t)
    w0 = 1.0 - sum(axis_w) - (sum(diag_w) if diag_w else 0.0)
    weights = [w0] + axis_w + diag_w
    shifts = shifts + axis_t + diag_t
    W = np.stack(weights, 1)
    if W.min() < -1e-14:
        raise ConfigurationError("shift stencil weight negative")
    W = np.maximum(W, 0.0)
    corners = np.stack([center + t for t in shifts], 1)
    return corners @ strides, W, corners


def _interp_cov(pts: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Covariance of the multilinear lattice stencil of weighted points ``pts``."""
    f = pts - np.floor(pts)
    mean = w @ pts
    cov = (pts * w[:, None]).T @ pts - np.outer(mean, mean)
    return cov + np.diag(w @ (f * (1.0 - f)))


def _matched_points(Y: np.ndarray, w: np.ndarray, target: np.ndarray, max_iter: int = 100) -> np.ndarray | None:
    """Linear image of the nodes whose multilinear stencil has covariance ``target``.

    Returns None if no positive definite node covariance achieves it.
    """
    M = (Y * w[:, None]).T @ Y
    white = Y @ np.linalg.inv(np.linalg.cholesky(M)).T
    T = target.copy()
    pts = None
    for _ in range(max_iter):
        try:
            L = np.linalg.cholesky(T)
        except np.linalg.LinAlgError:
            return None
        pts = white @ L.T
        err = target - _interp_cov(pts, w)
        if np.abs(err).max() <= 1e-13 * np.abs(target).max():
            return pts
        T = T + err
    return pts if np.abs(err).max() <= 1e-10 * np.abs(target).max() else None


class DppOperator:
    """Precomputed discrete operator T_eps for a domain, data and parameters."""

    def __init__(
        self,
        D: Domain,
        P: Params,
        F: Oracle,
        C: SolverConfig,
        lattice: Lattice | None = None,
        search: SearchRule | None = None,
        quad: QuadratureRule | None = None,
    ) -> None:
        if D.N != P.N:
            raise ConfigurationError("domain and params dimensions differ")
        self.D, self.P, self.F, self.C = D, P, F, C
        eps, h, N = C.eps, C.h, P.N
        if lattice is None:
            margin = eps * P.reach + 2.0 * h
            lattice = Lattice.covering(D.bbox[0] - margin, D.bbox[1] + margin, h)
        self.lattice = lattice
        coords = lattice.coords()
        sd = D.sd(coords)
        self.interior = np.flatnonzero(sd < 0).astype(np.int64)
        self.d = np.minimum(-sd[self.interior], eps) / eps
        self.F_nodes = np.asarray(F(coords), dtype=float)
        if not np.all(np.isfinite(self.F_nodes)):
            raise ConfigurationError("boundary data must be finite on the lattice box")
        self.F_int = self.F_nodes[self.interior].copy()
        self.quad = quad or C.quadrature(N)
        self.search = search or C.search(N)
        self._build_stencils()
        self._check_reach()
        self.gnodes = np.flatnonzero(_kernels.mark_nodes(self.interior, self.coff, lattice.size)).astype(np.int64)
        self._irun = _kernels.runs(self.interior)
        g0, _, glen = _kernels.runs(self.gnodes)
        self._grun = (g0, glen)
        self.g = np.zeros((self.n_groups, lattice.size))

    # stencil construction -------------------------------------------------------

    def _build_stencils(self) -> None:
        P, C, lat = self.P, self.C, self.lattice
        strides = lat.strides
        Z = self.search.candidates()
        self.Z = Z
        Y, w = self.quad.nodes, self.quad.weights
        slope = P.aspect_slope
        keys: dict = {}
        group_of = np.empty(len(Z), dtype=np.int64)
        group_shapes: list[tuple[float, np.ndarray]] = []
        for c, z in enumerate(Z):
            nz = float(np.linalg.norm(z))
            alpha = max(1.0 + slope * nz * nz, 0.0)
            if nz == 0.0 or alpha == 1.0:
                key = ("ball",)
                nu = np.zeros(P.N)
            else:
                nu = z / nz
                j = int(np.argmax(np.abs(nu) > 1e-12))
                nu = nu if nu[j] > 0 else -nu
                key = (round(alpha, 14),) + tuple(np.round(nu, 12))
            if key not in keys:
                keys[key] = len(group_shapes)
                group_shapes.append((alpha, nu))
            group_of[c] = keys[key]
        self.n_groups = len(group_shapes)
        self.cgrp = group_of
        scale = P.gamma * C.eps / lat.h
        Nd = P.N
        moment = C.stencil == "moment"
        group_pts = []
        for alpha, nu in group_shapes:
            target = scale**2 * (np.eye(Nd) + (alpha**2 - 1.0) * np.outer(nu, nu)) / (Nd + 2)
            pts = _matched_points(Y, w, target - _SHIFT_VAR * np.eye(Nd)) if moment else None
            if moment and pts is None:
                log.warning("moment-matched stencil unavailable for a flat sampling ellipsoid; using multilinear")
                moment = False
                break
            group_pts.append(pts)
        if not moment:
            group_pts = []
            for alpha, nu in group_shapes:
                sy = Y @ nu
                group_pts.append(scale * (Y + (alpha - 1.0) * sy[:, None] * nu))
        self.stencil = "moment" if moment else "linear"
        goff, gw, gptr, greach = [], [], [0], np.zeros((2, Nd), dtype=np.int64)
        for pts in group_pts:
            flats, wts, corners = _multilinear(pts, strides)
            wts = wts * w[:, None]
            uniq, inv = np.unique(flats.ravel(), return_inverse=True)
            acc = np.bincount(inv, weights=wts.ravel(), minlength=uniq.size)
            keep = acc > 0
            goff.append(uniq[keep])
            gw.append(acc[keep])
            gptr.append(gptr[-1] + int(keep.sum()))
            cr = corners.reshape(-1, Nd)
            greach[0] = np.minimum(greach[0], cr.min(0))
            greach[1] = np.maximum(greach[1], cr.max(0))
        self.goff = np.concatenate(goff).astype(np.int64)
        self.gw = np.concatenate(gw)
        self.gptr = np.asarray(gptr, dtype=np.int64)
        shift = _spread if moment else _multilinear
        flats, wts, corners = shift(Z * (C.eps / lat.h), strides)
        self.coff = np.ascontiguousarray(flats, dtype=np.int64)
        self.cw = np.ascontiguousarray(wts)
        cr = corners.reshape(-1, Nd)
        self._reach = (greach[0] + cr.min(0), greach[1] + cr.max(0))

    def _check_reach(self) -> None:
        lat = self.lattice
        if self.interior.size == 0:
            raise ConfigurationError("no lattice node lies inside the domain")
        idx = np.stack(np.unravel_index(self.interior, lat.shape), axis=1)
        lo = idx.min(0) + self._reach[0]
        hi = idx.max(0) + self._reach[1]
        if np.any(lo < 0) or np.any(hi > np.asarray(lat.shape) - 1):
            raise ConfigurationError("lattice box too small for the sampling reach")

    # evaluation --------------------------------------------------------------------

    def initial(self, init: str) -> np.ndarray:
        u = self.F_nodes.copy()
        if init == "min":
            u[self.interior] = self.F_nodes.min()
        return u

    def _convolve(self, u: np.ndarray) -> None:
        _kernels.convolve(u, self._grun[0], self._grun[1], self.goff, self.gw, self.gptr, self.g)

    def apply(self, u: np.ndarray, out: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
        """One Jacobi sweep; returns (new values, max |change|, min change)."""
        if out is None:
            out = u.copy()
        self._convolve(u)
        rs, rp, rl = self._irun
        dmax, dmin = _kernels.sweep(u, out, self.g, rs, rp, rl, self.d, self.F_int, self.cgrp, self.coff, self.cw)
        return out, float(dmax), float(dmin)

    def extrema(self, u: np.ndarray, rel_tol: float = 1e-12) -> dict[str, np.ndarray]:
        """Candidate extrema at every interior node (for greedy strategies)."""
        self._convolve(u)
        n = self.interior.size
        vmin, vmax = np.empty(n), np.empty(n)
        imin, imax = np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64)
        _kernels.extrema(self.g, self.interior, self.cgrp, self.coff, self.cw, rel_tol, vmin, vmax, imin, imax)
        return {"vmin": vmin, "vmax": vmax, "imin": imin, "imax": imax}

    def field(self, values: np.ndarray, info: SolveInfo | None = None) -> GridField:
        return GridField(
            self.lattice,
            values.reshape(self.lattice.shape),
            self.F,
            self.C.eps,
            self.P,
            info,
            {"solver": self.C.to_dict(), "domain": self.D.to_spec()},
        )

    def default_tol(self) -> float:
        osc = float(self.F_nodes.max() - self.F_nodes.min())
        scale = max(1.0, float(np.abs(self.F_nodes).max()))
        return max(1e-9 * osc, 1e-13 * scale)

    def solve(self, init: str | None = None, u0: np.ndarray | None = None) -> GridField:
        """Jacobi iteration to the fixed point.

        Stops once the sup-norm update is below ``tol`` and the geometric tail
        estimate ``delta * rho / (1 - rho)`` (``rho`` the observed contraction)
        is below ``tol`` as well; an update at rounding level stops at once.
        """
        init = init or self.C.init
        tol = self.C.tol if self.C.tol is not None else self.default_tol()
        u = self.initial(init) if u0 is None else np.array(u0, dtype=float).ravel()
        monotone = u0 is None and init == "min"
        scale = max(1.0, float(np.abs(self.F_nodes).max()))
        floor = 64.0 * _EPS * scale
        bound = float(np.abs(self.F_nodes).max())
        other = np.empty_like(u)
        other[:] = u
        info = SolveInfo(tol=tol, init=init if u0 is None else "custom")
        deltas: list[float] = []
        for it in range(1, self.C.max_iter + 1):
            other, dmax, dmin = self.apply(u, other)
            u, other = other, u
            deltas.append(dmax)
            if monotone and dmin < -floor:
                raise MonotonicityError(f"iterate {it} decreased by {-dmin!r}")
            info.iterations = it
            info.residual = dmax
            if dmax <= floor:
                info.converged = True
                break
            if len(deltas) >= 3 and dmax < tol:
                rho = max(deltas[-1] / deltas[-2], deltas[-2] / deltas[-3])
                info.contraction = rho
                if rho < 1.0 and dmax * rho / (1.0 - rho) < tol:
                    info.converged = True
                    break
        if not info.converged:
            log.warning("fixed-point iteration stopped at max_iter=%d with update %.3e", self.C.max_iter, info.residual)
        if np.abs(u).max() > bound * (1 + 1e-12) + floor:
            raise AssertionError("sup-norm bound |u| <= |F| violated")
        return self.field(u, info)


def apply_T(W: GridField, D: Domain, C: SolverConfig, P: Params, op: DppOperator | None = None) -> GridField:
    """One Jacobi application of the discrete operator to ``W``."""
    if W.eps is not None and abs(W.eps - C.eps) > 1e-15:
        raise ConfigurationError("field eps differs from solver eps")
    op = op or DppOperator(D, P, W.boundary_data, C, W.lattice)
    if op.lattice.shape != W.lattice.shape:
        raise ConfigurationError("field lattice does not match the operator lattice")
    u = W.values.ravel().astype(float)
    ext = np.ones(u.size, dtype=bool)
    ext[op.interior] = False
    u = u.copy()
    u[ext] = op.F_nodes[ext]
    out, _, _ = op.apply(u)
    return op.field(out)


def solve_dpp(F: Oracle, D: Domain, C: SolverConfig, P: Params) -> GridField:
    """Solve the fixed-point problem by monotone Jacobi iteration."""
    return DppOperator(D, P, F, C).solve()


def boundary_modulus(W: GridField, D: Domain, deltas: list[float]) -> list[dict]:
    """max |u(y) - F(x)| over exterior nodes x next to D and interior y with |x - y| <= delta."""
    lat = W.lattice
    coords = lat.coords()
    sd = D.sd(coords)
    vals = W.values.ravel()
    ext = np.flatnonzero((sd >= 0) & (sd <= lat.h))
    inn = np.flatnonzero(sd < 0)
    tree = cKDTree(coords[inn])
    rows = []
    for delta in deltas:
        worst = 0.0
        for chunk in np.array_split(ext, max(1, ext.size // 2000)):
            nbrs = tree.query_ball_point(coords[chunk], delta)
            for x, nb in zip(chunk, nbrs):
                if nb:
                    worst = max(worst, float(np.abs(vals[inn[nb]] - vals[x]).max()))
        rows.append({"delta": delta, "oscillation": worst})
    return rows


def with_config(C: SolverConfig, **kw) -> SolverConfig:
    return replace(C, **kw)
