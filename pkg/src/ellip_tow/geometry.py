"""Ellipsoids, position-dependent sampling ellipsoids and signed-distance domains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import gamma as gamma_fn

from .errors import ConstructionError, SamplingRadiusError
from .scaling import Params

Oracle = Callable[[np.ndarray], np.ndarray]


def unit_ball_volume(N: int) -> float:
    return math.pi ** (N / 2) / gamma_fn(N / 2 + 1)


@dataclass(frozen=True)
class Ellipsoid:
    """Open ellipsoid with semi-axis ``aspect * radius`` along ``orientation``.

    A zero orientation vector denotes the ball ``B(center, radius)``.
    """

    center: np.ndarray
    radius: float
    aspect: float
    orientation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.aspect < 0:
            raise ValueError("aspect must be nonnegative")
        n = float(np.linalg.norm(self.orientation))
        if n != 0.0 and abs(n - 1.0) > 1e-12:
            raise ValueError("orientation must be a unit vector or zero")

    @property
    def N(self) -> int:
        return self.center.shape[0]

    @property
    def is_ball(self) -> bool:
        return not np.any(self.orientation)

    @property
    def volume(self) -> float:
        alpha = 1.0 if self.is_ball else self.aspect
        return alpha * self.radius**self.N * unit_ball_volume(self.N)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership test via the quadratic form of the open ellipsoid."""
        d = (np.asarray(x, dtype=float) - self.center) / self.radius
        if self.is_ball or self.aspect == 1.0:
            return np.einsum("...i,...i->...", d, d) < 1.0
        if self.aspect == 0.0:
            raise ValueError("flat ellipsoid has empty interior")
        s = d @ self.orientation
        perp = d - s[..., None] * self.orientation
        return (s / self.aspect) ** 2 + np.einsum("...i,...i->...", perp, perp) < 1.0


def ellipsoid_map(y: np.ndarray, E: Ellipsoid) -> np.ndarray:
    """Map points of the unit ball onto ``E``; vectorized over leading axes."""
    y = np.asarray(y, dtype=float)
    if E.is_ball:
        return E.center + E.radius * y
    nu = E.orientation
    s = y @ nu
    return E.center + E.radius * (y + (E.aspect - 1.0) * s[..., None] * nu)


def sampling_ellipsoid(x0: np.ndarray, x: np.ndarray, r: float, P: Params) -> Ellipsoid:
    """Ellipsoid centered at ``x`` used to average around the shifted point.

    Radius ``gamma * r``, aspect ``1 + c |x - x0|^2 / r^2`` with ``c = a - 1``
    (``c = -1`` in the degenerate branch), oriented along ``x - x0``.
    """
    if r <= 0:
        raise SamplingRadiusError("r must be positive")
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    v = x - x0
    dist = float(np.linalg.norm(v))
    if dist > r * (1.0 + 1e-12):
        raise SamplingRadiusError(f"|x - x0| = {dist!r} exceeds r = {r!r}")
    s = min(dist / r, 1.0)
    aspect = max(1.0 + P.aspect_slope * s * s, 0.0)
    nu = v / dist if dist > 0 else np.zeros_like(v)
    return Ellipsoid(x, P.gamma * r, aspect, nu)


class DomainKind(str, Enum):
    BALL = "ball"
    ANNULUS = "annulus"
    BOX = "box"
    CORKSCREW = "corkscrew"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Domain:
    """Bounded open set described by a signed-distance oracle.

    ``signed_distance`` maps an array of shape (..., N) to shape (...), negative
    inside. ``bbox`` is a pair (lo, hi) containing the closure.
    """

    signed_distance: Oracle
    bbox: tuple[np.ndarray, np.ndarray]
    kind: DomainKind
    spec: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(np.asarray(self.bbox[0]).shape[0])

    def sd(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.signed_distance(x), dtype=float)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.sd(x) < 0.0

    def depth(self, x: np.ndarray) -> np.ndarray:
        """Distance to the complement (zero outside)."""
        return np.maximum(-self.sd(x), 0.0)

    @property
    def inradius(self) -> float:
        return float(self.spec.get("inradius", 0.0))

    def to_spec(self) -> dict:
        return dict(self.spec)


def scaled_distance(D: Domain, x: np.ndarray, eps: float) -> np.ndarray | float:
    """``min(eps, dist(x, complement)) / eps``; vectorized over leading axes."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = np.minimum(D.depth(x), eps) / eps
    return float(out) if np.ndim(out) == 0 else out


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def ball(center: Sequence[float], radius: float) -> Domain:
    c = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ConstructionError("radius must be positive")

    def sd(x: np.ndarray) -> np.ndarray:
        return _norm(x - c) - radius

    spec = {"kind": "ball", "center": c.tolist(), "radius": float(radius), "inradius": float(radius)}
    return Domain(sd, (c - radius, c + radius), DomainKind.BALL, spec)


def annulus(center: Sequence[float], r_in: float, r_out: float) -> Domain:
    c = np.asarray(center, dtype=float)
    if not 0 < r_in < r_out:
        raise ConstructionError("annulus needs 0 < r_in < r_out")

    def sd(x: np.ndarray) -> np.ndarray:
        t = _norm(x - c)
        return np.maximum(t - r_out, r_in - t)

    spec = {
        "kind": "annulus",
        "center": c.tolist(),
        "r_in": float(r_in),
        "r_out": float(r_out),
        "inradius": 0.5 * (r_out - r_in),
    }
    return Domain(sd, (c - r_out, c + r_out), DomainKind.ANNULUS, spec)


def box(lo: Sequence[float], hi: Sequence[float]) -> Domain:
    lo_a = np.asarray(lo, dtype=float)
    hi_a = np.asarray(hi, dtype=float)
    if np.any(hi_a <= lo_a):
        raise ConstructionError("box needs lo < hi componentwise")
    mid = 0.5 * (lo_a + hi_a)
    half = 0.5 * (hi_a - lo_a)

    def sd(x: np.ndarray) -> np.ndarray:
        q = np.abs(x - mid) - half
        outside = _norm(np.maximum(q, 0.0))
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    spec = {"kind": "box", "lo": lo_a.tolist(), "hi": hi_a.tolist(), "inradius": float(half.min())}
    return Domain(sd, (lo_a, hi_a), DomainKind.BOX, spec)


def _connected(D: Domain, n: int = 160) -> bool:
    lo, hi = D.bbox
    axes = [np.linspace(lo[i], hi[i], n) for i in range(D.N)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    _, count = ndimage.label(D.contains(pts))
    return count <= 1


def make_corkscrew_domain(
    radius: float,
    mu: float,
    boundary_point: Sequence[float],
    depth_scales: Sequence[float],
    center: Sequence[float] | None = None,
) -> Domain:
    """Ball minus closed balls witnessing the exterior corkscrew condition.

    For each scale r the ball ``B(y, mu r)`` with ``y = x0 - (r/2) n`` (n the
    outward normal at ``x0``) is removed; it lies in ``B(x0, r)`` whenever
    ``mu <= 1/2``. The realized witnesses are listed in ``spec["witnesses"]``.
    """
    x0 = np.asarray(boundary_point, dtype=float)
    c = np.zeros_like(x0) if center is None else np.asarray(center, dtype=float)
    if not 0 < mu < 1:
        raise ConstructionError("mu must lie in (0, 1)")
    if radius <= 0:
        raise ConstructionError("radius must be positive")
    if abs(np.linalg.norm(x0 - c) - radius) > 1e-12 * max(1.0, radius):
        raise ConstructionError("boundary_point is not on the sphere")
    scales = [float(r) for r in depth_scales]
    if not scales:
        return ball(c, radius)
    if any(r <= 0 or r > radius for r in scales):
        raise ConstructionError("depth scales must lie in (0, radius]")
    normal = (x0 - c) / radius
    witnesses = []
    for r in scales:
        y = x0 - 0.5 * r * normal
        rho = mu * r
        if np.linalg.norm(y - x0) + rho > r * (1 + 1e-12):
            raise ConstructionError(f"witness ball at scale {r} does not fit in B(x0, r); need mu <= 1/2")
        witnesses.append((r, y, rho))
    ys = np.array([w[1] for w in witnesses])
    rhos = np.array([w[2] for w in witnesses])

    def sd(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _norm(x - c) - radius
        for y, rho in zip(ys, rhos):
            out = np.maximum(out, rho - _norm(x - y))
        return out

    spec = {
        "kind": "corkscrew",
        "center": c.tolist(),
        "radius": float(radius),
        "mu": float(mu),
        "boundary_point": x0.tolist(),
        "depth_scales": scales,
        "witnesses": [{"scale": r, "center": y.tolist(), "radius": rho} for r, y, rho in witnesses],
        "inradius": float(radius) * 0.5,
    }
    D = Domain(sd, (c - radius, c + radius), DomainKind.CORKSCREW, spec)
    if not _connected(D):
        raise ConstructionError("excluded balls disconnect the domain")
    return D


def validate_domain(D: Domain, n: int = 10_000, seed: int = 0) -> dict:
    """Sampled checks: 1-Lipschitz signed distance and bbox containment."""
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, dtype=float) for b in D.bbox)
    span = hi - lo
    x = lo - 0.5 * span + 2.0 * span * rng.random((n, D.N))
    y = x + 0.1 * span * rng.standard_normal((n, D.N))
    sx, sy = D.sd(x), D.sd(y)
    lip = np.abs(sx - sy) / np.maximum(_norm(x - y), 1e-300)
    inside = sx < 0
    in_box = np.all((x >= lo) & (x <= hi), axis=1)
    report = {
        "max_lipschitz_ratio": float(lip.max()),
        "lipschitz_ok": bool(lip.max() <= 1.0 + 1e-9),
        "containment_ok": bool(np.all(in_box[inside])),
    }
    return report


def custom(signed_distance: Oracle, lo: Sequence[float], hi: Sequence[float], seed: int = 0) -> Domain:
    D = Domain(
        signed_distance,
        (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)),
        DomainKind.CUSTOM,
        {"kind": "custom", "lo": list(lo), "hi": list(hi)},
    )
    rep = validate_domain(D, seed=seed)
    if not (rep["lipschitz_ok"] and rep["containment_ok"]):
        raise ConstructionError(f"custom domain failed sampled validation: {rep}")
    return D


def domain_from_spec(spec: dict) -> Domain:
    kind = spec["kind"]
    if kind == "ball":
        return ball(spec.get("center", [0.0, 0.0]), spec.get("radius", 1.0))
    if kind == "annulus":
        return annulus(spec.get("center", [0.0, 0.0]), spec["r_in"], spec["r_out"])
    if kind == "box":
        return box(spec["lo"], spec["hi"])
    if kind == "corkscrew":
        return make_corkscrew_domain(
            spec.get("radius", 1.0),
            spec["mu"],
            spec["boundary_point"],
            spec.get("depth_scales", []),
            spec.get("center"),
        )
    raise ConstructionError(f"unknown domain kind {kind!r}")
