"""Symmetric quadrature on the unit ball and discrete search sets for the shift."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Probability weights on nodes of the closed unit ball."""

    nodes: np.ndarray
    weights: np.ndarray
    symmetric: bool
    label: str = ""

    def __post_init__(self) -> None:
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if nodes.ndim != 2 or weights.shape != (nodes.shape[0],) or nodes.shape[0] == 0:
            raise ValueError("nodes must be (Q, N) and weights (Q,) with Q >= 1")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-14:
            raise ValueError("weights must sum to 1")
        if np.any(np.einsum("ij,ij->i", nodes, nodes) > 1.0 + 1e-12):
            raise ValueError("nodes must lie in the closed unit ball")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def N(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def moment2(self) -> np.ndarray:
        """Second-moment matrix sum_i w_i y_i y_i^T (exact value I/(N+2))."""
        return np.einsum("i,ij,ik->jk", self.weights, self.nodes, self.nodes)


def _radial_rule(N: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the radial measure N r^(N-1) dr on [0, 1]."""
    t, w = roots_jacobi(n, 0.0, N - 1.0)
    r = 0.5 * (t + 1.0)
    w = w / w.sum()
    return r, w


def _sphere_rule(N: int, n_sphere: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if N == 2:
        m = 2 * max(1, (n_sphere + 1) // 2)
        th = 2.0 * math.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(m, 1.0 / m)
    if N == 3:
        # Gauss-Legendre in cos(theta) times an even number of azimuths.
        n_pol = max(2, int(round(math.sqrt(n_sphere / 2))))
        m = 2 * max(2, (n_sphere // n_pol + 1) // 2)
        c, wc = roots_legendre(n_pol)
        ph = 2.0 * math.pi * np.arange(m) / m
        s = np.sqrt(1.0 - c**2)
        pts = np.stack(
            [
                np.outer(s, np.cos(ph)).ravel(),
                np.outer(s, np.sin(ph)).ravel(),
                np.repeat(c, m),
            ],
            axis=1,
        )
        w = np.repeat(wc / 2.0, m) / m
        return pts, w
    rng = np.random.default_rng(seed)
    half = max(1, n_sphere // 2)
    g = rng.standard_normal((half, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pts = np.concatenate([g, -g])
    return pts, np.full(2 * half, 1.0 / (2 * half))


def product_rule(N: int, n_radial: int = 2, n_sphere: int | None = None, seed: int = 0) -> QuadratureRule:
    """Radial Gauss rule times a symmetric sphere rule.

    ``n_radial`` radial nodes integrate radial polynomials up to degree
    ``2 n_radial - 1`` exactly; with at least 3 azimuths (N=2) or 2 polar nodes
    (N=3) the second moment I/(N+2) is reproduced exactly.
    """
    if n_sphere is None:
        n_sphere = 8 if N == 2 else 16
    r, wr = _radial_rule(N, n_radial)
    s, ws = _sphere_rule(N, n_sphere, seed)
    nodes = (r[:, None, None] * s[None, :, :]).reshape(-1, N)
    weights = np.outer(wr, ws).ravel()
    weights = weights / weights.sum()
    return QuadratureRule(nodes, weights, True, f"product(N={N},radial={n_radial},sphere={len(s)})")


def monte_carlo_rule(N: int, n: int, seed: int = 0) -> QuadratureRule:
    """Equal-weight uniform samples of the ball, symmetrized under y -> -y."""
    rng = np.random.default_rng(seed)
    half = max(1, n // 2)
    g = rng.standard_normal((half, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    g *= rng.random(half)[:, None] ** (1.0 / N)
    nodes = np.concatenate([g, -g])
    return QuadratureRule(nodes, np.full(2 * half, 1.0 / (2 * half)), True, f"mc(N={N},n={2 * half})")


def _directions(N: int, n: int, seed: int) -> np.ndarray:
    if N == 2:
        m = 2 * max(1, (n + 1) // 2)
        th = 2.0 * math.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    half = max(1, n // 2)
    if N == 3:
        # Fibonacci points on the upper hemisphere, then their antipodes.
        k = np.arange(half) + 0.5
        z = k / half
        phi = math.pi * (3.0 - math.sqrt(5.0)) * k + 2.0 * math.pi * np.random.default_rng(seed).random()
        s = np.sqrt(1.0 - z**2)
        d = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    else:
        d = np.random.default_rng(seed).standard_normal((half, N))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.concatenate([d, -d])


@dataclass(frozen=True)
class SearchRule:
    """Candidate shifts z = t d for the inf/sup over the closed unit ball."""

    directions: np.ndarray
    radial_levels: tuple[float, ...] = (1.0,)
    include_center: bool = True

    def __post_init__(self) -> None:
        d = np.ascontiguousarray(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[0] == 0:
            raise ValueError("directions must be a nonempty (K, N) array")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-12):
            raise ValueError("directions must be unit vectors")
        levels = tuple(float(t) for t in self.radial_levels)
        if any(not 0 < t <= 1 for t in levels) or 1.0 not in levels:
            raise ValueError("radial levels must lie in (0, 1] and include 1")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "radial_levels", levels)

    @property
    def N(self) -> int:
        return self.directions.shape[1]

    def candidates(self) -> np.ndarray:
        """All shifts, ordered by level then direction; the center (if any) is last."""
        z = [t * self.directions for t in self.radial_levels]
        if self.include_center:
            z.append(np.zeros((1, self.N)))
        return np.concatenate(z)

    def with_directions(self, extra: np.ndarray) -> "SearchRule":
        """Prepend unit vectors (and their negatives) to the direction set."""
        extra = np.atleast_2d(np.asarray(extra, dtype=float))
        extra = extra / np.linalg.norm(extra, axis=1, keepdims=True)
        d = np.concatenate([extra, -extra, self.directions])
        return SearchRule(d, self.radial_levels, self.include_center)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        d = self.directions
        dist = np.linalg.norm(d[:, None, :] + d[None, :, :], axis=2)
        return bool(np.all(dist.min(axis=1) <= tol))


def search_rule(
    N: int,
    n_directions: int | None = None,
    radial_levels: Sequence[float] = (1.0,),
    include_center: bool = True,
    seed: int = 0,
) -> SearchRule:
    """Default search set: 64 directions in N=2, 256 in N>=3."""
    if n_directions is None:
        n_directions = 64 if N == 2 else 256
    return SearchRule(_directions(N, n_directions, seed), tuple(radial_levels), include_center)
