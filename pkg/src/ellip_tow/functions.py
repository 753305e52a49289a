"""Test functions with analytic derivatives and the radial p-harmonic barrier.

All oracles are vectorized: ``value`` maps (..., N) -> (...), ``gradient``
maps (..., N) -> (..., N) and ``hessian`` maps (..., N) -> (..., N, N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SmoothTestFunction:
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    name: str = "f"
    spec: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(np.asarray(x, dtype=float))


def _a(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


def constant(c: float = 0.0) -> SmoothTestFunction:
    return SmoothTestFunction(
        lambda x: np.full(_a(x).shape[:-1], float(c)),
        lambda x: np.zeros_like(_a(x)),
        lambda x: np.zeros(_a(x).shape + (_a(x).shape[-1],)),
        "constant",
        {"name": "constant", "c": float(c)},
    )


def linear(b: Sequence[float], c: float = 0.0) -> SmoothTestFunction:
    b_a = np.asarray(b, dtype=float)
    return SmoothTestFunction(
        lambda x: _a(x) @ b_a + c,
        lambda x: np.broadcast_to(b_a, _a(x).shape).copy(),
        lambda x: np.zeros(_a(x).shape + (b_a.size,)),
        "linear",
        {"name": "linear", "b": b_a.tolist(), "c": float(c)},
    )


def quadratic(A: np.ndarray, b: Sequence[float] | None = None, c: float = 0.0) -> SmoothTestFunction:
    """f(x) = x^T A x / 2 + b.x + c with symmetric A."""
    A_a = np.asarray(A, dtype=float)
    A_a = 0.5 * (A_a + A_a.T)
    b_a = np.zeros(A_a.shape[0]) if b is None else np.asarray(b, dtype=float)

    def value(x):
        x = _a(x)
        return 0.5 * np.einsum("...i,ij,...j->...", x, A_a, x) + x @ b_a + c

    return SmoothTestFunction(
        value,
        lambda x: _a(x) @ A_a + b_a,
        lambda x: np.broadcast_to(A_a, _a(x).shape[:-1] + A_a.shape).copy(),
        "quadratic",
        {"name": "quadratic", "A": A_a.tolist(), "b": b_a.tolist(), "c": float(c)},
    )


def norm_squared(N: int) -> SmoothTestFunction:
    f = quadratic(2.0 * np.eye(N))
    return SmoothTestFunction(f.value, f.gradient, f.hessian, "norm-squared", {"name": "norm-squared"})


def exp_mix(b: Sequence[float]) -> SmoothTestFunction:
    """f(x) = exp(b.x) + |x|^2 / 2 + sin(x_1)."""
    b_a = np.asarray(b, dtype=float)
    N = b_a.size
    e1 = np.zeros(N)
    e1[0] = 1.0

    def value(x):
        x = _a(x)
        return np.exp(x @ b_a) + 0.5 * np.einsum("...i,...i->...", x, x) + np.sin(x[..., 0])

    def gradient(x):
        x = _a(x)
        return np.exp(x @ b_a)[..., None] * b_a + x + np.cos(x[..., 0])[..., None] * e1

    def hessian(x):
        x = _a(x)
        e = np.exp(x @ b_a)[..., None, None]
        return e * np.outer(b_a, b_a) + np.eye(N) - np.sin(x[..., 0])[..., None, None] * np.outer(e1, e1)

    return SmoothTestFunction(value, gradient, hessian, "exp-mix", {"name": "exp-mix", "b": b_a.tolist()})


@dataclass(frozen=True)
class RadialPHarmonic:
    """v(|x - center|) with v(t) = sgn(p-N) t^((p-N)/(p-1)), or log t if p = N.

    ``t_min`` clamps the radius from below so the function is bounded and
    continuous on all of R^N when used as boundary data; it does not change
    values for |x - center| >= t_min.
    """

    p: float
    N: int
    center: tuple[float, ...] | None = None
    t_min: float = 0.0

    @property
    def exponent(self) -> float:
        return (self.p - self.N) / (self.p - 1.0)

    @property
    def is_log(self) -> bool:
        return self.p == self.N

    def _c(self) -> np.ndarray:
        return np.zeros(self.N) if self.center is None else np.asarray(self.center, dtype=float)

    def v(self, t: np.ndarray | float) -> np.ndarray:
        t = np.maximum(np.asarray(t, dtype=float), self.t_min)
        if self.is_log:
            return np.log(t)
        k = self.exponent
        return math.copysign(1.0, self.p - self.N) * t**k

    def dv(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.is_log:
            return 1.0 / t
        k = self.exponent
        return abs(k) * t ** (k - 1.0)

    def d2v(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.is_log:
            return -1.0 / t**2
        k = self.exponent
        return abs(k) * (k - 1.0) * t ** (k - 2.0)

    def value(self, x: np.ndarray) -> np.ndarray:
        d = _a(x) - self._c()
        return self.v(np.sqrt(np.einsum("...i,...i->...", d, d)))

    __call__ = value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        d = _a(x) - self._c()
        t = np.sqrt(np.einsum("...i,...i->...", d, d))
        return (self.dv(t) / t)[..., None] * d

    def hessian(self, x: np.ndarray) -> np.ndarray:
        d = _a(x) - self._c()
        t = np.sqrt(np.einsum("...i,...i->...", d, d))
        u = d / t[..., None]
        uu = u[..., :, None] * u[..., None, :]
        eye = np.eye(self.N)
        a = self.d2v(t)[..., None, None]
        b = (self.dv(t) / t)[..., None, None]
        return a * uu + b * (eye - uu)

    def as_test_function(self) -> SmoothTestFunction:
        return SmoothTestFunction(self.value, self.gradient, self.hessian, "radial-p-harmonic", self.spec())

    def spec(self) -> dict:
        return {
            "name": "radial-p-harmonic",
            "p": self.p,
            "N": self.N,
            "center": None if self.center is None else list(self.center),
            "t_min": self.t_min,
        }


def distance_to_point(point: Sequence[float], cap: float = 1.0) -> SmoothTestFunction:
    """Bounded Lipschitz data -min(cap, |x - point|); value oracle only is meaningful."""
    q = np.asarray(point, dtype=float)

    def value(x):
        d = _a(x) - q
        return -np.minimum(cap, np.sqrt(np.einsum("...i,...i->...", d, d)))

    def nograd(x):
        raise ConfigurationError("distance-to-point has no smooth derivatives")

    return SmoothTestFunction(value, nograd, nograd, "distance-to-point", {"name": "distance-to-point", "point": q.tolist(), "cap": cap})


def function_from_spec(spec: dict, N: int, p: float | None = None) -> SmoothTestFunction:
    """Registry of named test and data functions."""
    name = spec["name"]
    if name == "constant":
        return constant(spec.get("c", 0.0))
    if name == "linear":
        return linear(spec.get("b", [1.0] + [0.5] * (N - 1)), spec.get("c", 0.0))
    if name == "quadratic":
        return quadratic(np.asarray(spec["A"], dtype=float), spec.get("b"), spec.get("c", 0.0))
    if name == "norm-squared":
        return norm_squared(N)
    if name == "exp-mix":
        return exp_mix(spec.get("b", [0.3] + [-0.2] * (N - 1)))
    if name == "radial-p-harmonic":
        pp = spec.get("p", p)
        if pp is None:
            raise ConfigurationError("radial-p-harmonic needs an exponent p")
        center = spec.get("center")
        return RadialPHarmonic(
            float(pp), int(spec.get("N", N)), None if center is None else tuple(center), spec.get("t_min", 0.0)
        ).as_test_function()
    if name == "distance-to-point":
        return distance_to_point(spec["point"], spec.get("cap", 1.0))
    raise ConfigurationError(f"unknown function {name!r}")
