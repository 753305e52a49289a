"""Scaling factors (gamma, a) coupling the sampling geometry to the exponent p.

The pair must satisfy the compatibility relation

    (N + 2) / gamma**2 + a**2 = p - 1,

and, for the game to stop almost surely, one of

    a <= 1 and gamma * a > 1      (branch ``below``)
    a >= 1 and gamma > 1          (branch ``above``).

The ``degenerate`` branch fixes a = 0 and gamma = sqrt((N + 2) / (p - 1)); it is
valid for averaging and for the fixed-point solver but not for the game.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import InfeasibleParamsError, ParameterDomainError

_REL = 1e-12


class Branch(str, Enum):
    BELOW = "below"
    ABOVE = "above"
    DEGENERATE = "degenerate"

    @classmethod
    def parse(cls, value: "Branch | str | None") -> "Branch | None":
        if value is None or isinstance(value, Branch):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "below": cls.BELOW,
            "aspectbelowone": cls.BELOW,
            "belowone": cls.BELOW,
            "above": cls.ABOVE,
            "aspectaboveone": cls.ABOVE,
            "aboveone": cls.ABOVE,
            "degenerate": cls.DEGENERATE,
            "degenerateaspectzero": cls.DEGENERATE,
        }
        if key not in aliases:
            raise ParameterDomainError(f"unknown branch {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class GammaInterval:
    """Interval of admissible gamma with explicit endpoint closedness."""

    lower: float
    upper: float
    lower_closed: bool
    upper_closed: bool

    @property
    def empty(self) -> bool:
        if self.lower < self.upper:
            return False
        return not (self.lower == self.upper and self.lower_closed and self.upper_closed)

    def contains(self, gamma: float) -> bool:
        if self.empty or not math.isfinite(gamma):
            return False
        lo_ok = gamma >= self.lower if self.lower_closed else gamma > self.lower
        hi_ok = gamma <= self.upper if self.upper_closed else gamma < self.upper
        return lo_ok and hi_ok

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": None if math.isinf(self.upper) else self.upper,
            "lower_closed": self.lower_closed,
            "upper_closed": self.upper_closed,
            "empty": self.empty,
        }


def _check_domain(N: int, p: float) -> None:
    if isinstance(N, bool) or int(N) != N or N < 2:
        raise ParameterDomainError(f"N must be an integer >= 2, got {N!r}")
    if not (isinstance(p, (int, float)) and math.isfinite(p) and p > 1):
        raise ParameterDomainError(f"p must be a finite real > 1, got {p!r}")


def feasible_gamma_interval(N: int, p: float, branch: Branch | str) -> GammaInterval:
    """Return the set of gamma for which ``make_params`` succeeds on ``branch``.

    For the degenerate branch the interval collapses to the single admissible
    value sqrt((N+2)/(p-1)).
    """
    _check_domain(N, p)
    branch = Branch.parse(branch)
    N = int(N)
    if branch is Branch.DEGENERATE:
        g = math.sqrt((N + 2) / (p - 1))
        return GammaInterval(g, g, True, True)
    if branch is Branch.BELOW:
        # gamma * a > 1  <=>  1/gamma^2 < (p-1)/(N+3)   (open)
        # a <= 1         <=>  1/gamma^2 >= (p-2)/(N+2)  (closed, void for p <= 2)
        lower = math.sqrt((N + 3) / (p - 1))
        if p > 2:
            return GammaInterval(lower, math.sqrt((N + 2) / (p - 2)), False, True)
        return GammaInterval(lower, math.inf, False, False)
    # branch ABOVE: gamma > 1 (open) and a >= 1 <=> 1/gamma^2 <= (p-2)/(N+2) (closed)
    if p <= 2:
        return GammaInterval(math.inf, math.inf, False, False)
    g_a = math.sqrt((N + 2) / (p - 2))
    if g_a > 1.0:
        return GammaInterval(g_a, math.inf, True, False)
    return GammaInterval(1.0, math.inf, False, False)


def default_gamma(interval: GammaInterval) -> float:
    """Midpoint of the interval clipped to [lower + 0.05, lower + 10]."""
    if interval.empty:
        raise InfeasibleParamsError("feasible gamma interval is empty")
    if interval.lower == interval.upper:
        return interval.lower
    mid = 0.5 * (interval.lower + interval.upper)
    g = min(max(mid, interval.lower + 0.05), interval.lower + 10.0)
    if not interval.contains(g):
        g = mid
    return g


def default_branch(N: int, p: float) -> Branch:
    return Branch.BELOW if p < N + 4 else Branch.ABOVE


@dataclass(frozen=True)
class Params:
    """Validated scaling factors for dimension N and exponent p."""

    N: int
    p: float
    gamma: float
    a: float
    branch: Branch

    def __post_init__(self) -> None:
        _check_domain(self.N, self.p)
        lhs = (self.N + 2) / self.gamma**2 + self.a**2
        if abs(lhs - (self.p - 1)) > _REL * (self.p - 1):
            raise InfeasibleParamsError(
                f"compatibility (N+2)/gamma^2 + a^2 = p-1 violated: {lhs!r} != {self.p - 1!r}"
            )
        if self.branch is Branch.DEGENERATE:
            if self.a != 0.0:
                raise InfeasibleParamsError("degenerate branch requires a = 0")
        elif self.branch is Branch.BELOW:
            if not (self.a <= 1.0 and self.gamma * self.a > 1.0):
                raise InfeasibleParamsError("branch below requires a <= 1 and gamma*a > 1")
        elif not (self.a >= 1.0 and self.gamma > 1.0):
            raise InfeasibleParamsError("branch above requires a >= 1 and gamma > 1")

    @property
    def degenerate(self) -> bool:
        return self.branch is Branch.DEGENERATE

    @property
    def aspect_slope(self) -> float:
        """Coefficient c with aspect(z) = 1 + c|z|^2 for the sampling ellipsoid."""
        return -1.0 if self.degenerate else self.a - 1.0

    @property
    def reach(self) -> float:
        """Sampling reach per unit step: 1 + gamma * max(a, 1)."""
        return 1.0 + self.gamma * max(self.a, 1.0)

    @property
    def game_viable(self) -> bool:
        if self.degenerate:
            return False
        return (self.a <= 1 and self.gamma * self.a > 1) or (self.a >= 1 and self.gamma > 1)

    def to_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "gamma": self.gamma, "a": self.a, "branch": self.branch.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        return make_params(int(d["N"]), float(d["p"]), d.get("gamma"), d.get("branch"))


def _violation(N: int, p: float, gamma: float, branch: Branch) -> str:
    inv = 1.0 / gamma**2
    if branch is Branch.BELOW:
        if not inv < (p - 1) / (N + 3):
            return f"gamma*a > 1 fails (needs 1/gamma^2 < (p-1)/(N+3) = {(p - 1) / (N + 3)!r})"
        return f"a <= 1 fails (needs 1/gamma^2 >= (p-2)/(N+2) = {(p - 2) / (N + 2)!r})"
    if not gamma > 1:
        return "gamma > 1 fails"
    if p <= 2:
        return "a >= 1 is impossible for p <= 2"
    return f"a >= 1 fails (needs 1/gamma^2 <= (p-2)/(N+2) = {(p - 2) / (N + 2)!r})"


def make_params(
    N: int, p: float, gamma: float | None = None, branch: Branch | str | None = None
) -> Params:
    """Build validated ``Params``.

    ``gamma=None`` picks ``default_gamma`` of the feasible interval and
    ``branch=None`` picks ``below`` when p < N + 4, ``above`` otherwise.
    """
    _check_domain(N, p)
    N = int(N)
    p = float(p)
    branch = Branch.parse(branch) or default_branch(N, p)
    if branch is Branch.DEGENERATE:
        return Params(N, p, math.sqrt((N + 2) / (p - 1)), 0.0, branch)
    interval = feasible_gamma_interval(N, p, branch)
    if interval.empty:
        raise InfeasibleParamsError(f"no feasible gamma for N={N}, p={p} on branch {branch.value}")
    if gamma is None:
        gamma = default_gamma(interval)
    gamma = float(gamma)
    if not interval.contains(gamma):
        raise InfeasibleParamsError(
            f"gamma={gamma!r} outside feasible interval {interval.to_dict()}: "
            + _violation(N, p, gamma, branch)
        )
    a = math.sqrt(max(p - 1 - (N + 2) / gamma**2, 0.0))
    # Closed endpoints (a = 1 exactly) can round to 1 +- ulp.
    if branch is Branch.BELOW and a > 1.0:
        a = 1.0
    if branch is Branch.ABOVE and a < 1.0:
        a = 1.0
    return Params(N, p, gamma, a, branch)
