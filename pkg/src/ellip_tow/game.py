"""Seeded simulation of the noisy tug-of-war process.

One step from ``x`` with the acting player's shift ``sigma`` and noise ``w``
(uniform in the unit ball) moves to

    x + eps * (sigma + gamma w + gamma (a - 1) <w, sigma> sigma).

At step n the threshold ``t_n`` is compared with ``d_eps(x_{n-1})``; the game
stops at the first n with ``t_n > d_eps(x_{n-1})`` and pays ``F(x_{n-1})``.

Every run owns an independent random stream keyed by ``(seed, stream_id)`` and
consumes it in fixed blocks, so a run's trajectory does not depend on which
other runs are simulated alongside it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dpp import DppOperator, GridField, SolverConfig, eval_field
from .errors import ConfigurationError, EstimationError, UnsupportedForGameError
from .geometry import Domain, scaled_distance
from .quadrature import QuadratureRule, SearchRule, product_rule, search_rule
from .scaling import Params

log = logging.getLogger(__name__)

SIGMA_MARGIN = 1e-6
BLOCK = 256

Oracle = Callable[[np.ndarray], np.ndarray]


def game_step(x_prev: np.ndarray, sigma: np.ndarray, w: np.ndarray, P: Params, eps: float) -> np.ndarray:
    """Vectorized position update; the inner product is summed in a fixed order."""
    x_prev = np.asarray(x_prev, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    w = np.asarray(w, dtype=float)
    s = w[..., 0] * sigma[..., 0]
    for i in range(1, w.shape[-1]):
        s = s + w[..., i] * sigma[..., i]
    return x_prev + eps * (sigma + P.gamma * w + (P.gamma * (P.a - 1.0)) * s[..., None] * sigma)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def uniform_ball(rng: np.random.Generator, n: int, N: int) -> np.ndarray:
    """n points uniform in the open unit ball (cube rejection for N <= 3)."""
    if N <= 3:
        out = np.empty((n, N))
        filled = 0
        while filled < n:
            need = n - filled
            cand = rng.uniform(-1.0, 1.0, size=(2 * need + 8, N))
            cand = cand[np.einsum("ij,ij->i", cand, cand) < 1.0][:need]
            out[filled : filled + cand.shape[0]] = cand
            filled += cand.shape[0]
        return out
    g = rng.standard_normal((n, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(n)[:, None] ** (1.0 / N)


def draw_block(rng: np.random.Generator, B: int, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noise vectors, coin flips in {1, 2} and thresholds for B consecutive steps."""
    w = uniform_ball(rng, B, N)
    s = rng.integers(1, 3, size=B).astype(np.int8)
    t = rng.random(B)
    return w, s, t


@dataclass
class History:
    """Prefix of one run: positions x_0..x_n and the records of steps 1..n."""

    positions: np.ndarray
    noise: np.ndarray
    coins: np.ndarray
    thresholds: np.ndarray

    def from_step(self, i: int) -> "History":
        return History(self.positions[i:], self.noise[i:], self.coins[i:], self.thresholds[i:])


# Strategies ------------------------------------------------------------------------


class Strategy:
    """Decision rule mapping the current history to a shift in the open unit ball."""

    name = "strategy"
    markov = True

    def decide(self, x: np.ndarray, n: int, history: History | None = None) -> np.ndarray:
        return self.decide_batch(np.asarray(x, dtype=float)[None, :], np.array([n]), None, np.array([0]))[0]

    def decide_batch(self, X: np.ndarray, steps: np.ndarray, state, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def start(self, X0: np.ndarray):
        return None

    def observe(self, state, X: np.ndarray, step: int, idx: np.ndarray) -> None:
        return None


def _clamp(z: np.ndarray) -> np.ndarray:
    return z * (1.0 - SIGMA_MARGIN)


class ZeroStrategy(Strategy):
    name = "zero"

    def decide_batch(self, X, steps, state, idx):
        return np.zeros_like(X)


class RadialPull(Strategy):
    """Shift toward ``center`` (``sign=+1``) or away from it (``sign=-1``)."""

    def __init__(self, center: Sequence[float], sign: float = 1.0, name: str | None = None) -> None:
        self.center = np.asarray(center, dtype=float)
        self.sign = 1.0 if sign >= 0 else -1.0
        self.name = name or ("radial-pull" if sign >= 0 else "radial-push")

    def decide_batch(self, X, steps, state, idx):
        v = self.center - X
        n = np.linalg.norm(v, axis=1, keepdims=True)
        out = np.zeros_like(X)
        ok = n[:, 0] > 0
        out[ok] = self.sign * v[ok] / n[ok]
        return _clamp(out)


class FunctionStrategy(Strategy):
    """Wrap ``fn(x, n, history) -> sigma``; ``markov=False`` requests histories."""

    def __init__(self, fn: Callable, name: str = "custom", markov: bool = True) -> None:
        self.fn = fn
        self.name = name
        self.markov = markov

    def decide(self, x, n, history=None):
        return np.asarray(self.fn(np.asarray(x, dtype=float), n, history), dtype=float)

    def decide_batch(self, X, steps, state, idx):
        hist = state if callable(state) else (lambda i: None)
        return np.stack([self.decide(X[k], int(steps[k]), hist(int(idx[k]))) for k in range(X.shape[0])])


def _oracle_extrema(
    u: Oracle, X: np.ndarray, P: Params, eps: float, Z: np.ndarray, Q: QuadratureRule, mode: str
) -> np.ndarray:
    """Searched optimal shift at each row of X for f_u(x + eps z), z in Z (per row or shared)."""
    Zs = Z if Z.ndim == 3 else np.broadcast_to(Z, (X.shape[0],) + Z.shape)
    Y, w = Q.nodes, Q.weights
    yz = np.einsum("qn,mcn->mcq", Y, Zs)
    pts = (
        X[:, None, None, :]
        + eps * Zs[:, :, None, :]
        + P.gamma * eps * (Y[None, None, :, :] + P.aspect_slope * yz[..., None] * Zs[:, :, None, :])
    )
    vals = np.asarray(u(pts.reshape(-1, X.shape[1])), dtype=float).reshape(pts.shape[:3]) @ w
    if mode == "min":
        ext = vals.min(axis=1, keepdims=True)
        hit = vals <= ext + 1e-12 * np.maximum(1.0, np.abs(ext))
    else:
        ext = vals.max(axis=1, keepdims=True)
        hit = vals >= ext - 1e-12 * np.maximum(1.0, np.abs(ext))
    k = np.argmax(hit, axis=1)
    return Zs[np.arange(X.shape[0]), k]


def _mode(mode: str) -> str:
    m = str(mode).lower()
    if m in ("min", "minimize", "greedy-min"):
        return "min"
    if m in ("max", "maximize", "greedy-max"):
        return "max"
    raise ConfigurationError(f"unknown greedy mode {mode!r}")


class GreedyField(Strategy):
    """Greedy shift for a solved lattice field, tabulated at lattice nodes.

    The decision at ``x`` is the one tabulated at the nearest interior lattice
    node (piecewise constant in position). Positions whose nearest node is not
    interior fall back to a direct search using ``eval_field``.
    """

    def __init__(
        self,
        W: GridField,
        D: Domain,
        P: Params,
        eps: float,
        mode: str,
        search: SearchRule | None = None,
        config: SolverConfig | None = None,
    ) -> None:
        if W.eps is not None and abs(W.eps - eps) > 1e-15:
            raise ConfigurationError("field was solved at a different eps")
        if W.params is not None and W.params != P:
            raise ConfigurationError("field was solved with different params")
        if config is None:
            sc = W.meta.get("solver")
            config = SolverConfig(**{**sc, "eps": eps}) if sc else SolverConfig(eps, h=W.h)
        self.mode = _mode(mode)
        self.name = "greedy-" + self.mode
        self.W, self.D, self.P, self.eps = W, D, P, eps
        op = DppOperator(D, P, W.boundary_data, config, W.lattice, search=search)
        ext = op.extrema(W.values.ravel())
        self.Z = op.Z
        self.quad = op.quad
        self.table = np.full(W.lattice.size, -1, dtype=np.int64)
        self.table[op.interior] = ext["imin"] if self.mode == "min" else ext["imax"]
        self.lattice = W.lattice

    def _fallback(self, X: np.ndarray) -> np.ndarray:
        u = lambda pts: eval_field(self.W, self.D, pts)  # noqa: E731
        out = np.empty_like(X)
        for s in range(0, X.shape[0], 512):
            out[s : s + 512] = _oracle_extrema(u, X[s : s + 512], self.P, self.eps, self.Z, self.quad, self.mode)
        return out

    def decide_batch(self, X, steps, state, idx):
        lat = self.lattice
        t = np.rint((X - lat.origin) / lat.h).astype(np.int64)
        inside = np.all((t >= 0) & (t < np.asarray(lat.shape)), axis=1)
        c = np.full(X.shape[0], -1, dtype=np.int64)
        c[inside] = self.table[t[inside] @ lat.strides]
        z = np.empty_like(X)
        ok = c >= 0
        z[ok] = self.Z[c[ok]]
        if np.any(~ok):
            z[~ok] = self._fallback(X[~ok])
        return _clamp(z)


class GreedyOracle(Strategy):
    """Greedy shift for a point oracle, searched on the fly.

    With a gradient oracle the directions +-grad/|grad| at the current position
    are added to the search set.
    """

    def __init__(
        self,
        u: Oracle,
        P: Params,
        eps: float,
        mode: str,
        search: SearchRule | None = None,
        quad: QuadratureRule | None = None,
        gradient: Oracle | None = None,
        chunk: int = 1024,
    ) -> None:
        self.u, self.P, self.eps = u, P, eps
        self.mode = _mode(mode)
        self.name = "greedy-" + self.mode
        self.search = search or search_rule(P.N)
        self.quad = quad or product_rule(P.N, 2)
        self.gradient = gradient
        self.chunk = chunk

    def decide_batch(self, X, steps, state, idx):
        Z = self.search.candidates()
        out = np.empty_like(X)
        for s in range(0, X.shape[0], self.chunk):
            Xc = X[s : s + self.chunk]
            Zc = Z
            if self.gradient is not None:
                g = np.asarray(self.gradient(Xc), dtype=float)
                n = np.linalg.norm(g, axis=1, keepdims=True)
                e = np.where(n > 0, g / np.where(n > 0, n, 1.0), 0.0)
                Zc = np.concatenate([e[:, None, :], -e[:, None, :], np.broadcast_to(Z, (Xc.shape[0],) + Z.shape)], axis=1)
            out[s : s + self.chunk] = _oracle_extrema(self.u, Xc, self.P, self.eps, Zc, self.quad, self.mode)
        return _clamp(out)


def greedy_strategy(
    W: GridField | Oracle,
    D: Domain,
    P: Params,
    eps: float,
    mode: str,
    S: SearchRule | None = None,
    **kw,
) -> Strategy:
    """Greedy strategy for a solved field (tabulated) or a point oracle (on the fly)."""
    if isinstance(W, GridField):
        return GreedyField(W, D, P, eps, mode, S, kw.get("config"))
    return GreedyOracle(W, P, eps, mode, S, kw.get("quad"), kw.get("gradient"))


class Concatenated(Strategy):
    """Switch strategies as the token leaves concentric balls around ``center``.

    With balls B_1 c ... c B_m: while no position has left B_1, strategy 1 acts.
    Otherwise let k be the largest index (k <= m-1) of a ball some position has
    left and i the first step outside B_k; strategy k+1 acts on the history
    reindexed to start at step i.
    """

    markov = False

    def __init__(self, strategies: Sequence[Strategy], radii: Sequence[float], center: Sequence[float]) -> None:
        if len(strategies) != len(radii) or not strategies:
            raise ConfigurationError("strategies and radii must have equal positive length")
        if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
            raise ConfigurationError("radii must be positive and increasing")
        self.strategies = list(strategies)
        self.radii = np.asarray(radii, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.name = "concatenated"

    def _exit_level(self, x: np.ndarray) -> np.ndarray:
        """Largest k in 1..m-1 with |x - center| >= radius_k (0 if none)."""
        r = np.linalg.norm(np.atleast_2d(x) - self.center, axis=1)
        out = np.zeros(r.shape[0], dtype=np.int64)
        for k in range(1, len(self.radii)):
            out[r >= self.radii[k - 1]] = k
        return out

    def dispatch(self, positions: np.ndarray) -> tuple[int, int]:
        """(strategy index, reindex step) from positions x_0..x_n (reference rule)."""
        levels = self._exit_level(positions)
        k = int(levels.max()) if levels.size else 0
        if k == 0:
            return 0, 0
        i = int(np.argmax(levels >= k))
        return k, i

    def decide(self, x, n, history=None):
        if history is None:
            raise ConfigurationError("concatenated strategy needs the history")
        k, i = self.dispatch(history.positions[: n + 1])
        return self.strategies[k].decide(x, n - i, history.from_step(i))

    def start(self, X0):
        lev = self._exit_level(X0)
        return {"k": lev, "i": np.zeros(X0.shape[0], dtype=np.int64)}

    def observe(self, state, X, step, idx):
        lev = self._exit_level(X)
        up = lev > state["k"][idx]
        state["k"][idx[up]] = lev[up]
        state["i"][idx[up]] = step

    def decide_batch(self, X, steps, state, idx):
        if state is None or callable(state):
            raise ConfigurationError("concatenated strategy needs its batch state")
        out = np.empty_like(X)
        ks = state["k"][idx]
        for k in np.unique(ks):
            sel = ks == k
            sub = self.strategies[int(k)]
            if not sub.markov:
                raise ConfigurationError("batched concatenation needs position-only sub-strategies")
            out[sel] = sub.decide_batch(X[sel], steps[sel] - state["i"][idx[sel]], None, idx[sel])
        return out


def concatenated_strategy(strategies: Sequence[Strategy], balls: Sequence[float], center: Sequence[float]) -> Strategy:
    if len(strategies) == 1:
        return strategies[0]
    return Concatenated(strategies, balls, center)


# Engine ----------------------------------------------------------------------------


@dataclass
class Trajectory:
    positions: np.ndarray
    tau: int | None
    coins: np.ndarray
    noise: np.ndarray
    thresholds: np.ndarray
    sigmas: np.ndarray
    payoff: float
    terminated: bool


@dataclass
class BatchResult:
    final: np.ndarray
    tau: np.ndarray
    terminated: np.ndarray
    payoff: np.ndarray
    trajectories: list[Trajectory] = field(default_factory=list)


def _check_params(P: Params) -> None:
    if P.degenerate or not P.game_viable:
        raise UnsupportedForGameError("params do not guarantee termination; the game needs a > 0 branches")


class _HistoryStore:
    def __init__(self, X0: np.ndarray) -> None:
        M = X0.shape[0]
        self.pos = [[X0[i].copy()] for i in range(M)]
        self.w: list[list] = [[] for _ in range(M)]
        self.s: list[list] = [[] for _ in range(M)]
        self.t: list[list] = [[] for _ in range(M)]
        self.sig: list[list] = [[] for _ in range(M)]

    def history(self, i: int) -> History:
        N = self.pos[i][0].shape[0]
        return History(
            np.array(self.pos[i]),
            np.array(self.w[i]).reshape(-1, N),
            np.array(self.s[i], dtype=np.int8),
            np.array(self.t[i]),
        )


def run_batch(
    x0s: np.ndarray,
    sI: Strategy,
    sII: Strategy,
    D: Domain,
    P: Params,
    eps: float,
    F: Oracle,
    seed: int,
    stream_ids: Sequence[int] | None = None,
    cap: int = 10_000,
    record: bool = False,
) -> BatchResult:
    """Simulate independent runs in lockstep; run k uses stream (seed, stream_ids[k])."""
    _check_params(P)
    if cap < 1:
        raise ConfigurationError("cap must be >= 1")
    if not 0 < eps < 1:
        raise ConfigurationError("eps must lie in (0, 1)")
    X = np.array(np.atleast_2d(x0s), dtype=float)
    M, N = X.shape
    if N != P.N:
        raise ConfigurationError("start points have the wrong dimension")
    ids = np.arange(M) if stream_ids is None else np.asarray(stream_ids)
    gens = [RngStream(seed, int(s)).generator() for s in ids]
    Wb = np.empty((M, BLOCK, N))
    Sb = np.empty((M, BLOCK), dtype=np.int8)
    Tb = np.empty((M, BLOCK))
    tau = np.zeros(M, dtype=np.int64)
    done = np.zeros(M, dtype=bool)
    needs_hist = record or not (sI.markov or isinstance(sI, Concatenated)) or not (
        sII.markov or isinstance(sII, Concatenated)
    )
    store = _HistoryStore(X) if needs_hist else None
    stI, stII = sI.start(X), sII.start(X)
    if store is not None:
        stI = stI if stI is not None else store.history
        stII = stII if stII is not None else store.history
    active = np.arange(M)
    for n in range(1, cap + 1):
        j = (n - 1) % BLOCK
        if j == 0:
            for i in active:
                Wb[i], Sb[i], Tb[i] = draw_block(gens[i], BLOCK, N)
        Xa = X[active]
        d = scaled_distance(D, Xa, eps)
        t = Tb[active, j]
        stop = t > d
        if store is not None:
            for i in active:
                store.w[i].append(Wb[i, j].copy())
                store.s[i].append(Sb[i, j])
                store.t[i].append(Tb[i, j])
        stopped = active[stop]
        tau[stopped] = n
        done[stopped] = True
        cont = active[~stop]
        if cont.size == 0:
            active = cont
            break
        coin = Sb[cont, j]
        w = Wb[cont, j]
        sigma = np.zeros((cont.size, N))
        steps = np.full(cont.size, n - 1)
        one = coin == 1
        if np.any(one):
            sigma[one] = sI.decide_batch(X[cont[one]], steps[one], stI, cont[one])
        if np.any(~one):
            sigma[~one] = sII.decide_batch(X[cont[~one]], steps[~one], stII, cont[~one])
        norms = np.linalg.norm(sigma, axis=1)
        if np.any(norms > 1.0 - SIGMA_MARGIN + 1e-12):
            raise ConfigurationError("a strategy returned a shift outside the allowed ball")
        Xn = game_step(X[cont], sigma, w, P, eps)
        X[cont] = Xn
        sI.observe(stI, Xn, n, cont)
        sII.observe(stII, Xn, n, cont)
        if store is not None:
            for k, i in enumerate(cont):
                store.pos[i].append(Xn[k].copy())
                store.sig[i].append(sigma[k].copy())
        active = cont
    pay = np.full(M, np.nan)
    if np.any(done):
        pay[done] = np.asarray(F(X[done]), dtype=float)
    trajs = []
    if record and store is not None:
        for i in range(M):
            trajs.append(
                Trajectory(
                    np.array(store.pos[i]),
                    int(tau[i]) if done[i] else None,
                    np.array(store.s[i], dtype=np.int8),
                    np.array(store.w[i]).reshape(-1, N),
                    np.array(store.t[i]),
                    np.array(store.sig[i]).reshape(-1, N),
                    float(pay[i]),
                    bool(done[i]),
                )
            )
    return BatchResult(X, tau, done, pay, trajs)


def play(
    x0: Sequence[float],
    sI: Strategy,
    sII: Strategy,
    D: Domain,
    P: Params,
    eps: float,
    rng: RngStream,
    cap: int = 10_000,
    F: Oracle | None = None,
) -> Trajectory:
    """Play one game and return its full record."""
    F = F or (lambda x: np.zeros(np.asarray(x).shape[:-1]))
    res = run_batch(np.asarray(x0, dtype=float)[None, :], sI, sII, D, P, eps, F, rng.seed, [rng.stream_id], cap, True)
    return res.trajectories[0]


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    unterminated_fraction: float
    n_runs: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "unterminated_fraction": self.unterminated_fraction,
            "n_runs": self.n_runs,
        }


def summarize(payoffs: np.ndarray, terminated: np.ndarray) -> ValueEstimate:
    n = terminated.size
    good = payoffs[terminated]
    if good.size == 0:
        raise EstimationError("no run terminated")
    mean = float(np.sum(good) / good.size)
    se = float(np.sqrt(np.sum((good - mean) ** 2) / max(good.size - 1, 1) / good.size))
    return ValueEstimate(mean, se, float(1.0 - good.size / n), n)


def estimate_value(
    x0: Sequence[float],
    sI: Strategy,
    sII: Strategy,
    D: Domain,
    P: Params,
    eps: float,
    n_runs: int,
    seed: int,
    F: Oracle,
    cap: int = 10_000,
) -> ValueEstimate:
    """Monte Carlo mean and standard error of the payoff over n_runs streams."""
    if n_runs < 2:
        raise ConfigurationError("n_runs must be >= 2")
    x0s = np.repeat(np.asarray(x0, dtype=float)[None, :], n_runs, axis=0)
    res = run_batch(x0s, sI, sII, D, P, eps, F, seed, None, cap)
    est = summarize(res.payoff, res.terminated)
    if est.unterminated_fraction > 0:
        log.warning("%.4f of runs did not terminate within cap=%d", est.unterminated_fraction, cap)
    return est
