"""Declarative experiments: expansion order, convergence, game probes and cross-checks.

Every experiment takes a :class:`RunConfig` and returns a :class:`Report`
holding result tables and named checks. Reports embed the full config and
seed and contain no timings, so re-running a written manifest reproduces it
exactly (see :func:`reproduce`).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .averaging import S_r, predicted_increment
from .dpp import DppOperator, GridField, SolverConfig, boundary_modulus, eval_field
from .errors import ConfigurationError, ConstructionError
from .functions import RadialPHarmonic, function_from_spec
from .game import (
    Concatenated,
    GreedyOracle,
    RadialPull,
    Strategy,
    ZeroStrategy,
    estimate_value,
    greedy_strategy,
    run_batch,
)
from .geometry import Domain, DomainKind, annulus, domain_from_spec
from .quadrature import product_rule, search_rule
from .scaling import Branch, Params, make_params

log = logging.getLogger(__name__)

KINDS = ("expansion", "solve", "simulate", "convergence", "annulus", "regularity", "crosscheck")
STRATEGIES = ("zero", "greedy-min", "greedy-max", "radial-pull", "radial-push", "concatenated")
FUNCTIONS = ("constant", "linear", "quadratic", "norm-squared", "exp-mix", "radial-p-harmonic", "distance-to-point")
DOMAINS = ("ball", "annulus", "box", "corkscrew")


# Config -----------------------------------------------------------------------------


@dataclass
class RunConfig:
    """One experiment. ``options`` carries kind-specific settings."""

    kind: str
    params: dict = field(default_factory=lambda: {"N": 2, "p": 3.0, "gamma": 2.0, "branch": "below"})
    domain: dict | None = None
    function: dict | None = None
    eps: list[float] = field(default_factory=list)
    r: list[float] = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    strategies: dict = field(default_factory=dict)
    x0: list[list[float]] = field(default_factory=list)
    n_runs: int = 10_000
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.domain is not None and self.domain.get("kind") not in DOMAINS:
            raise ConfigurationError(f"unknown domain kind {self.domain.get('kind')!r}")
        if self.function is not None and self.function.get("name") not in FUNCTIONS:
            raise ConfigurationError(f"unknown function {self.function.get('name')!r}")
        for role, spec in self.strategies.items():
            for name in _strategy_names(spec):
                if name not in STRATEGIES:
                    raise ConfigurationError(f"unknown strategy {name!r} for {role}")
        if any(not 0 < e < 1 for e in self.eps):
            raise ConfigurationError("every eps must lie in (0, 1)")
        if any(r <= 0 for r in self.r):
            raise ConfigurationError("every r must be positive")
        if self.n_runs < 2 and self.kind in ("simulate", "annulus", "regularity", "crosscheck"):
            raise ConfigurationError("n_runs must be >= 2")
        self.seed = int(self.seed)

    def make_params(self) -> Params:
        d = self.params
        return make_params(int(d["N"]), float(d["p"]), d.get("gamma"), d.get("branch"))

    def make_domain(self) -> Domain:
        if self.domain is None:
            raise ConfigurationError("this experiment needs a domain")
        return domain_from_spec(self.domain)

    def solver_config(self, eps: float, **over) -> SolverConfig:
        kw = dict(self.solver)
        ratio = kw.pop("h_ratio", 8.0)
        kw.setdefault("h", eps / ratio)
        if "radial_levels" in kw:
            kw["radial_levels"] = tuple(kw["radial_levels"])
        kw.update(over)
        return SolverConfig(eps, **kw)

    def check_interior(self, P: Params, D: Domain) -> None:
        """Interior probes need the sampling reach below the domain inradius."""
        for e in self.eps:
            if D.inradius and e * P.reach >= D.inradius:
                raise ConfigurationError(
                    f"eps={e} has sampling reach {e * P.reach:.3g} >= domain inradius {D.inradius:.3g}"
                )

    def to_dict(self) -> dict:
        return _clean(
            {
                "kind": self.kind,
                "params": self.params,
                "domain": self.domain,
                "function": self.function,
                "eps": self.eps,
                "r": self.r,
                "solver": self.solver,
                "strategies": self.strategies,
                "x0": self.x0,
                "n_runs": self.n_runs,
                "seed": self.seed,
                "options": self.options,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d.get("config", d))
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _strategy_names(spec: Any) -> list[str]:
    if isinstance(spec, str):
        return [spec]
    if isinstance(spec, list):
        return [n for s in spec for n in _strategy_names(s)]
    if isinstance(spec, dict):
        names = [spec.get("name", "")]
        for sub in spec.get("strategies", []):
            names += _strategy_names(sub)
        return names
    raise ConfigurationError(f"bad strategy spec {spec!r}")


# Report -----------------------------------------------------------------------------


@dataclass
class Report:
    kind: str
    config: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    checks: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def check(self, name: str, passed: bool, **detail) -> bool:
        self.checks.append(_clean({"name": name, "passed": bool(passed), **detail}))
        return bool(passed)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return _clean(
            {
                "kind": self.kind,
                "version": __version__,
                "seed": self.config.get("seed"),
                "config": self.config,
                "tables": self.tables,
                "checks": self.checks,
                "notes": self.notes,
                "passed": self.passed,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def _clean(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Branch):
        return obj.value
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def table_csv(rows: list[dict]) -> str:
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row.get(k), float) else row.get(k)) for k in keys})
    return buf.getvalue()


def write_report(report: Report, out: str | Path) -> Path:
    """Write ``manifest.json`` plus one CSV per table into ``out``; returns the manifest path."""
    out = Path(out)
    for name, rows in report.tables.items():
        _atomic_write(out / f"{name}.csv", table_csv(rows))
    manifest = out / "manifest.json"
    _atomic_write(manifest, report.to_json() + "\n")
    return manifest


def reproduce(manifest: str | Path) -> tuple[Report, bool]:
    """Re-run the config stored in a manifest; True if tables and checks are identical."""
    with open(manifest) as fh:
        stored = json.load(fh)
    report = run(RunConfig.from_dict(stored["config"]))
    fresh = json.loads(report.to_json())
    same = all(fresh[k] == stored.get(k) for k in ("config", "tables", "checks", "passed"))
    return report, same


# Registries --------------------------------------------------------------------------


def _function(cfg: RunConfig, P: Params | None = None, default: dict | None = None):
    spec = cfg.function or default
    if spec is None:
        raise ConfigurationError("this experiment needs a function")
    N = int(cfg.params["N"])
    p = P.p if P is not None else float(cfg.params["p"])
    return function_from_spec(spec, N, p)


@dataclass
class StrategyContext:
    D: Domain
    P: Params
    eps: float
    field: GridField | None = None
    oracle: Callable | None = None
    gradient: Callable | None = None
    search: Any = None
    quad: Any = None
    config: SolverConfig | None = None


def build_strategy(spec: Any, ctx: StrategyContext) -> Strategy:
    """Strategy from a registry name or ``{"name": ..., ...}`` dict."""
    if isinstance(spec, str):
        spec = {"name": spec}
    name = spec["name"]
    if name == "zero":
        return ZeroStrategy()
    if name in ("radial-pull", "radial-push"):
        center = spec.get("center", [0.0] * ctx.P.N)
        return RadialPull(center, 1.0 if name == "radial-pull" else -1.0, name)
    if name in ("greedy-min", "greedy-max"):
        mode = name.split("-")[1]
        if ctx.field is not None:
            return greedy_strategy(ctx.field, ctx.D, ctx.P, ctx.eps, mode, ctx.search, config=ctx.config)
        if ctx.oracle is None:
            raise ConfigurationError(f"{name} needs a solved field or a value oracle")
        return GreedyOracle(ctx.oracle, ctx.P, ctx.eps, mode, ctx.search, ctx.quad, ctx.gradient)
    if name == "concatenated":
        subs = [build_strategy(s, ctx) for s in spec["strategies"]]
        return Concatenated(subs, spec["radii"], spec.get("center", [0.0] * ctx.P.N))
    raise ConfigurationError(f"unknown strategy {name!r}")


def _sub_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a sub-experiment."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _solve(cfg: RunConfig, D: Domain, P: Params, F, eps: float, **over) -> tuple[GridField, DppOperator]:
    op = DppOperator(D, P, F, cfg.solver_config(eps, **over))
    return op.solve(), op


# Expansion -------------------------------------------------------------------------


def run_expansion_study(cfg: RunConfig) -> Report:
    """Measured increment S_r u(x0) - u(x0) against the closed-form predictor.

    Options: ``x0`` (point), ``bands`` (relative tolerance per r, default 0.1),
    ``degenerate`` (also run the flat-ellipsoid branch, default True),
    ``n_radial``/``n_sphere``/``n_directions`` (quadrature and search sizes).
    """
    P = cfg.make_params()
    f = _function(cfg, P, {"name": "norm-squared"})
    opt = cfg.options
    x0 = np.asarray(opt.get("x0", [1.0] + [0.0] * (P.N - 1)), dtype=float)
    rs = cfg.r or [0.1, 0.05, 0.025]
    bands = opt.get("bands", [0.1] * len(rs))
    if len(bands) != len(rs):
        raise ConfigurationError("bands must match the r list")
    g = np.asarray(f.gradient(x0), dtype=float)
    if not np.linalg.norm(g) > 0:
        raise ConfigurationError("the test function's gradient vanishes at x0")
    Q = product_rule(P.N, int(opt.get("n_radial", 4)), opt.get("n_sphere", 16 if P.N == 2 else 64))
    S = search_rule(P.N, opt.get("n_directions"))
    variants = [("main", P)]
    if opt.get("degenerate", True):
        variants.append(("degenerate", make_params(P.N, P.p, branch="degenerate")))
    report = Report("expansion", cfg.to_dict())
    u0 = float(f.value(x0))
    scale = max(1.0, abs(u0))
    for label, PP in variants:
        rows = []
        for r, band in zip(rs, bands):
            res = S_r(f.value, x0, r, PP, Q, S, grad=g)
            meas = res.value - u0
            pred = predicted_increment(f, x0, r, PP)
            row = {"branch": PP.branch.value, "r": r, "measured": meas, "predicted": pred, "measured_over_r2": meas / r**2}
            if pred != 0.0:
                row["ratio"] = meas / pred
                report.check(f"{label}: ratio at r={r}", abs(meas / pred - 1.0) <= band, ratio=meas / pred, band=band)
            else:
                row["ratio"] = None
            rows.append(row)
        exact_zero = all(abs(r["predicted"]) == 0.0 for r in rows)
        if exact_zero:
            tiny = all(abs(r["measured"]) <= 1e-12 * scale for r in rows)
            if tiny:
                report.check(f"{label}: exact-zero increment", True)
            else:
                m = [abs(r["measured_over_r2"]) for r in rows]
                report.check(
                    f"{label}: increment shrinks faster than r^2",
                    all(b < a for a, b in zip(m, m[1:])),
                    measured_over_r2=m,
                )
        report.tables[f"expansion_{label}"] = rows
    return report


# DPP ---------------------------------------------------------------------------------


def run_solve(cfg: RunConfig) -> Report:
    """Solve the fixed-point problem for every eps; the fields become tables."""
    P = cfg.make_params()
    D = cfg.make_domain()
    F = _function(cfg, P, {"name": "constant", "c": 0.0})
    report = Report("solve", cfg.to_dict())
    rows = []
    for e in cfg.eps:
        W, op = _solve(cfg, D, P, F.value, e)
        info = W.info
        rows.append({"eps": e, "h": W.h, **info.to_dict(), "nodes": int(op.interior.size)})
        report.check(f"eps={e}: converged", info.converged, residual=info.residual)
        coords = W.lattice.coords()
        vals = W.values.ravel()
        report.tables[f"field_eps={e}"] = [
            {**{f"x{i}": float(c[i]) for i in range(P.N)}, "value": float(v)} for c, v in zip(coords, vals)
        ]
    report.tables["solve"] = rows
    return report


def _is_p_harmonic(spec: dict | None, P: Params, D: Domain) -> bool:
    if spec is None:
        return False
    if spec["name"] == "constant":
        return True
    if spec["name"] != "radial-p-harmonic":
        return False
    if float(spec.get("p", P.p)) != P.p:
        return False
    c = np.zeros(P.N) if spec.get("center") is None else np.asarray(spec["center"], dtype=float)
    if D.kind is DomainKind.ANNULUS:
        return bool(np.allclose(c, D.spec["center"]))
    return bool(D.sd(c) > 0)


def run_convergence_study(cfg: RunConfig) -> Report:
    """Sup error ||u_eps - F|| over interior nodes for a p-harmonic F.

    Options: ``max_ratio`` (asserted bound on e(eps_{k+1}) / e(eps_k), None to
    report only), ``boundary_deltas`` (radii for the boundary-oscillation table).
    """
    P = cfg.make_params()
    D = cfg.make_domain()
    spec = cfg.function or {"name": "radial-p-harmonic", "p": P.p, "center": D.spec.get("center")}
    if spec["name"] == "radial-p-harmonic" and D.kind is DomainKind.ANNULUS and not spec.get("t_min"):
        # the profile may be singular at the center, which lies on the lattice box
        spec = {**spec, "t_min": 0.5 * D.spec["r_in"]}
    F = function_from_spec(spec, P.N, P.p)
    harmonic = _is_p_harmonic(spec, P, D)
    report = Report("convergence", {**cfg.to_dict(), "function": spec})
    if not harmonic:
        msg = "data is not p-harmonic on the domain; the order column is suppressed"
        log.warning(msg)
        report.notes.append(msg)
    max_ratio = cfg.options.get("max_ratio", 0.7)
    deltas = cfg.options.get("boundary_deltas", [])
    rows, brows = [], []
    prev = None
    for e in sorted(cfg.eps, reverse=True):
        W, op = _solve(cfg, D, P, F.value, e)
        err = float(np.abs(W.values.ravel()[op.interior] - op.F_int).max())
        row = {"eps": e, "h": W.h, "iterations": W.info.iterations, "residual": W.info.residual, "sup_error": err}
        floor = 1e-12 * max(1.0, float(np.abs(op.F_nodes).max()))
        if prev is not None and harmonic and max(err, prev[1]) <= floor:
            row["ratio"] = row["order"] = None
        elif prev is not None and harmonic:
            ratio = err / prev[1] if prev[1] > 0 else None
            row["ratio"] = ratio
            row["order"] = math.log(prev[1] / err) / math.log(prev[0] / e) if err > 0 and prev[1] > 0 else None
            if max_ratio is not None and ratio is not None:
                report.check(f"ratio e({e})/e({prev[0]})", ratio <= max_ratio, ratio=ratio, bound=max_ratio)
        rows.append(row)
        if spec["name"] == "constant":
            report.check(f"eps={e}: constant data reproduced", err <= 1e-12 * max(1.0, abs(spec.get("c", 0.0))), error=err)
        for b in boundary_modulus(W, D, deltas) if deltas else []:
            brows.append({"eps": e, **b})
        prev = (e, err)
    report.tables["convergence"] = rows
    if brows:
        report.tables["boundary_oscillation"] = brows
    return report


# Games -------------------------------------------------------------------------------


def _starts(cfg: RunConfig, N: int) -> list[np.ndarray]:
    return [np.asarray(x, dtype=float) for x in (cfg.x0 or [[0.0] * N])]


def run_simulation(cfg: RunConfig) -> Report:
    """Monte Carlo game values for the configured strategy pair at each start.

    Options: ``cap`` (step cap, default 10^4), ``max_unterminated`` (asserted
    bound on the unterminated fraction, default 1e-3). Greedy strategies are
    built from a field solved with ``cfg.solver``.
    """
    P = cfg.make_params()
    D = cfg.make_domain()
    F = _function(cfg, P, {"name": "constant", "c": 0.0})
    e = cfg.eps[0] if cfg.eps else 0.1
    cap = int(cfg.options.get("cap", 10_000))
    names = _strategy_names(list(cfg.strategies.values()))
    W = None
    if any(n.startswith("greedy") for n in names):
        W, _ = _solve(cfg, D, P, F.value, e)
    ctx = StrategyContext(D, P, e, field=W, config=cfg.solver_config(e) if W is not None else None)
    sI = build_strategy(cfg.strategies.get("I", "zero"), ctx)
    sII = build_strategy(cfg.strategies.get("II", "zero"), ctx)
    bound = cfg.options.get("max_unterminated", 1e-3)
    report = Report("simulate", cfg.to_dict())
    rows = []
    for i, x in enumerate(_starts(cfg, P.N)):
        est = estimate_value(x, sI, sII, D, P, e, cfg.n_runs, _sub_seed(cfg.seed, i), F.value, cap)
        res = est.to_dict()
        rows.append({"point": i, **{f"x{k}": float(x[k]) for k in range(P.N)}, **res})
        report.check(f"start {i}: terminated fraction", est.unterminated_fraction <= bound, **res, bound=bound)
    report.tables["simulate"] = rows
    return report


def _barrier(p: float, N: int) -> RadialPHarmonic:
    return RadialPHarmonic(float(p), int(N))


def exit_bound(p: float, N: int, R1: float, R2: float, R3: float) -> float:
    """(v(R2) - v(R1)) / (v(R3) - v(R1)) for the radial barrier v."""
    if not 0 < R1 < R2 < R3:
        raise ConfigurationError("radii must satisfy 0 < R1 < R2 < R3")
    v = _barrier(p, N).v
    return float((v(R2) - v(R1)) / (v(R3) - v(R1)))


def limits_table(p: float, N: int, R1: float, R2: float) -> list[dict]:
    """Numeric values of the exit-bound quotient along the two limits, with analytic limits."""
    rows = []
    k = (p - N) / (p - 1.0)
    lim_a = 1.0 - (R2 / R1) ** k if p < N else 0.0
    for m in (10.0, 100.0, 1000.0, 10000.0):
        rows.append({"limit": "R3->inf", "R1": R1, "R2": R2, "R3": m * R2, "value": exit_bound(p, N, R1, R2, m * R2), "analytic": lim_a})
    lim_b = 0.5 if p == N else 0.0 if p > N else None
    for M in (10.0, 100.0, 1000.0, 10000.0):
        rows.append({"limit": "M->inf", "R1": R1, "R2": M * R1, "R3": M * M * R1, "value": exit_bound(p, N, R1, M * R1, M * M * R1), "analytic": lim_b})
    return rows


def _oracle_context(P: Params, eps: float, D: Domain, v: RadialPHarmonic, opt: dict) -> StrategyContext:
    S = search_rule(P.N, int(opt.get("n_directions", 6)))
    Q = product_rule(P.N, int(opt.get("n_radial", 1)), opt.get("n_sphere", 8))
    return StrategyContext(D, P, eps, oracle=v.value, gradient=v.gradient, search=S, quad=Q)


def run_annulus_walk(cfg: RunConfig) -> Report:
    """Exit probability through the outer sphere under the greedy pull on the barrier.

    Options: ``radii`` (R1, R2, R3), ``xi`` (slack, default 0.05), ``adversaries``
    (registry names for player I, default zero and greedy-max), ``cap``, search
    sizes ``n_directions``/``n_radial``/``n_sphere`` for the greedy search.
    """
    P = cfg.make_params()
    opt = cfg.options
    R1, R2, R3 = (float(t) for t in opt.get("radii", (1.0, 2.0, 4.0)))
    if not 0 < R1 < R2 < R3:
        raise ConfigurationError("annulus radii must satisfy 0 < R1 < R2 < R3")
    e = cfg.eps[0] if cfg.eps else 0.05
    xi = float(opt.get("xi", 0.05))
    cap = int(opt.get("cap", 100_000))
    center = np.zeros(P.N)
    D = annulus(center, R1, R3)
    v = _barrier(P.p, P.N)
    ctx = _oracle_context(P, e, D, v, opt)
    starts = _starts(cfg, P.N) if cfg.x0 else [np.r_[R2, np.zeros(P.N - 1)]]
    if any(np.linalg.norm(x) > R2 + 1e-12 for x in starts):
        raise ConfigurationError("annulus walk starts must satisfy |x0| <= R2")
    bound = exit_bound(P.p, P.N, R1, R2, R3)
    sII = build_strategy(cfg.strategies.get("II", "greedy-min"), ctx)
    advs = cfg.strategies.get("I", ["zero", "greedy-max"])
    advs = advs if isinstance(advs, list) else [advs]
    report = Report("annulus", cfg.to_dict())
    rows = []
    payoff = lambda x: (np.linalg.norm(x, axis=-1) > R3 - e).astype(float)  # noqa: E731
    for j, adv in enumerate(advs):
        sI = build_strategy(adv, ctx)
        for i, x in enumerate(starts):
            x0s = np.repeat(x[None, :], cfg.n_runs, axis=0)
            res = run_batch(x0s, sI, sII, D, P, e, payoff, _sub_seed(cfg.seed, j, i), cap=cap)
            done = res.terminated
            prob = float(np.sum(res.payoff[done]) / max(done.sum(), 1))
            se = math.sqrt(prob * (1 - prob) / max(done.sum(), 1))
            name = adv if isinstance(adv, str) else adv["name"]
            row = {
                "adversary": name,
                "start": i,
                "exit_probability": prob,
                "std_error": se,
                "bound": bound,
                "xi": xi,
                "unterminated_fraction": float(1 - done.mean()),
                "mean_steps": float(res.tau[done].mean()) if done.any() else None,
            }
            rows.append(row)
            report.check(f"{name} start {i}: exit probability <= bound + xi", prob <= bound + xi, probability=prob, limit=bound + xi)
    report.tables["annulus"] = rows
    report.tables["limits"] = limits_table(P.p, P.N, R1, R2)
    return report


def find_witness(D: Domain, x0: np.ndarray, s: float, mu: float, n_dir: int = 64, n_t: int = 64) -> dict:
    """Exterior ball B(y, mu s) inside B(x0, s) and outside the domain closure.

    Searches recorded corkscrew witnesses and centers x0 + t d over a fixed
    grid, keeping the one that leaves the widest start ball
    ``min(s - |x0 - y|, |x0 - y| - mu s)``.
    """
    x0 = np.asarray(x0, dtype=float)
    N = x0.size
    cands = [np.asarray(w["center"], dtype=float) for w in D.spec.get("witnesses", [])]
    dirs = search_rule(N, n_dir).directions
    ts = s * (mu + (1 - 2 * mu) * (np.arange(n_t) + 0.5) / n_t) if mu < 0.5 else np.array([])
    cands += [x0 + t * d for t in ts for d in dirs]
    best = None
    for y in cands:
        dist = float(np.linalg.norm(y - x0))
        if dist + mu * s > s * (1 + 1e-12) or float(D.sd(y)) < mu * s * (1 - 1e-12):
            continue
        room = min(s - dist, dist - mu * s)
        if room > 0 and (best is None or room > best["start_radius"] + 1e-9 * s):
            best = {"center": y, "radius": mu * s, "start_radius": room}
    if best is None:
        raise ConstructionError(f"no exterior witness ball of radius {mu * s:.3g} within B(x0, {s:.3g})")
    return best


def _levels(D: Domain, x0: np.ndarray, delta: float, mu: float, R3: float, eps: float, gamma: float, m: int) -> list[dict]:
    """Concentric levels delta_m = delta > ... > delta_1 with their witnesses (outermost last)."""
    out = []
    d = delta
    for _ in range(m):
        s = d / (mu * R3)
        wit = find_witness(D, x0, s, mu)
        out.append({"delta": d, "scale_r": d / (2 * R3), "witness": wit})
        d = wit["start_radius"] - (1 + gamma) * eps
        if d <= 0 and len(out) < m:
            raise ConstructionError("eps too large for the requested number of levels")
    return out[::-1]


def run_game_regularity_probe(cfg: RunConfig) -> Report:
    """Probability of stopping inside B(x0, delta) from starts near a boundary point.

    Options: ``boundary_point``, ``mu`` (witness ratio), ``R3`` (default 4 R2
    with R1 = 1, R2 = 2/mu), ``deltas``, ``eta``, ``levels`` (number of
    concatenated balls), ``n_starts``, ``adversaries``, ``cap``.
    Reported, not asserted.
    """
    P = cfg.make_params()
    D = cfg.make_domain()
    opt = cfg.options
    x0 = np.asarray(opt.get("boundary_point", D.spec.get("boundary_point", [1.0] + [0.0] * (P.N - 1))), dtype=float)
    mu = float(opt.get("mu", D.spec.get("mu", 1.0 / 3.0)))
    R1, R2 = 1.0, 2.0 / mu
    R3 = float(opt.get("R3", 4.0 * R2))
    eta = float(opt.get("eta", 0.1))
    m = int(opt.get("levels", 1))
    n_starts = int(opt.get("n_starts", 4))
    cap = int(opt.get("cap", 10_000))
    advs = cfg.strategies.get("I", ["zero", "radial-push"])
    advs = advs if isinstance(advs, list) else [advs]
    theta0 = exit_bound(P.p, P.N, R1, R2, R3)
    report = Report("regularity", cfg.to_dict())
    report.notes.append(f"theta0 = {theta0!r}; {m} level(s) give theta0^m = {theta0**m!r}")
    rows, lrows = [], []
    deltas = opt.get("deltas", [0.5])
    for a, delta in enumerate(deltas):
        passing = None
        for b, e in enumerate(sorted(cfg.eps or [0.05], reverse=True)):
            try:
                levels = _levels(D, x0, float(delta), mu, R3, e, P.gamma, m)
            except ConstructionError as exc:
                report.notes.append(f"delta={delta}, eps={e}: {exc}")
                continue
            for k, lev in enumerate(levels):
                w = lev["witness"]
                r = lev["scale_r"]
                lrows.append(
                    {
                        "delta": delta,
                        "eps": e,
                        "level": k + 1,
                        "delta_k": lev["delta"],
                        "r": r,
                        "rR1": r * R1,
                        "rR2": r * R2,
                        "rR3": r * R3,
                        "start_radius": w["start_radius"],
                        **{f"y{i}": float(w["center"][i]) for i in range(P.N)},
                    }
                )
            pulls = [RadialPull(lev["witness"]["center"], 1.0) for lev in levels]
            radii = [lev["delta"] for lev in levels]
            sII = pulls[0] if m == 1 else Concatenated(pulls, radii, x0)
            hat = levels[0]["witness"]["start_radius"]
            rng = np.random.default_rng(_sub_seed(cfg.seed, a, b))
            pts = [x0.copy()]
            while len(pts) < n_starts:
                y = x0 + hat * rng.uniform(-1, 1, P.N)
                if np.linalg.norm(y - x0) < hat:
                    pts.append(y)
            ok_all = True
            for j, adv in enumerate(advs):
                spec = adv if isinstance(adv, dict) else {"name": adv}
                if spec["name"] in ("radial-pull", "radial-push"):
                    spec = {**spec, "center": spec.get("center", list(x0))}
                sI = build_strategy(spec, StrategyContext(D, P, e))
                for i, x in enumerate(pts):
                    x0s = np.repeat(x[None, :], cfg.n_runs, axis=0)
                    inside = lambda y: (np.linalg.norm(y - x0, axis=-1) < delta).astype(float)  # noqa: E731
                    res = run_batch(x0s, sI, sII, D, P, e, inside, _sub_seed(cfg.seed, a, b, j, i), cap=cap)
                    done = res.terminated
                    prob = float(res.payoff[done].sum() / max(done.sum(), 1))
                    met = prob >= 1 - eta
                    ok_all &= met
                    rows.append(
                        {
                            "delta": delta,
                            "delta_hat": hat,
                            "eps": e,
                            "adversary": spec["name"],
                            "start": i,
                            "distance_to_x0": float(np.linalg.norm(x - x0)),
                            "probability": prob,
                            "target": 1 - eta,
                            "met": met,
                            "unterminated_fraction": float(1 - done.mean()),
                        }
                    )
            if ok_all and passing is None:
                passing = e
        report.notes.append(f"delta={delta}: first passing eps (downward sweep) = {passing}")
    report.tables["regularity"] = rows
    report.tables["levels"] = lrows
    return report


def run_value_crosscheck(cfg: RunConfig) -> Report:
    """Monte Carlo game values against the solved field at sample points.

    Pairings (I, II): (greedy-max, greedy-min) two-sided, (zero, greedy-min)
    one-sided above, (greedy-max, zero) one-sided below. ``tol_disc`` is twice
    the largest change of the field at the sample points under halving h and
    under doubling the number of search directions (override with the
    ``tol_disc`` option). Options: ``cap``, ``max_unterminated`` (default 0.01).
    """
    P = cfg.make_params()
    D = cfg.make_domain()
    F = _function(cfg, P, {"name": "exp-mix"})
    e = cfg.eps[0] if cfg.eps else 0.1
    if cfg.options.get("check_interior", False):
        cfg.check_interior(P, D)
    opt = cfg.options
    cap = int(opt.get("cap", 10_000))
    W, op = _solve(cfg, D, P, F.value, e)
    pts = _starts(cfg, P.N)
    if not all(bool(D.contains(x)) for x in pts):
        raise ConfigurationError("cross-check points must lie inside the domain")
    base = np.array([float(eval_field(W, D, x)) for x in pts])
    report = Report("crosscheck", cfg.to_dict())
    tol_disc = opt.get("tol_disc")
    disc_rows = []
    if tol_disc is None:
        C = op.C
        W_h, _ = _solve(cfg, D, P, F.value, e, h=C.h / 2)
        n_dir = op.search.directions.shape[0]
        W_d, _ = _solve(cfg, D, P, F.value, e, n_directions=2 * n_dir)
        dh = np.array([abs(float(eval_field(W_h, D, x)) - b) for x, b in zip(pts, base)])
        dd = np.array([abs(float(eval_field(W_d, D, x)) - b) for x, b in zip(pts, base)])
        tol_disc = float(2.0 * (dh.max() + dd.max()))
        for i in range(len(pts)):
            disc_rows.append({"point": i, "change_half_h": dh[i], "change_double_directions": dd[i]})
    tol_disc = float(tol_disc)
    ctx = StrategyContext(D, P, e, field=W, config=op.C)
    gmax, gmin, zero = build_strategy("greedy-max", ctx), build_strategy("greedy-min", ctx), ZeroStrategy()
    pairings = [("greedy-max", "greedy-min", gmax, gmin, "two-sided"), ("zero", "greedy-min", zero, gmin, "upper"), ("greedy-max", "zero", gmax, zero, "lower")]
    rows = []
    max_unt = float(opt.get("max_unterminated", 0.01))
    valid = True
    for j, (nI, nII, sI, sII, side) in enumerate(pairings):
        for i, x in enumerate(pts):
            est = estimate_value(x, sI, sII, D, P, e, cfg.n_runs, _sub_seed(cfg.seed, j, i), F.value, cap)
            u = base[i]
            slack = 3 * est.std_error + tol_disc
            if side == "two-sided":
                ok = abs(est.mean - u) <= slack
            elif side == "upper":
                ok = est.mean <= u + slack
            else:
                ok = est.mean >= u - slack
            valid &= est.unterminated_fraction <= max_unt
            rows.append(
                {
                    "I": nI,
                    "II": nII,
                    "point": i,
                    **{f"x{k}": float(x[k]) for k in range(P.N)},
                    "u_eps": u,
                    **est.to_dict(),
                    "tol_disc": tol_disc,
                    "side": side,
                    "ok": ok,
                }
            )
            report.check(f"{nI} vs {nII} at point {i} ({side})", ok, mean=est.mean, u_eps=u, slack=slack)
    report.check("unterminated fraction within limit", valid, limit=max_unt)
    report.tables["crosscheck"] = rows
    if disc_rows:
        report.tables["discretization"] = disc_rows
    return report


RUNNERS: dict[str, Callable[[RunConfig], Report]] = {
    "expansion": run_expansion_study,
    "solve": run_solve,
    "simulate": run_simulation,
    "convergence": run_convergence_study,
    "annulus": run_annulus_walk,
    "regularity": run_game_regularity_probe,
    "crosscheck": run_value_crosscheck,
}


def run(cfg: RunConfig) -> Report:
    return RUNNERS[cfg.kind](cfg)


_UNIT_BALL = {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0}

DEFAULTS: dict[str, dict] = {
    "expansion": {
        "kind": "expansion",
        "function": {"name": "norm-squared"},
        "r": [0.05, 0.025],
        "options": {"x0": [1.0, 0.0], "bands": [0.1, 0.05]},
    },
    "solve": {"kind": "solve", "domain": _UNIT_BALL, "function": {"name": "exp-mix"}, "eps": [0.1]},
    "simulate": {
        "kind": "simulate",
        "domain": _UNIT_BALL,
        "eps": [0.1],
        "strategies": {"I": "zero", "II": "zero"},
        "x0": [[0.0, 0.0]],
        "options": {"cap": 10_000, "max_unterminated": 1e-3},
    },
    "convergence": {
        "kind": "convergence",
        "domain": {"kind": "annulus", "center": [0.0, 0.0], "r_in": 1.0, "r_out": 2.0},
        "function": {"name": "radial-p-harmonic", "p": 3.0},
        "eps": [0.1, 0.05, 0.025],
        "solver": {"tol": 1e-6, "init": "data"},
        "options": {"max_ratio": 0.7},
    },
    "annulus": {
        "kind": "annulus",
        "params": {"N": 3, "p": 2.0, "gamma": 3.0, "branch": "below"},
        "eps": [0.05],
        "strategies": {"II": "greedy-min", "I": ["zero", "greedy-max"]},
        "options": {"radii": [1.0, 2.0, 4.0], "xi": 0.05},
    },
    "regularity": {
        "kind": "regularity",
        "domain": _UNIT_BALL,
        "eps": [0.05, 0.02],
        "n_runs": 2000,
        "strategies": {"I": ["zero", "radial-push"]},
        "options": {"boundary_point": [1.0, 0.0], "mu": 1.0 / 3.0, "deltas": [0.5], "eta": 0.1, "levels": 1},
    },
    "crosscheck": {
        "kind": "crosscheck",
        "domain": _UNIT_BALL,
        "function": {"name": "exp-mix"},
        "eps": [0.1],
        "x0": [[0.0, 0.0], [0.5, 0.0], [0.0, -0.5], [-0.4, 0.4], [0.3, 0.6]],
    },
}


def default_config(kind: str, **over) -> RunConfig:
    """The built-in configuration of an experiment kind, with top-level overrides."""
    if kind not in DEFAULTS:
        raise ConfigurationError(f"no default config for {kind!r}")
    d = json.loads(json.dumps(DEFAULTS[kind]))
    d.update(over)
    return RunConfig.from_dict(d)
