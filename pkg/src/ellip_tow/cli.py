"""Command-line entry point ``ellip-tow``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import RunConfig, default_config, reproduce, run, write_report
from .errors import EllipTowError
from .scaling import feasible_gamma_interval, make_params

# subcommand -> experiment kind
COMMANDS = {
    "expansion-check": "expansion",
    "solve-dpp": "solve",
    "simulate": "simulate",
    "convergence": "convergence",
    "annulus": "annulus",
    "regularity": "regularity",
    "crosscheck": "crosscheck",
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ellip-tow", description="Ellipsoid tug-of-war experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    pp = sub.add_parser("params", help="feasible scaling factors for (N, p)")
    pp.add_argument("--n", type=int, required=True)
    pp.add_argument("--p", type=float, required=True)
    pp.add_argument("--gamma", type=float)
    pp.add_argument("--branch", choices=["below", "above", "degenerate"])
    for name, kind in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {kind} experiment")
        sp.add_argument("--config", type=Path, help="run config or report manifest (JSON); defaults built in")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help=f"output directory (default out/{kind})")
    rp = sub.add_parser("reproduce", help="re-run a manifest and compare bit for bit")
    rp.add_argument("manifest", type=Path)
    return ap


def _params(args: argparse.Namespace) -> int:
    out: dict = {"N": args.n, "p": args.p, "intervals": {}}
    for b in ("below", "above"):
        try:
            out["intervals"][b] = feasible_gamma_interval(args.n, args.p, b).to_dict()
        except EllipTowError as exc:
            out["intervals"][b] = {"error": str(exc)}
    try:
        out["params"] = make_params(args.n, args.p, args.gamma, args.branch).to_dict()
        code = 0
    except EllipTowError as exc:
        out["error"] = str(exc)
        code = 1
    print(json.dumps(out, indent=2))
    return code


def _summary(report) -> str:
    lines = [f"{report.kind}: {'PASS' if report.passed else 'FAIL'}"]
    for c in report.checks:
        lines.append(f"  [{'pass' if c['passed'] else 'FAIL'}] {c['name']}")
    lines.extend(f"  note: {n}" for n in report.notes)
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "params":
            return _params(args)
        if args.command == "reproduce":
            report, same = reproduce(args.manifest)
            print(_summary(report))
            print("identical" if same else "DIFFERENT")
            return 0 if same else 1
        kind = COMMANDS[args.command]
        cfg = RunConfig.load(args.config) if args.config else default_config(kind)
        if cfg.kind != kind:
            raise EllipTowError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        if args.seed is not None:
            cfg.seed = int(args.seed)
        report = run(cfg)
        manifest = write_report(report, args.out or Path("out") / kind)
        print(_summary(report))
        print(f"manifest: {manifest}")
        return 0 if report.passed else 1
    except (EllipTowError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
