"""Command line: gammalab {profile,flow,check,deficit,kernel,battery}."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ValidationError
from .harness import CHECKS, EXIT_USAGE, run


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration; explicit flags override it")
    p.add_argument("--engine", help="gauss | sphere:<n> | line:<name> | line:<potential.csv>")
    p.add_argument("--n", type=int, help="sphere dimension (shortcut for --engine sphere:<n>)")
    p.add_argument("--t", type=float, help="flow time")
    p.add_argument("--kappa", type=float, help="curvature constant used by the check")
    p.add_argument("--eps", type=float, help="level-set threshold or perturbation size")
    p.add_argument("--f", help="named test function, e.g. h3, probit:1,0, cap:0.3, halfline:0")
    p.add_argument("--param", action="append", default=[], metavar="KEY=JSON",
                   help="extra parameter, value parsed as JSON when possible")
    p.add_argument("--tol", action="append", default=[], metavar="KEY=VALUE", help="tolerance override")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gammalab", description="Gamma-calculus and isoperimetry laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("profile", help="isoperimetric profiles and their gap"))
    _common(sub.add_parser("flow", help="Bobkov functional along the flow"))
    p = sub.add_parser("check", help="one inequality check")
    p.add_argument("operation", choices=CHECKS)
    _common(p)
    p = sub.add_parser("deficit", help="deficit experiments on the sphere")
    p.add_argument("operation", nargs="?", default="sweep", choices=("sweep", "measure", "pipeline", "hscan"))
    p.add_argument("--family", help="cap-antipodal | cap-band | boundary-wobble")
    p.add_argument("--v", type=float, help="volume")
    p.add_argument("--delta", type=float, help="deficit for the pipeline operation")
    _common(p)
    _common(sub.add_parser("kernel", help="heat-kernel derivative scan"))
    p = sub.add_parser("battery", help="acceptance battery")
    p.add_argument("profile", nargs="?", default="quick", choices=("quick", "full"))
    _common(p)
    return ap


def _parse_kv(items, parse_json: bool):
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"expected KEY=VALUE, got {item!r}")
        if parse_json:
            try:
                val = json.loads(val)
            except json.JSONDecodeError:
                pass
        else:
            try:
                val = float(val)
            except ValueError as exc:
                raise ValidationError(f"tolerance {key} is not a number") from exc
        out[key] = val
    return out


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ValidationError("config must be a JSON object")
        if base.get("command", args.command) != args.command:
            raise ValidationError(f"config is for {base.get('command')!r}, not {args.command!r}")
    d = {"command": args.command, **{k: v for k, v in base.items() if k != "command"}}
    params = dict(d.get("params", {}))
    tols = dict(d.get("tolerances", {}))
    if args.n is not None:
        d["engine"] = f"sphere:{args.n}"
        params["n"] = args.n
    if args.engine:
        d["engine"] = args.engine
    for key in ("t", "kappa", "eps", "f", "family", "v", "delta"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if args.command == "battery":
        params["profile"] = args.profile
    if getattr(args, "operation", None):
        d["operation"] = args.operation
    params.update(_parse_kv(args.param, True))
    tols.update(_parse_kv(args.tol, False))
    d["params"], d["tolerances"] = params, tols
    if args.out:
        d["out"] = args.out
    if args.seed is not None:
        d["seed"] = args.seed
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValidationError, TypeError) as exc:
        print(f"gammalab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    res = run(cfg)
    status = {0: "ok", 1: "violation", 2: "usage error"}[res.exit_code]
    print(f"{cfg.command}: {status}; artifacts in {res.out_dir}")
    if res.message:
        print(res.message, file=sys.stderr)
    for path in res.violating:
        print(f"violating report: {path}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
