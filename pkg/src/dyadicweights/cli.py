"""Command-line entry point: params, build-weight, apply, experiment, bellman."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import platform
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .construction import BudgetError, build_weight, forming_count, leaf_depth, solve_parameters
from .dyadic import DEFAULT_MAX_DEPTH, DepthLimitError, StepFunction, pointwise
from .experiments import CSV_COLUMNS, csv_row, maximal_norm_upper_bound, scaling_sweep
from .operators import (SignPattern, a1_characteristic, a2_characteristic, martingale_transform,
                        maximal_function, rubio_de_francia, square_function)
from .scalar import format_scalar, is_exact, parse_scalar

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
BELLMAN_CHECKS = ("hessian", "main", "obstacle", "phi", "u", "lines", "certificate")


class UsageError(Exception):
    pass


class OutputError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _levels(text: str):
    if text == "auto":
        return None
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("levels must be 'auto' or a nonnegative integer")
    return v


def _k_value(text: str):
    if text == "auto":
        return None
    return _positive_float(text)


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = p.add_argument_group("global options")
    g.add_argument("--mode", choices=("exact", "float"), default=d("exact"))
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--budget-intervals", type=_positive_int, default=d(2000),
                   help="maximum number of forming intervals built as a tree")
    g.add_argument("--budget-seconds", type=_positive_float, default=d(None))
    g.add_argument("--csv", default=d(None), help="CSV output path")
    g.add_argument("--json", default=d(None), help="JSON output path")
    g.add_argument("--quiet", action="store_true", default=d(False))
    g.add_argument("--config", default=d(None), help="flat key=value file; flags take precedence")


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadicweights", allow_abbrev=False,
                                     description="Recursive dyadic A2 weights, operators on them, and Bellman checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    # no prefix matching: bellman's --c would otherwise collide with --csv/--config
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("params", help="exact construction parameters")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)

    p = sub.add_parser("build-weight", help="build the truncated weight and its annotations")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--omega", default="1")
    p.add_argument("--out", default=None, help="step function output; the sidecar goes to OUT.json")

    p = sub.add_parser("apply", help="apply an operator to a stored step function")
    p.add_argument("--op", choices=("transform", "square", "maximal", "a2", "a1", "rdf"), required=True)
    p.add_argument("--weight", required=True)
    p.add_argument("--signs", default=None)
    p.add_argument("--input", default=None, help="function to transform (defaults to the weight)")
    p.add_argument("--terms", type=int, default=8)
    p.add_argument("--out", default=None)

    p = sub.add_parser("experiment", help="lower-bound and testing experiments")
    p.add_argument("--suite", choices=("mart", "square", "maximal", "weak", "all"), default="all")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--levels", type=_levels, default=None)
    p.add_argument("--full-levels", type=int, default=None, help="ledger depth (default 4**k)")

    p = sub.add_parser("bellman", help="numerical checks of the weak-type Bellman candidate")
    p.add_argument("--check", choices=BELLMAN_CHECKS + ("all",), default="all")
    p.add_argument("--Q", type=float, default=10.0)
    p.add_argument("--K", type=_k_value, default=None, help="'auto' or a positive number")
    p.add_argument("--c", type=_positive_float, default=0.125)
    p.add_argument("--a0", type=_positive_float, default=1.0)
    p.add_argument("--tau0", type=_positive_float, default=0.001)
    p.add_argument("--grid", type=_positive_int, default=200)
    p.add_argument("--samples", type=_positive_int, default=100_000)
    p.add_argument("--k", type=int, default=2, help="weight used by the certificate")
    p.add_argument("--levels", type=int, default=3)

    for action in sub.choices.values():
        _add_globals(action, suppress=True)
    return parser


def _read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}")
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _actions(parser: argparse.ArgumentParser) -> dict:
    return {a.dest: a for a in parser._actions if a.dest not in ("help", "version", "command")}


def parse_config(argv: list[str]) -> argparse.Namespace:
    """Parse flags, then fill anything left unset from the config file."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    args = parser.parse_args(argv)
    if known.config is None:
        return args
    conf = _read_config(known.config)
    sub = parser._subparsers._group_actions[0].choices.get(args.command) if args.command else None
    acts = _actions(parser)
    if sub is not None:
        acts.update(_actions(sub))
    unknown = sorted(set(conf) - set(acts))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    given = _explicit_dests(parser, sub, argv)
    for key, text in conf.items():
        if key in given or key == "config":
            continue
        act = acts[key]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                val = text.lower() in ("1", "true", "yes", "on")
            else:
                val = act.type(text) if act.type else text
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise UsageError(f"config key {key}: {e}")
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config key {key}: {val!r} not in {sorted(act.choices)}")
        setattr(args, key, val)
    return args


def _explicit_dests(parser, sub, argv) -> set:
    flags = {}
    for p in (parser, sub):
        if p is None:
            continue
        for a in p._actions:
            for s in a.option_strings:
                flags[s] = a.dest
    out = set()
    for tok in argv:
        name = tok.split("=", 1)[0]
        if name in flags:
            out.add(flags[name])
    return out


# --- output --------------------------------------------------------------------------------------

def _provenance(args: argparse.Namespace) -> dict:
    import numpy
    import scipy
    return {
        "command": args.command,
        # output locations are not inputs; leaving them out keeps reruns byte-identical
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "json", "csv", "out")},
        "versions": {"dyadicweights": __version__, "python": platform.python_version(),
                     "numpy": numpy.__version__, "scipy": scipy.__version__},
    }


def _write(path: str | None, text: str):
    if path is None:
        return
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}")


def _json_default(v):
    if is_exact(v):
        return format_scalar(v)
    if hasattr(v, "item"):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return str(v)


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def emit_report(args: argparse.Namespace, results: dict, passed: bool, timing: dict | None = None,
                csv_rows: list | None = None):
    doc = {"provenance": _provenance(args), "results": results, "passed": passed,
           "timestamp": {"utc": _dt.datetime.now(_dt.timezone.utc).isoformat(), "seconds": timing or {}}}
    _write(args.json, dump_json(doc))
    if args.csv is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in csv_rows or []:
            w.writerow(row)
        _write(args.csv, buf.getvalue())


def _say(args, text: str):
    if not args.quiet:
        print(text)


# --- subcommands -----------------------------------------------------------------------------------

def cmd_params(args) -> int:
    ks = [args.k] if args.k is not None else list(range(args.k_min, args.k_max + 1))
    out = []
    for k in ks:
        try:
            prm = solve_parameters(k)
        except ValueError as e:
            raise UsageError(str(e))
        r1, r2 = prm.residuals()
        row = prm.as_json()
        row["residuals"] = [format_scalar(r1), format_scalar(r2)]
        row["residuals_zero"] = r1 == 0 and r2 == 0
        row["six_eps_p"] = format_scalar(6 * prm.eps * prm.p)
        out.append(row)
        _say(args, f"k={k}  eps={row['eps']}  tau_w={row['tau_w']}  p={row['p']}  residuals={row['residuals']}")
    passed = all(r["residuals_zero"] for r in out)
    emit_report(args, {"params": out}, passed)
    return EXIT_OK if passed else EXIT_FAIL


def _budget_precheck(k: int, levels: int, budget: int):
    if k < 2 or levels < 0:
        raise UsageError("need k >= 2 and levels >= 0")
    n = forming_count(k, levels)
    if n > budget:
        raise UsageError(f"k={k}, levels={levels} needs {n} forming intervals; budget is {budget}")
    if leaf_depth(k, levels) > DEFAULT_MAX_DEPTH:
        raise UsageError(f"k={k}, levels={levels} reaches depth {leaf_depth(k, levels)} > {DEFAULT_MAX_DEPTH}")


def cmd_build_weight(args) -> int:
    _budget_precheck(args.k, args.levels, args.budget_intervals)
    try:
        omega = Fraction(args.omega) if args.mode == "exact" else parse_scalar(args.omega)
    except (ValueError, ZeroDivisionError) as e:
        raise UsageError(f"bad --omega: {e}")
    params = solve_parameters(args.k).with_levels(args.levels, omega=omega)
    aw = build_weight(params, mode=args.mode)
    text = aw.weight.to_text()
    if args.out is None:
        if not args.quiet:
            sys.stdout.write(text)
    else:
        _write(args.out, text)
        _write(args.out + ".json", aw.sidecar_json() + "\n")
    a2 = a2_characteristic(aw.weight)
    results = {"params": params.as_json(), "leaves": len(aw.weight.leaves), "a2": a2,
               "forming_intervals": forming_count(args.k, args.levels)}
    emit_report(args, results, True)
    return EXIT_OK


def _load_function(path: str) -> StepFunction:
    try:
        return StepFunction.from_text(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}")
    except ValueError as e:
        raise UsageError(f"{path}: {e}")


def cmd_apply(args) -> int:
    w = _load_function(args.weight)
    if args.mode == "float":
        w = w.map(float)
    f = _load_function(args.input) if args.input else w
    results: dict = {"op": args.op}
    out_fn = None
    if args.op == "transform":
        if args.signs is None:
            raise UsageError("--op transform needs --signs")
        try:
            signs = SignPattern.from_text(Path(args.signs).read_text())
        except OSError as e:
            raise UsageError(f"cannot read {args.signs}: {e}")
        out_fn = martingale_transform(f, signs)
    elif args.op == "square":
        out_fn = square_function(f)
    elif args.op == "maximal":
        try:
            out_fn = maximal_function(pointwise(f, "abs"))
        except ValueError as e:
            raise UsageError(str(e))
    elif args.op == "a2":
        results["value"] = a2_characteristic(w)
    elif args.op == "a1":
        results["value"] = a1_characteristic(w)
    else:
        M = maximal_norm_upper_bound(w.map(float))
        out_fn = rubio_de_francia(pointwise(f.map(float), "abs"), w, M, args.terms)
        results["M_norm"] = M
    if out_fn is not None:
        results["leaves"] = len(out_fn.leaves)
        if args.out is None:
            if not args.quiet:
                sys.stdout.write(out_fn.to_text())
        else:
            _write(args.out, out_fn.to_text())
    else:
        _say(args, f"{args.op} = {format_scalar(results['value'])}")
    emit_report(args, results, True)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.k_min < 2 or args.k_max < args.k_min:
        raise UsageError("need 2 <= k-min <= k-max")
    if args.levels is not None:
        for k in range(args.k_min, args.k_max + 1):
            _budget_precheck(k, args.levels, args.budget_intervals)
    reports = scaling_sweep(range(args.k_min, args.k_max + 1), args.levels, parallel=True, suite=args.suite,
                            mode=args.mode, budget_intervals=args.budget_intervals,
                            full_levels=args.full_levels, budget_seconds=args.budget_seconds, seed=args.seed)
    passed = all(r.passed for r in reports)
    for r in reports:
        bad = sorted(n for n, ok in r.checks.items() if not ok)
        _say(args, f"k={r.k} L={r.levels} " + " ".join(f"{n}={float(v):.6g}" for n, v in sorted(r.ratios.items()))
             + ("  FAILED: " + ",".join(bad) if bad else "  ok"))
    emit_report(args, {"experiments": [r.as_json(with_time=False) for r in reports]}, passed,
                timing={str(r.k): r.seconds for r in reports}, csv_rows=[csv_row(r) for r in reports])
    return EXIT_OK if passed else EXIT_FAIL


def cmd_bellman(args) -> int:
    from . import bellman as bm
    try:
        params = bm.BellmanParams(Q=args.Q, K=args.K, c_drift=args.c, a0=args.a0, tau0=args.tau0)
    except ValueError as e:
        raise UsageError(str(e))
    checks = BELLMAN_CHECKS if args.check == "all" else (args.check,)
    results = {"params": params.as_json()}
    timing = {}
    passed = True
    import time
    for name in checks:
        t0 = time.perf_counter()
        if name == "hessian":
            rep = bm.check_hessian_drift(params, n=args.grid)
        elif name == "main":
            rep = bm.check_main_inequality(params, samples=args.samples, seed=args.seed)
        elif name == "obstacle":
            rep = bm.check_obstacle(params)
        elif name == "phi":
            rep = bm.check_phi_inequality(params, seed=args.seed)
            res = bm.ode_residual()
            rep.stats["ode_residual"] = res
            rep.passed = rep.passed and res <= 1e-10
        elif name == "u":
            rep = bm.check_U_inequality(seed=args.seed)
        elif name == "lines":
            rep = bm.check_line_concavity(params, seed=args.seed)
        else:
            rep = _certificate_report(args, params)
        timing[name] = time.perf_counter() - t0
        results[name] = rep.as_json()
        passed = passed and rep.passed
        _say(args, f"{name}: {'pass' if rep.passed else 'FAIL'}  "
             + " ".join(f"{k}={_short(v)}" for k, v in rep.stats.items()))
    emit_report(args, results, passed, timing=timing)
    return EXIT_OK if passed else EXIT_FAIL


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _certificate_report(args, params):
    from . import bellman as bm
    from .operators import square_function as sq
    _budget_precheck(args.k, args.levels, args.budget_intervals)
    aw = build_weight(solve_parameters(args.k).with_levels(args.levels), mode="float")
    q = float(a2_characteristic(aw.weight))
    if params.Q < q:
        params = bm.BellmanParams(Q=q * (1 + 1e-9), c_drift=params.c_drift, a0=params.a0, tau0=params.tau0)
    s2 = sorted(v for _, v in sq(pointwise(aw.weight, "invert")).leaves)
    lams = sorted({s2[len(s2) // 2]} | {2.0 ** j for j in range(-4, 9)})
    rows, ok = [], True
    for lam in lams:
        try:
            c = bm.bellman_induction_certificate(aw, float(lam), params)
            rows.append(c.as_json())
            ok = ok and c.dominates
        except bm.CertificateError as e:
            rows.append({"lam": float(lam), "error": str(e)})
            ok = False
    stats = {"weights": f"k={args.k} L={args.levels}", "lambdas": len(lams), "Q": params.Q,
             "max_actual_over_bound": max((r["actual"] / r["bound"] for r in rows if "bound" in r), default=0.0)}
    return bm.CheckReport("certificate", ok, stats, [r for r in rows if "error" in r])


def _check_writable(*paths):
    for path in paths:
        if path is None:
            continue
        parent = Path(path).resolve().parent
        if not parent.is_dir() or (Path(path).exists() and Path(path).is_dir()):
            raise OutputError(f"cannot write {path}: no such directory or path is a directory")


COMMANDS = {"params": cmd_params, "build-weight": cmd_build_weight, "apply": cmd_apply,
            "experiment": cmd_experiment, "bellman": cmd_bellman}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help()
        return EXIT_OK
    try:
        args = parse_config(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    except UsageError as e:
        print(f"dyadicweights: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help()
        return EXIT_OK
    try:
        _check_writable(args.json, args.csv, getattr(args, "out", None))
    except OutputError as e:
        print(f"dyadicweights: error: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](args)
    except (UsageError, BudgetError, DepthLimitError) as e:
        print(f"dyadicweights: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OutputError as e:
        print(f"dyadicweights: error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
