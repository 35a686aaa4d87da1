"""Command-line interface: ``brwmax <subcommand>``.

Every subcommand that writes a CSV also writes ``<name>.manifest.json`` next
to it, holding the full resolved parameters. The CSV itself carries no
timestamp, so a rerun with the same manifest is byte-identical.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical
non-convergence, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import sys
from pathlib import Path

from . import __version__
from .acceptance import DEFAULT_SEED, FAULTS, claim_summary, inject_fault, run_all
from .analysis import EXACT_SPECIAL, MONTE_CARLO, duality_report, fit_table, kappa_estimate, phase_scan
from .errors import ConfigurationError, ConvergenceError, DomainError, ModeError, ModelValidationError
from .exact.passage import first_passage_pgf
from .exact.tail import scaled_tail, solve_tail
from .model import SUBCRITICAL
from .modelfile import BUILTIN_MODELS, load_model, validate_model_file
from .simulate.engine import SimConfig, default_workers
from .simulate.estimators import estimate_conditional, estimate_g_grid, estimate_tail

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, header: dict, columns: list[str], rows) -> None:
    """CSV with ``# key: value`` metadata lines above the column row."""
    buf = io.StringIO()
    for key, value in header.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def write_manifest(csv_path: Path, command: str, model_path: str, config: dict, seed) -> Path:
    manifest = {
        "command": command,
        "model_path": model_path,
        "config": config,
        "tool_version": __version__,
        "master_seed": seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = csv_path.with_suffix(".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_path(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(args.out_dir) / default_name


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi = part.split(":")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


# Supercritical runs that survive grow geometrically; a small cap keeps a block
# in memory and the rejection bias is at most q^cap.
SUPERCRITICAL_POP_CAP = 30


def _sim_config(args, model) -> SimConfig:
    cap = args.pop_cap
    if cap is None:
        cap = 1_000_000 if model.mode == SUBCRITICAL else SUPERCRITICAL_POP_CAP
    return SimConfig(replications=args.reps, max_generations=args.max_gen,
                     population_cap=cap, master_seed=args.seed, workers=args.workers)


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    problems = validate_model_file(args.model)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_CONFIG
    model = load_model(args.model)
    print(f"valid: {model.label}: offsets {list(model.jump.offsets)}, mean offspring "
          f"{model.m:.6g} ({model.mode})")
    return EXIT_OK


def cmd_solve(args) -> int:
    model = load_model(args.model)
    if args.discount is not None:
        return _solve_passage(args, model)
    table = solve_tail(model, args.horizon, args.tol)
    ell = scaled_tail(table, table.rho).values
    rows = [(n, float(table.values[n]), float(ell[n]), float(table.residual[n]),
             float(table.upper[n] - table.lower[n])) for n in range(table.report_limit + 1)]
    path = _out_path(args, "tail.csv")
    header = {"model": model.label, "horizon": table.horizon, "report_limit": table.report_limit,
              "tolerance": table.tolerance, "rho": repr(table.rho), "iterations": table.iterations,
              "tool_version": __version__}
    write_csv(path, header, ["n", "u", "ell", "residual", "bracket_gap"], rows)
    write_manifest(path, "solve", args.model, {"horizon": args.horizon, "tol": args.tol}, None)
    print(f"wrote {path} ({len(rows)} rows, window 0..{table.report_limit})")
    return EXIT_OK


def _solve_passage(args, model) -> int:
    sol = first_passage_pgf(model.jump, args.discount, args.horizon, args.tol)
    rows = [(n, args.discount, float(sol.pgf_of_level(n)), sol.depth, sol.truncation_bound)
            for n in range(args.horizon + 1)]
    path = _out_path(args, "passage.csv")
    write_csv(path, {"model": model.label, "tolerance": args.tol, "tool_version": __version__},
              ["n", "s", "phi", "depth", "truncation_bound"], rows)
    write_manifest(path, "solve", args.model,
                   {"horizon": args.horizon, "tol": args.tol, "discount": args.discount}, None)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    config = _sim_config(args, model)
    levels = _int_list(args.levels)
    header = {"model": model.label, **config.echo(), "tool_version": __version__}
    if args.c:
        est = estimate_g_grid(model, _float_list(args.c), levels, config)
        columns = ["c", "n", "point", "stderr", "ci_low", "ci_high", "reps", "successes", "excluded"]
        rows = [(c, n, e.point, e.stderr, e.ci95_low, e.ci95_high, e.replications_used,
                 e.successes, e.excluded) for (c, n), e in sorted(est.items())]
        name = "g.csv"
    elif args.a:
        est = estimate_conditional(model, _float_list(args.a), levels, config)
        columns = ["a", "n", "point", "stderr", "ci_low", "ci_high", "reps", "successes", "excluded"]
        rows = [(a, n, e.point, e.stderr, e.ci95_low, e.ci95_high, e.replications_used,
                 e.successes, e.excluded) for (a, n), e in sorted(est.items())]
        name = "conditional.csv"
    elif model.mode != SUBCRITICAL:
        rep = duality_report(model, levels, config)
        columns = ["level", "point", "stderr", "ci_low", "ci_high", "reps", "successes",
                   "excluded", "predicted"]
        rows = [(n, e.point, e.stderr, e.ci95_low, e.ci95_high, e.replications_used, e.successes,
                 e.excluded, rep.predicted[n]) for n, e in sorted(rep.unconditional.items())]
        header["extinction_probability"] = repr(rep.q)
        name = "tail.csv"
    else:
        est = estimate_tail(model, levels, config)
        columns = ["level", "point", "stderr", "ci_low", "ci_high", "reps", "successes", "excluded"]
        rows = [(n, e.point, e.stderr, e.ci95_low, e.ci95_high, e.replications_used, e.successes,
                 e.excluded) for n, e in sorted(est.items())]
        name = "tail.csv"
    path = _out_path(args, name)
    write_csv(path, header, columns, rows)
    write_manifest(path, "simulate", args.model,
                   {**config.echo(), "workers": config.workers, "levels": levels,
                    "c": args.c, "a": args.a}, config.master_seed)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_scan(args) -> int:
    model = load_model(args.model)
    c_grid = _float_list(args.c)
    n_grid = _int_list(args.n)
    config = _sim_config(args, model) if args.route == MONTE_CARLO else None
    scan = phase_scan(model, c_grid, n_grid, args.route, config)
    rows = [(c, n, float(scan.g_values[i, j]), float(scan.stderr[i, j]), scan.classification[c])
            for i, c in enumerate(scan.c_grid) for j, n in enumerate(scan.n_grid)]
    path = _out_path(args, "scan.csv")
    low, high = scan.bracket()
    header = {"model": model.label, "route": args.route, "threshold_bracket": f"({low}, {high})",
              "reference_threshold": scan.reference_threshold, "tool_version": __version__}
    write_csv(path, header, ["c", "n", "g", "stderr", "class"], rows)
    write_manifest(path, "scan", args.model,
                   {"c": c_grid, "n": n_grid, "route": args.route,
                    **(config.echo() if config else {})}, args.seed)
    print(f"wrote {path}; plateau up to c={low}, decay from c={high}")
    return EXIT_OK


def cmd_report(args) -> int:
    model = load_model(args.model)
    print(f"model {model.label}: mean offspring {model.m:.6g}, mode {model.mode}")
    if model.mode != SUBCRITICAL:
        config = _sim_config(args, model)
        rep = duality_report(model, range(0, 9), config)
        print(f"  extinction probability q = {rep.q!r}")
        print(f"  dual mean offspring = {rep.dual_mean!r}, dual decay constant = {rep.rho_dual!r}")
        for n in rep.levels:
            z = rep.z_unconditional[n]
            print(f"  n={n}: P(M>=n) = {rep.unconditional[n].point:.6f}, predicted "
                  f"{rep.predicted[n]:.6f}, z = {'exact' if z is None else f'{z:.2f}'}")
        return EXIT_OK
    table = solve_tail(model, args.horizon, args.tol)
    fit = fit_table(table)
    ell = scaled_tail(table, table.rho).values
    diag = kappa_estimate(ell, model.jump.right_range)
    print(f"  decay constant rho = {table.rho!r} (log rho = {fit.target:.10f})")
    print(f"  fitted rate over {fit.window}: {-fit.slope:.10f} (gap {fit.gap:.2e})")
    print(f"  scaled tail at window end: {diag.kappa:.10f}, range over last block "
          f"{diag.half_width:.2e}, {'oscillating' if diag.oscillating else 'settled'}")
    print(f"  certified window 0..{table.report_limit}, bracket gap {table.bracket_gap:.1e}")
    return EXIT_OK


def cmd_verify(args) -> int:
    only = set(args.only.split(",")) if args.only else None
    with inject_fault(args.inject_fault):
        results = run_all(workers=args.workers, seed=args.seed, only=only)
    for res in results:
        print(res.line())
    print()
    for claim, status, ids in claim_summary(results):
        print(f"{claim:32s} {status:12s} ({ids})")
    failed = [r.criterion for r in results if not r.passed]
    if failed:
        print(f"acceptance failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed for simulation")
    common.add_argument("--out-dir", default=".", help="directory for CSV and manifest output")
    common.add_argument("--workers", type=int, default=default_workers(),
                        help="worker processes (default from BRWMAX_WORKERS, else 1)")
    common.add_argument("--format", choices=["csv"], default="csv")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--reps", type=int, default=100_000)
    sim.add_argument("--max-gen", type=int, default=10_000)
    sim.add_argument("--pop-cap", type=int, default=None,
                     help="population cap (default 1e6 subcritical, 30 supercritical)")

    parser = argparse.ArgumentParser(prog="brwmax", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    model_help = f"model file or built-in name ({', '.join(BUILTIN_MODELS)})"

    p = sub.add_parser("validate", parents=[common], help="check a model file")
    p.add_argument("model", help=model_help)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", parents=[common], help="exact tail table (or passage pgf)")
    p.add_argument("model", help=model_help)
    p.add_argument("--horizon", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--discount", type=float, default=None,
                   help="tabulate E(s^tau_n) for this s instead of the tail")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", parents=[common, sim], help="Monte Carlo estimates")
    p.add_argument("model", help=model_help)
    p.add_argument("--levels", default="1:10", help="levels, e.g. 1:10 or 2,4,8")
    p.add_argument("--c", default=None, help="speeds c for rho^(cn) P(M_n >= cn)")
    p.add_argument("--a", default=None, help="time factors a for P(M_(an) >= n)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scan", parents=[common, sim], help="phase scan over speeds")
    p.add_argument("model", help=model_help)
    p.add_argument("--c", default="0.3,0.45,0.6,0.75,0.9")
    p.add_argument("--n", default="20,40,60")
    p.add_argument("--route", choices=[EXACT_SPECIAL, MONTE_CARLO], default=EXACT_SPECIAL)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("report", parents=[common, sim], help="plain-text summary for one model")
    p.add_argument("model", help=model_help)
    p.add_argument("--horizon", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--only", default=None, help="comma-separated criteria, e.g. A1,A4")
    p.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelValidationError,) as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, ModeError, DomainError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
