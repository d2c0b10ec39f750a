"""``otdc`` command-line front end.

Exit codes: 0 success, 2 input or configuration error, 3 a constraint or
metric verdict (violated constraint, single-group score file), 4 repair
did not converge (outputs are still written, with a status field).

Every option can also come from a flat ``key = value`` file passed with
``--config``; options given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import io
from .calibrate import CalibrationConfig, search_lambda
from .dist import conditional_mutual_information, empirical_distribution, parse_constraint, satisfies_ci
from .evaluation import CorruptionSpec, inject_corruption, statistical_distortion
from .fairness import metrics_panel
from .io import InputError
from .repair import RepairProblem, apply_cleaner, solve_probabilistic_cleaner
from .transport import COST_FUNCTIONS, SinkhornConfig

EXIT_OK, EXIT_INPUT, EXIT_VERDICT, EXIT_NOT_CONVERGED = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _constraint(text):
    try:
        return parse_constraint(text)
    except ValueError as exc:
        raise InputError(f"bad constraint {text!r}: {exc}") from None


def _existing(path):
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    return path


def _load(args, *paths):
    """Rows of each file plus one schema covering all of them."""
    tables = [io.read_table(p) for p in paths]
    header = tables[0][0]
    for p, (h, _) in zip(paths, tables):
        if h != header:
            raise InputError(f"{p}:1: header {h} differs from {header}")
    rows = [r for _, r in tables]
    if args.schema and args.schema != "infer":
        schema = io.read_schema(args.schema, header)
    else:
        schema = io.infer_schema(header, *rows)
    for p, r in zip(paths, rows):
        io.check_rows(p, schema, r)
    return header, schema, rows


def _sigma(args, schema):
    sigma = _constraint(args.constraint)
    try:
        sigma.validate(schema)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    return sigma


def _emit(args, report):
    text = io.dumps_report(report)
    if getattr(args, "report", None):
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_check_ci(args) -> int:
    _, schema, (rows,) = _load(args, args.data)
    sigma = _sigma(args, schema)
    P = empirical_distribution(rows, schema)
    ok, violation = satisfies_ci(P, sigma, args.tol)
    verdict = "satisfied" if ok else "violated"
    print(f"violation={io.format_float(violation)} verdict={verdict}")
    if args.report:
        io.write_report(args.report, {
            "constraint": str(sigma),
            "violation": violation,
            "cmi": conditional_mutual_information(P, sigma),
            "tol": args.tol,
            "verdict": verdict,
        })
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_repair(args) -> int:
    header, schema, (rows,) = _load(args, args.data)
    sigma = _sigma(args, schema)
    prob = RepairProblem(rows, schema, sigma, cost=args.cost, ci_tol=args.tol,
                         reg=SinkhornConfig(epsilon=args.epsilon))
    result = solve_probabilistic_cleaner(prob)
    repaired = apply_cleaner(rows, result.cleaner, args.seed)
    io.write_table(args.out, header, repaired)
    status = "converged" if result.converged else "not_converged"
    report = {
        "transport_cost": result.transport_cost,
        "ci_violation_before": result.ci_violation_before,
        "ci_violation_after": result.ci_violation_after,
        "iterations": result.iterations,
        "seed": args.seed,
        "status": status,
        "lifted": result.lifted,
        "constraint": str(sigma),
        "cost": args.cost,
        "rows": len(rows),
        "rows_changed": sum(a != b for a, b in zip(rows, repaired)),
    }
    _emit(args, report)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _scores(args):
    table = io.read_scores(args.scores)
    for g in ("a", "b"):
        if not table.has_group(g):
            raise _Verdict(f"{args.scores}: group {g!r} is absent; comparative metrics need both groups")
    return table


class _Verdict(Exception):
    pass


def cmd_fairness(args) -> int:
    table = _scores(args)
    try:
        panel = metrics_panel(table)
    except ValueError as exc:
        raise _Verdict(f"{args.scores}: {exc}") from None
    _emit(args, panel)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    table = _scores(args)
    targets = tuple(t.strip().upper() for t in args.targets.split(",") if t.strip())
    try:
        cfg = CalibrationConfig(targets, args.alpha, args.lambda_grid, args.quantile_grid)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        result = search_lambda(table, cfg)
    except ValueError as exc:
        raise _Verdict(f"{args.scores}: {exc}") from None
    io.write_scores(args.out, result.calibrated)
    _emit(args, {
        "lambda_star": result.lambda_star,
        "targets": list(cfg.gamma_targets),
        "before": result.metrics_before,
        "after": result.metrics_after,
        "objective_before": result.objective_before,
        "objective_after": result.objective_after,
        "mean_abs_change": result.mean_abs_change,
    })
    return EXIT_OK


def cmd_distortion(args) -> int:
    _, schema, (orig, rep) = _load(args, args.original, args.repaired)
    sigma = _sigma(args, schema) if args.constraint else None
    try:
        report = statistical_distortion(orig, rep, schema, args.cost, sigma)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(args, {
        "emd": report.emd,
        "repair_cost": report.repair_cost,
        "ci_violation_before": report.ci_violation_before,
        "ci_violation_after": report.ci_violation_after,
        "rows_changed": report.rows_changed,
        "cost": args.cost,
    })
    return EXIT_OK


def cmd_synth(args) -> int:
    header, schema, (rows,) = _load(args, args.data)
    drivers = tuple(d.strip() for d in (args.drivers or "").split(",") if d.strip())
    try:
        spec = CorruptionSpec(args.kind, args.target, drivers, args.rate, args.seed)
        spec.validate(schema)
    except (ValueError, KeyError) as exc:
        raise InputError(str(exc.args[0])) from None
    out = inject_corruption(rows, spec, schema)
    io.write_table(args.out, header, out)
    return EXIT_OK


def _rate(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otdc", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value file of option defaults")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_opts(p, *names):
        for name in names:
            p.add_argument(f"--{name}", required=True, type=_existing)
        p.add_argument("--schema", default="infer",
                       help="'infer' or a file of 'name = v1, v2, ...' lines")

    p = sub.add_parser("check-ci", help="measure a CI constraint on a dataset")
    data_opts(p, "data")
    p.add_argument("--constraint", required=True, help="e.g. 'A,B|C' or 'A1,A2 ; B | C'")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--report")
    p.set_defaults(func=cmd_check_ci)

    p = sub.add_parser("repair", help="repair a dataset to satisfy a CI constraint")
    data_opts(p, "data")
    p.add_argument("--constraint", required=True)
    p.add_argument("--cost", choices=sorted(COST_FUNCTIONS), default="hamming")
    p.add_argument("--epsilon", type=_positive, default=0.01)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("fairness", help="bias panel of a score file")
    p.add_argument("--scores", required=True, type=_existing)
    p.add_argument("--report")
    p.set_defaults(func=cmd_fairness)

    p = sub.add_parser("calibrate", help="barycenter score calibration with lambda search")
    p.add_argument("--scores", required=True, type=_existing)
    p.add_argument("--targets", default="tpr,fpr")
    p.add_argument("--alpha", type=_rate, default=None)
    p.add_argument("--lambda-grid", type=int, default=101)
    p.add_argument("--quantile-grid", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("distortion", help="OT distance between two datasets")
    data_opts(p, "original", "repaired")
    p.add_argument("--cost", choices=sorted(COST_FUNCTIONS), default="hamming")
    p.add_argument("--constraint", default=None)
    p.add_argument("--report")
    p.set_defaults(func=cmd_distortion)

    p = sub.add_parser("synth", help="inject synthetic noise or missingness")
    data_opts(p, "data")
    p.add_argument("--kind", choices=["noise", "mar", "mnar"], required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--drivers", default="")
    p.add_argument("--rate", type=_rate, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _with_config(argv: list[str]) -> list[str]:
    """Insert config-file options right after the subcommand, so that
    options given on the command line, parsed later, override them."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return rest
    config = io.read_config(known.config)
    commands = [i for i, a in enumerate(rest) if not a.startswith("-")]
    if not commands:
        return rest
    at = commands[0] + 1
    extra = []
    for key, value in config.items():
        extra += [f"--{key}", value]
    return rest[:at] + extra + rest[at:]


def _threads() -> int:
    raw = os.environ.get("OTDC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"OTDC_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise InputError("OTDC_THREADS must be at least 1")
    return n


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_with_config(argv))
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except InputError as exc:
        print(f"otdc: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _Verdict as exc:
        print(f"otdc: {exc}", file=sys.stderr)
        return EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
