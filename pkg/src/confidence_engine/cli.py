"""Command-line front end.

    confidence-engine check  MODEL
    confidence-engine solve  MODEL [--trace] [--max-iters N] [--tol X] [--out PATH] [--format json|csv]
    confidence-engine oracle MODEL [--method exact|gaussian] [--samples N] [--seed N] [--out PATH]
    confidence-engine export MODEL [--out PATH] [--format csv|json]

MODEL is a path to a ``.cid`` file, or ``@name`` for a bundled model (``@tpa``).

Exit codes: 0 success, 1 model diagnostics, 2 numeric failure, 3 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import bundled_model
from .dsl import compile_model, parse_with_diagnostics
from .errors import (
    DegenerateWeightsError,
    DomainError,
    ModelError,
    SingularEvidenceError,
    SingularLinearizationError,
)
from .oracle import exact_bayes_mc, gaussian_mc_check
from .solver import SolveOptions, SolveReport, solve

EXIT_OK, EXIT_MODEL, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3
SEED_ENV = "CONFIDENCE_ENGINE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _fmt(x: float) -> float:
    """Round to 10 significant digits for stable, diffable reports."""
    return float(f"{x:.10g}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confidence-engine", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("model", help="path to a .cid model, or @name for a bundled model")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--max-iters", type=int, default=50)
        p.add_argument("--tol", type=float, default=1e-9)

    common(sub.add_parser("check", help="parse and validate a model"))
    p = sub.add_parser("solve", help="run the iterated linearization")
    common(p)
    p.add_argument("--trace", action="store_true", help="also write the per-iteration CSV")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p = sub.add_parser("oracle", help="Monte Carlo check of the posterior")
    common(p)
    p.add_argument("--method", choices=("exact", "gaussian"), default="exact")
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("json",), default="json")
    p = sub.add_parser("export", help="write the posterior mean vector and covariance")
    common(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _resolve_model(arg: str) -> Path:
    if arg.startswith("@"):
        try:
            return bundled_model(arg[1:])
        except FileNotFoundError as err:
            raise UsageError(str(err)) from None
    path = Path(arg)
    if not path.is_file():
        raise UsageError(f"model file not found: {arg}")
    return path


def report_json(report: SolveReport, model_name: str, opts: SolveOptions) -> dict:
    return {
        "model": model_name,
        "options": {"max_iters": opts.max_iters, "tol": opts.tol},
        "converged": report.converged,
        "iters_used": report.iters_used,
        "trace": [
            {"iter": r.iteration, "values": {k: _fmt(v) for k, v in r.natural_means.items()}}
            for r in report.iterations
        ],
        "final": {
            name: {
                "working_mean": _fmt(f.working_mean),
                "working_var": _fmt(f.working_var),
                "natural_mean_delta": _fmt(f.natural_mean_delta),
                "natural_sd_delta": _fmt(f.natural_sd_delta),
                "natural_mean_quad": _fmt(f.natural_mean_quad),
                "natural_sd_quad": _fmt(f.natural_sd_quad),
            }
            for name, f in report.final.items()
        },
    }


def trace_csv(report: SolveReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(report.iterations[0].natural_means)
    w.writerow(["iter", *names])
    for r in report.iterations:
        w.writerow([r.iteration, *(f"{r.natural_means[n]:.10g}" for n in names)])
    return buf.getvalue()


def final_csv(report: SolveReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["working_mean", "working_var", "natural_mean_delta", "natural_sd_delta",
            "natural_mean_quad", "natural_sd_quad"]
    w.writerow(["variable", *cols])
    for name, f in report.final.items():
        w.writerow([name, *(f"{getattr(f, c):.10g}" for c in cols)])
    return buf.getvalue()


def export_csv(report: SolveReport) -> str:
    joint = report.joint
    names = [v.name for v in joint.ids]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable", "mean", *names])
    for i, name in enumerate(names):
        w.writerow([name, repr(float(joint.mean[i])), *(repr(float(c)) for c in joint.cov[i])])
    return buf.getvalue()


def _dump(obj: dict) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, out: str | None, stdout) -> None:
    if out is None:
        stdout.write(text)
    else:
        Path(out).write_text(text)


def _seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _dispatch(args, stdout) -> int:
    path = _resolve_model(args.model)
    try:
        text = path.read_bytes()
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err}") from None
    spec, diags = parse_with_diagnostics(text)
    if diags:
        for d in diags:
            stdout.write(d.format(str(path)) + "\n")
        return EXIT_MODEL
    model = compile_model(spec)

    if args.command == "check":
        stdout.write(f"ok: {len(model.variables)} variables, {len(model.evidence)} studies\n")
        return EXIT_OK

    try:
        opts = SolveOptions(max_iters=args.max_iters, tol=args.tol)
    except ValueError as err:
        raise UsageError(str(err)) from None

    if args.command == "oracle":
        if args.samples < 1:
            raise UsageError("--samples must be positive")
        seed = _seed(args.seed)
        if args.method == "exact":
            if args.samples < 10**4:
                raise UsageError("--samples must be at least 10000 for the exact method")
            est = exact_bayes_mc(model, args.samples, seed, workers=max(1, args.workers))
        else:
            report = solve(model, opts)
            est = gaussian_mc_check(
                report.diagram, report.observations, args.samples, seed,
                workers=max(1, args.workers),
            )
        payload = {
            "model": str(path),
            "method": args.method,
            "samples": est.samples,
            "seed": est.seed,
            "scale": est.scale,
            "ess": _fmt(est.ess),
            "estimates": {
                name: {
                    "mean": _fmt(e.mean),
                    "sd": _fmt(e.sd),
                    "mean_se": _fmt(e.mean_se),
                    "sd_se": _fmt(e.sd_se),
                }
                for name, e in est.estimates.items()
            },
        }
        _emit(_dump(payload), args.out, stdout)
        return EXIT_OK

    report = solve(model, opts)
    if args.command == "export":
        if args.format == "json":
            joint = report.joint
            payload = {
                "ids": [v.name for v in joint.ids],
                "mean": [float(x) for x in joint.mean],
                "cov": [[float(x) for x in row] for row in joint.cov],
            }
            _emit(json.dumps(payload) + "\n", args.out, stdout)
        else:
            _emit(export_csv(report), args.out, stdout)
        return EXIT_OK

    # solve
    if args.trace and args.out is None:
        stdout.write(trace_csv(report))
        return EXIT_OK
    if args.format == "csv":
        _emit(final_csv(report), args.out, stdout)
    else:
        _emit(_dump(report_json(report, str(path), opts)), args.out, stdout)
    if args.trace:
        Path(args.out).with_suffix(".trace.csv").write_text(trace_csv(report))
    return EXIT_OK


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    """Execute one command and return its exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args, stdout)
    except UsageError as err:
        stderr.write(f"{err}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except ModelError as err:
        for d in err.diagnostics:
            stderr.write(d.format() + "\n")
        return EXIT_MODEL
    except (SingularEvidenceError, DegenerateWeightsError, SingularLinearizationError,
            DomainError) as err:
        stderr.write(f"error: {err}\n")
        return EXIT_NUMERIC
    except OSError as err:
        stderr.write(f"error: {err}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
