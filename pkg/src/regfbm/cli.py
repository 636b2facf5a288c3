"""Command-line runner: ``regfbm run --config FILE``, ``regfbm list``, ``regfbm template NAME``.

Exit codes: 0 success (assertion failures are recorded, not fatal), 2 parse
error, 3 validation error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

from . import scenario

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if hasattr(v, "dtype"):
        return _fmt(v.item())
    return str(v)


def write_csv(table, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _error_record(code, kind, message, **extra):
    return {"status": "error", "exit_code": code, "error": kind, "message": message, **extra}


def _emit_error(record, out_dir, quiet):
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return record["exit_code"]


def run_scenario(tree, out_dir, quiet=False, threads=0):
    """Run a validated scenario; returns ``(exit_code, csv_path, metadata)``."""
    if threads > 0:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(threads))
    from . import runners
    from .errors import DomainError, GridError, NumericFailure, QuadratureError, SingularCovarianceError

    stem = tree["output"]["stem"] or tree["kind"]
    start = time.perf_counter()
    try:
        table = runners.run(tree)
    except (DomainError, GridError) as exc:
        return _emit_error(_error_record(EXIT_VALIDATION, type(exc).__name__, str(exc)), out_dir, quiet), None, None
    except (NumericFailure, QuadratureError, SingularCovarianceError, FloatingPointError) as exc:
        extra = {}
        for attr in ("step", "level", "indices"):
            if getattr(exc, attr, None) is not None:
                extra[attr] = getattr(exc, attr)
        return _emit_error(_error_record(EXIT_NUMERIC, type(exc).__name__, str(exc), **extra), out_dir, quiet), None, None
    wall = time.perf_counter() - start
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    write_csv(table, csv_path)
    meta = {
        "scenario_hash": scenario.scenario_hash(tree),
        "seed": tree["seed"],
        "wall_time_s": wall,
        "module": runners.MODULE_OF[tree["kind"]],
        "kind": tree["kind"],
        "assertions": {k: bool(v) for k, v in table.assertions.items()},
        "passed": table.passed,
        "summary": table.summary,
        "rows": len(table.rows),
        "versions": _versions(),
        "scenario": tree,
    }
    with open(os.path.join(out_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        n_ok = sum(meta["assertions"].values())
        print(f"{tree['kind']}: {n_ok}/{len(meta['assertions'])} assertions passed, {len(table.rows)} rows -> {csv_path}")
    return EXIT_OK, csv_path, meta


def _versions():
    import numpy
    import scipy

    return {"python": sys.version.split()[0], "numpy": numpy.__version__, "scipy": scipy.__version__}


def build_parser():
    ap = argparse.ArgumentParser(prog="regfbm", description="Scenario runner for the regularizing-noise toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or a built-in template")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario file (TOML)")
    src.add_argument("--template", help="name of a built-in template")
    run.add_argument("--seed", type=int, help="override the scenario seed (unsigned 64-bit)")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--threads", type=int, default=0, help="BLAS thread cap; 0 leaves the environment alone")
    run.add_argument("--quiet", action="store_true")
    sub.add_parser("list", help="list built-in templates")
    tp = sub.add_parser("template", help="print a built-in template")
    tp.add_argument("name")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name, kind, summary in scenario.list_scenarios():
            print(f"{name:24s} {kind:20s} {summary}")
        return EXIT_OK
    if args.command == "template":
        try:
            sys.stdout.write(scenario.template(args.name))
        except KeyError as exc:
            print(exc.args[0], file=sys.stderr)
            return EXIT_VALIDATION
        return EXIT_OK
    try:
        if args.config:
            tree = scenario.load(args.config)
        else:
            tree = scenario.parse(scenario.template(args.template))
        if args.seed is not None:
            tree["seed"] = args.seed
            tree = scenario.validate(tree)
        if args.threads < 0:
            raise scenario.ScenarioValidationError("--threads must be nonnegative")
    except scenario.ScenarioParseError as exc:
        return _emit_error(_error_record(EXIT_PARSE, "ScenarioParseError", str(exc)), args.out, args.quiet)
    except (scenario.ScenarioValidationError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        return _emit_error(_error_record(EXIT_VALIDATION, "ScenarioValidationError", msg), args.out, args.quiet)
    code, _, _ = run_scenario(tree, args.out, args.quiet, args.threads)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
