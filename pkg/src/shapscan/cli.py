"""Command line entry points: batch attribution, depth sweeps, and the service.

``explain`` attributes one CSV row against the rest of the file.
``benchmark`` sweeps approximation depths against the exact oracle on
seeded synthetic models and emits a deterministic CSV (wall times go to
a separate file on request, since timings are inherently run-dependent).
``serve`` runs the review service.

Exit codes: 0 ok, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ShapscanError
from .models import load_predictor
from .shapley import (
    DEFAULT_BACKGROUND_CAP,
    DEFAULT_EVAL_BUDGET,
    coalition_count,
    exact_shapley,
    hypershap,
    subsample_background,
)

BENCHMARK_FAMILIES = ("linear", "interaction", "piecewise")
BENCHMARK_MAX_M = 14


def _read_csv_matrix(path):
    """Read an RFC-4180 CSV with a header row into (header, float matrix)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ShapscanError(f"{path}: empty CSV, a header row is required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ShapscanError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ShapscanError(f"{path}:{lineno}: non-numeric value ({exc})") from exc
    if not rows:
        raise ShapscanError(f"{path}: no data rows")
    return header, np.array(rows, dtype=np.float64)


def _read_query(args, header, data):
    if args.query_file is not None:
        q_header, q_rows = _read_csv_matrix(args.query_file)
        index = {name: i for i, name in enumerate(q_header)}
        missing = [name for name in header if name not in index]
        if missing:
            raise ShapscanError(
                f"{args.query_file}: missing column {missing[0]!r} required by the data file"
            )
        return q_rows[0, [index[name] for name in header]]
    if not 0 <= args.query_index < data.shape[0]:
        raise ShapscanError(
            f"--query-index {args.query_index} out of range for {data.shape[0]} data rows"
        )
    return data[args.query_index]


def _load_model_spec(text):
    text = text.strip()
    if text.startswith("{"):
        spec = json.loads(text)
    else:
        spec = json.loads(Path(text).read_text())
    return load_predictor(spec)


def cmd_explain(args) -> int:
    header, data = _read_csv_matrix(args.data)
    query = _read_query(args, header, data)
    model = _load_model_spec(args.model)
    background = subsample_background(data, args.background_cap)
    attr = hypershap(
        background.rows, query, model, args.chi,
        background_cap=None, eval_budget=args.budget,
    )
    payload = {
        "phi0": attr.phi0,
        "phis": [float(v) for v in attr.phis],
        "prediction": attr.prediction,
        "chi": args.chi,
        "m": int(data.shape[1]),
        "n": int(background.n),
        "coalition_count": coalition_count(data.shape[1], args.chi),
    }
    out = json.dumps(payload, sort_keys=True) + "\n"
    if args.output == "-":
        sys.stdout.write(out)
    else:
        Path(args.output).write_text(out)
    return 0


def _make_benchmark_model(family, m, rng):
    """Seeded synthetic model; draws depend only on (family, m, rng state)."""
    if family == "linear":
        w = rng.normal(size=m)
        b = rng.normal()
        return lambda batch: np.asarray(batch, dtype=np.float64) @ w + b
    if family == "interaction":
        w = rng.normal(size=m)
        b = rng.normal()
        pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
        chosen = [pairs[k] for k in rng.choice(len(pairs), size=min(m, len(pairs)), replace=False)]
        coefs = rng.normal(size=len(chosen))

        def f(batch):
            batch = np.asarray(batch, dtype=np.float64)
            out = batch @ w + b
            for (i, j), c in zip(chosen, coefs):
                out = out + c * batch[:, i] * batch[:, j]
            return out

        return f
    # piecewise: one hidden ReLU layer, piecewise-linear in the inputs
    hidden = 2 * m
    W = rng.normal(size=(hidden, m)) / np.sqrt(m)
    c = rng.normal(size=hidden)
    u = rng.normal(size=hidden) / np.sqrt(hidden)

    def f(batch):
        batch = np.asarray(batch, dtype=np.float64)
        return np.maximum(batch @ W.T + c, 0.0) @ u

    return f


def cmd_benchmark(args) -> int:
    chis = args.chis
    rng = np.random.default_rng(args.seed)
    trials = []
    for trial in range(args.trials):
        model = _make_benchmark_model(args.family, args.m, rng)
        X = rng.normal(size=(args.n, args.m))
        q = rng.normal(size=args.m)
        exact = exact_shapley(X, q, model, eval_budget=args.budget)
        trials.append((model, X, q, exact))

    rows = []
    timings = []
    for chi in chis:
        maes = []
        for trial, (model, X, q, exact) in enumerate(trials):
            started = time.perf_counter()
            attr = hypershap(X, q, model, chi, eval_budget=args.budget)
            elapsed = time.perf_counter() - started
            mae = float(np.mean(np.abs(attr.phis - exact.phis)))
            maes.append(mae)
            rows.append([args.family, args.m, args.n, chi, trial,
                         coalition_count(args.m, chi), repr(mae)])
            timings.append([args.family, args.m, args.n, chi, trial, repr(elapsed)])
        rows.append([args.family, args.m, args.n, chi, "mean",
                     coalition_count(args.m, chi), repr(float(np.mean(maes)))])

    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "m", "n", "chi", "trial", "coalition_count", "mae"])
        writer.writerows(rows)
    if args.timing_output:
        with open(args.timing_output, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["family", "m", "n", "chi", "trial", "wall_time_s"])
            writer.writerows(timings)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_config

    config = load_config(args.config)
    if args.port is not None:
        config.port = args.port
    if args.host is not None:
        config.host = args.host
    if args.data_dir is not None:
        config.data_dir = args.data_dir
    if args.ui_dir is not None:
        config.ui_dir = args.ui_dir
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


def _chi_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad chi list {text!r}, expected e.g. 1,2,3")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("chi values must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapscan",
                                     description="Shapley attribution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_explain = sub.add_parser("explain", help="attribute one instance from a CSV file")
    p_explain.add_argument("--data", required=True, help="CSV file with a header row")
    target = p_explain.add_mutually_exclusive_group(required=True)
    target.add_argument("--query-index", type=int, help="row index into the data file")
    target.add_argument("--query-file", help="one-row CSV holding the query")
    p_explain.add_argument("--model", required=True,
                           help="predictor spec: inline JSON or a path to a JSON file")
    p_explain.add_argument("--chi", type=int, required=True, help="approximation depth")
    p_explain.add_argument("--output", default="-", help="output path (default stdout)")
    p_explain.add_argument("--background-cap", type=int, default=DEFAULT_BACKGROUND_CAP)
    p_explain.add_argument("--budget", type=int, default=DEFAULT_EVAL_BUDGET)
    p_explain.set_defaults(func=cmd_explain)

    p_bench = sub.add_parser("benchmark",
                             help="sweep chi against the exact oracle on synthetic models")
    p_bench.add_argument("--family", choices=BENCHMARK_FAMILIES, required=True)
    p_bench.add_argument("--m", type=int, required=True)
    p_bench.add_argument("--n", type=int, required=True)
    p_bench.add_argument("--chis", type=_chi_list, required=True, help="e.g. 1,2,4")
    p_bench.add_argument("--trials", type=int, default=5)
    p_bench.add_argument("--seed", type=int, required=True)
    p_bench.add_argument("--output", required=True, help="metrics CSV path")
    p_bench.add_argument("--timing-output", default=None,
                         help="optional CSV for wall times (not byte-stable)")
    p_bench.add_argument("--budget", type=int, default=DEFAULT_EVAL_BUDGET)
    p_bench.set_defaults(func=cmd_benchmark)

    p_serve = sub.add_parser("serve", help="run the review service")
    p_serve.add_argument("--config", default=None, help="JSON config file")
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--data-dir", default=None)
    p_serve.add_argument("--ui-dir", default=None, help="static review UI bundle")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "benchmark":
            if args.m > BENCHMARK_MAX_M:
                parser.error(f"--m must be <= {BENCHMARK_MAX_M} so the exact oracle stays feasible")
            if any(chi > args.m for chi in args.chis):
                parser.error("every chi must be <= m")
            if args.trials < 1:
                parser.error("--trials must be >= 1")
        if args.command == "explain" and args.chi < 1:
            parser.error("--chi must be >= 1")
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ShapscanError, OSError, json.JSONDecodeError) as exc:
        print(f"shapscan: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
