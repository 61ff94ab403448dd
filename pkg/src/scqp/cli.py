"""``scqp`` command line: solve, frontier, benchmark, gen-data.

Exit codes: 0 success, 1 usage or input error, 2 solve failure.
"""

import argparse
import json
import os
import sys

from .bench import FAMILIES, BenchConfig, pareto_violations, run_benchmark, trace_frontier
from .data import estimate_moments, generate_market, load_prices_csv, simulate_prices, to_returns, write_prices_csv
from .errors import ScqpError
from .objectives import MvpSpec, eval_moments
from .solver import ScqpSettings, solve

__all__ = ["cli_main", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _seed(args):
    env = os.environ.get("SCQP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SCQP_SEED must be an integer, got {env!r}") from None
    return args.seed


def _add_market_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", type=int, metavar="N", help="random market with N assets")
    src.add_argument("--prices", metavar="CSV", help="price file with header date,TICKER1,...")
    p.add_argument("--seed", type=int, default=0, help="seed for --synthetic (SCQP_SEED overrides)")
    p.add_argument("--n-mu", type=int, default=1, help="number of mean vectors for --synthetic")
    p.add_argument("--n-sigma", type=int, default=1, help="number of covariances for --synthetic")
    p.add_argument("--window", action="append", metavar="START:STOP",
                   help="return-row window for --prices (repeatable); default all rows")
    p.add_argument("--shrink", type=float, default=1e-4, help="covariance shrinkage for --prices")


def _parse_window(text):
    try:
        a, b = text.split(":")
        return (int(a) if a else 0, int(b) if b else None)
    except ValueError:
        raise UsageError(f"bad --window {text!r}; expected START:STOP") from None


def _market(args):
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic needs N >= 1")
        return generate_market(args.synthetic, args.n_mu, args.n_sigma, _seed(args))
    rets = to_returns(load_prices_csv(args.prices))
    windows = None
    if args.window:
        windows = []
        for w in args.window:
            start, stop = _parse_window(w)
            windows.append((start, rets.t if stop is None else stop))
    return estimate_moments(rets, windows, args.shrink)


def _write(text, path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _settings(args):
    kw = {}
    if args.gamma:
        kw["gamma"] = args.gamma
    if args.max_iter:
        kw["max_outer"] = args.max_iter
    if args.tol:
        kw["outer_tol"] = args.tol
    return ScqpSettings(**kw)


def _cmd_solve(args):
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = MvpSpec.from_json(fh.read())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read --spec: {exc}") from None
    market = _market(args)
    res = solve(spec, market, settings=_settings(args))
    if args.trace:
        res.trace.write_jsonl(args.trace)
    m = eval_moments(res.w_star, market)
    doc = {
        "status": res.status,
        "message": res.message,
        "objective": res.objective,
        "iterations": res.iterations,
        "residual": res.residual,
        "w": res.w_star.tolist(),
        "x": m.x.tolist(),
        "y": m.y.tolist(),
        "weights": res.weights.to_dict() if res.weights is not None else None,
    }
    _write(json.dumps(doc, indent=2), args.out)
    return 0 if res.converged else 2


def _cmd_frontier(args):
    try:
        params = [float(v) for v in args.params.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --params {args.params!r}") from None
    if len(params) < 2:
        raise UsageError("--params needs at least two values")
    market = _market(args)
    try:
        table = trace_frontier(market, args.family, params, warm=not args.no_warm)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [{"param": p.param, "x": p.x, "y": p.y, "nonzeros": p.nonzeros,
             "reduced_solves": list(p.reduced_solves), "status": p.status,
             "w": None if p.w is None else p.w.tolist()} for p in table]
    doc = {"family": args.family, "points": rows, "dominated_pairs": pareto_violations(table)}
    _write(json.dumps(doc, indent=2), args.out)
    return 0 if all(p.status == "Converged" for p in table) else 2


def _cmd_benchmark(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read --config: {exc}") from None
    config = BenchConfig.from_json(text)
    overrides = {}
    if args.out:
        overrides["output"] = args.out
    if args.trace_dir:
        overrides["trace_dir"] = args.trace_dir
    if overrides:
        config = BenchConfig(**{**config.__dict__, **overrides})
    report = run_benchmark(config)
    if not config.output:
        _write(report.to_json(indent=2), None)
    failed = [c for c in report.cells if c["status"] not in ("Converged",)]
    return 2 if failed else 0


def _cmd_gen_data(args):
    if args.assets < 1 or args.days < 2:
        raise UsageError("--assets must be >= 1 and --days >= 2")
    panel = simulate_prices(args.assets, args.days, _seed(args), args.vol_scale)
    write_prices_csv(panel, args.out)
    return 0


def build_parser():
    p = _Parser(prog="scqp", description="Mean-variance portfolio optimization by successive QPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one problem")
    s.add_argument("--spec", required=True, help="problem JSON")
    _add_market_args(s)
    s.add_argument("--trace", help="write the per-iteration trace as JSON lines")
    s.add_argument("--out", help="solution JSON path (default: standard output)")
    s.add_argument("--gamma", choices=["decay", "diminishing", "unit"])
    s.add_argument("--max-iter", type=int)
    s.add_argument("--tol", type=float)
    s.set_defaults(func=_cmd_solve)

    f = sub.add_parser("frontier", help="trace an efficient frontier")
    f.add_argument("--family", choices=sorted(FAMILIES), default="markowitz")
    f.add_argument("--params", required=True, help="comma-separated monotone parameter grid")
    f.add_argument("--no-warm", action="store_true", help="solve every point from scratch")
    _add_market_args(f)
    f.add_argument("--out")
    f.set_defaults(func=_cmd_frontier)

    b = sub.add_parser("benchmark", help="run a benchmark configuration")
    b.add_argument("--config", required=True, help="benchmark JSON")
    b.add_argument("--out", help="report JSON path")
    b.add_argument("--trace-dir", help="directory for per-cell traces")
    b.set_defaults(func=_cmd_benchmark)

    g = sub.add_parser("gen-data", help="write a synthetic price CSV")
    g.add_argument("--assets", type=int, required=True)
    g.add_argument("--days", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--vol-scale", type=float, default=0.01)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ScqpError as exc:
        print(f"scqp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help exits through argparse
        return int(exc.code or 0)


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
