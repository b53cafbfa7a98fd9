"""Command-line entry point.

    lqmroute run --config pool.json --policies lqm-cr,sw-ucb --patterns step --seeds 5
    lqmroute sweep --config pool.json --axis l_ref --values 750,1500,3000
    lqmroute verify all
    lqmroute make-pool --means 0.643,0.520,0.123 --queries 2000 --out-dir pools/hh
    lqmroute report --results results.csv --out summary.csv

Defaults for the shared flags can be set through environment variables named
``LQMROUTE_<FLAG>`` (e.g. ``LQMROUTE_JOBS=4``, ``LQMROUTE_ROUNDS=500``).
Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .harness import (
    DEFAULT_PATTERNS,
    aggregate,
    read_results,
    run_grid,
    run_metadata,
    sweep,
    SWEEP_AXES,
    write_results,
    write_summary,
)
from .domain import PATTERNS
from .routers import check_policy_name
from .simenv import ConfigError, SyntheticPoolSpec, load_pool, make_synthetic_pool, write_pool

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env(name, default):
    return os.environ.get(f"LQMROUTE_{name}", default)


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: no values given")
    return vals


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="pool config JSON")
    p.add_argument("--policies", default=_env("POLICIES", "lqm-cr,sw-ucb"))
    p.add_argument("--patterns", default=_env("PATTERNS", ",".join(DEFAULT_PATTERNS)))
    p.add_argument("--seeds", type=_positive_int, default=int(_env("SEEDS", 50)), help="number of seeds")
    p.add_argument("--seed-base", type=int, default=int(_env("SEED_BASE", 0)), help="first seed")
    p.add_argument("--rounds", type=_positive_int, default=int(_env("ROUNDS", 200)))
    p.add_argument("--sla-ms", type=float, default=_env("SLA_MS", None))
    p.add_argument("--out", default=_env("OUT", None), help="results file (omit to only print)")
    p.add_argument("--format", choices=("csv", "json"), default=_env("FORMAT", "csv"))
    p.add_argument("--jobs", type=_positive_int, default=int(_env("JOBS", os.cpu_count() or 1)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lqmroute", description="Latency-quality matching router simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a policy x pattern x seed grid")
    _grid_flags(run)

    sw = sub.add_parser("sweep", help="repeat the grid over one parameter axis")
    _grid_flags(sw)
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, help="comma-separated axis values")

    ver = sub.add_parser("verify", help="run verification suites")
    ver.add_argument("suite", nargs="?", default="all",
                     choices=("all", "scoring", "estimators", "regret", "separation", "differential",
                              "latency", "oracle"))

    mk = sub.add_parser("make-pool", help="write a synthetic pool (config + response table)")
    mk.add_argument("--means", required=True, help="per-provider mean quality, comma-separated")
    mk.add_argument("--queries", type=_positive_int, default=2000)
    mk.add_argument("--medians", default=None, help="moderate-state median latency per provider (ms)")
    mk.add_argument("--dist", choices=("bernoulli", "beta", "fixed"), default="bernoulli")
    mk.add_argument("--cluster-means", default=None,
                    help="per-cluster means, clusters separated by ';' (e.g. '0.9,0.3;0.3,0.9')")
    mk.add_argument("--names", default=None)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--dim", type=_positive_int, default=32)
    mk.add_argument("--out-dir", default=".")
    mk.add_argument("--stem", default="pool")

    rep = sub.add_parser("report", help="aggregate a results file into a summary table")
    rep.add_argument("--results", required=True)
    rep.add_argument("--group-by", default="policy,pattern")
    rep.add_argument("--out", default=None)
    return ap


def _load(args):
    pool = load_pool(args.config)
    if args.sla_ms is not None:
        pool = pool.replace(sla_ms=float(args.sla_ms))
    policies, patterns = _names(args.policies), _names(args.patterns)
    if not policies:
        raise UsageError("no policies given")
    for name in policies:
        msg = check_policy_name(name, pool.K)
        if msg:
            raise UsageError(msg)
    bad = [p for p in patterns if p not in PATTERNS]
    if bad or not patterns:
        raise UsageError(f"unknown load pattern(s) {bad}; valid patterns: {', '.join(PATTERNS)}")
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    return pool, policies, patterns, seeds


def _print_table(summary, keys, out=None):
    out = out or sys.stdout
    head = [k for k in keys] + ["n", "quality", "latency_ms", "sla_frac"]
    rows = [[str(d[k]) for k in keys] + [str(d["n"]), f"{d['mean_true_quality_mean']:.4f}",
                                         f"{d['mean_latency_ms_mean']:.1f}", f"{d['sla_frac_mean']:.3f}"]
            for d in summary]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    for r in [head, *rows]:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)


def cmd_run(args) -> int:
    pool, policies, patterns, seeds = _load(args)
    rows = run_grid(pool, policies, patterns, seeds, args.rounds, args.jobs)
    if args.out:
        meta = run_metadata(pool, rounds=args.rounds, seeds=f"{seeds[0]}..{seeds[-1]}")
        write_results(rows, args.out, args.format, K=pool.K, meta=meta)
    _print_table(aggregate(rows, ("policy", "pattern")), ("policy", "pattern"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = _floats(args.values, "--values")
    pool, policies, patterns, seeds = _load(args)
    summary = sweep(pool, args.axis, values, policies, patterns, seeds, args.rounds, args.jobs)
    for v in values:
        block = [d for d in summary if d["value"] == v]
        print(f"== {args.axis} = {v:g}")
        _print_table(block, ("policy",))
    if args.out:
        write_summary(summary, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    def show(r):
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<26} {r.seconds:7.2f}s  {r.detail}", flush=True)

    results = run_suite(args.suite, on_result=show)
    failed = [r.name for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)} ({total:.1f}s)")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed ({total:.1f}s)")
    return EXIT_OK


def cmd_make_pool(args) -> int:
    means = _floats(args.means, "--means")
    if any(not 0 <= m <= 1 for m in means):
        raise UsageError(f"--means: values must lie in [0, 1], got {means}")
    medians = _floats(args.medians, "--medians") if args.medians else None
    if medians is not None and (len(medians) != len(means) or min(medians) <= 0):
        raise UsageError("--medians: need one positive value per provider")
    cluster_means = None
    if args.cluster_means:
        cluster_means = [_floats(c, "--cluster-means") for c in args.cluster_means.split(";") if c.strip()]
        if any(len(c) != len(means) for c in cluster_means):
            raise UsageError("--cluster-means: every cluster needs one value per provider")
    names = _names(args.names) if args.names else None
    if names is not None and len(names) != len(means):
        raise UsageError("--names: need one name per provider")
    spec = SyntheticPoolSpec(means=means, n_queries=args.queries, dist=args.dist, cluster_means=cluster_means,
                             medians_ms=medians, names=names, seed=args.seed, dim=args.dim)
    pool = make_synthetic_pool(spec)
    path = write_pool(pool, args.out_dir, args.stem)
    load_pool(path)  # round-trip validation
    print(f"wrote {path} ({pool.K} providers, {len(pool.table)} queries)")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_results(args.results)
    keys = _names(args.group_by)
    bad = [k for k in keys if k not in ("policy", "pattern", "seed")]
    if bad or not keys:
        raise UsageError(f"--group-by: unknown keys {bad}; use policy, pattern, seed")
    summary = aggregate(rows, keys)
    _print_table(summary, keys)
    if args.out:
        write_summary(summary, args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "make-pool": cmd_make_pool,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print("error: invalid pool config", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
