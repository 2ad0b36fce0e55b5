"""Command-line entry point: ``pcnflow <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, NotConverged, NumericalFailure, PcnError, StepSizeTooLarge
from .experiments import (
    ExperimentConfig, emit_results, gen_topology, load_config, load_report, run_experiment,
    sweep, write_sweep,
)
from .fluid import build_balanced_lp, build_rebalancing_lp, routed_rate, t_curve
from .graph import decompose, read_demand, read_topology, write_demand, write_topology
from .lp import dump_lp, solve_lp
from .paths import path_set
from .primal_dual import Steps, run_primal_dual
from .workload import (
    default_sizes, gen_arrivals, gen_circulation_matrix, gen_dag_matrix, gen_mixed_matrix,
    load_size_distribution,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"not a comma-separated list of numbers: {text!r}") from None


def _paths_for(args, topo, demand):
    return path_set(topo, list(demand), args.paths, args.k)


def _fmt_path(p) -> str:
    return "-".join(map(str, p))


def _emit(obj, as_json: bool, lines):
    if as_json:
        print(json.dumps(obj, indent=2))
    else:
        for line in lines:
            print(line)


# ---- commands --------------------------------------------------------------


def cmd_decompose(args):
    dem = read_demand(args.demand)
    dec = decompose(dem)
    obj = {
        "value": dec.value,
        "total": dem.total(),
        "dag_weight": dec.dag.total(),
        "circulation": [[i, j, r] for (i, j), r in dec.circulation.items()],
        "dag": [[i, j, r] for (i, j), r in dec.dag.items()],
    }
    _emit(obj, args.json, [
        f"circulation value  {dec.value:g}",
        f"DAG weight         {dec.dag.total():g}",
        f"total demand       {dem.total():g}",
    ])


def _solve(args):
    topo = read_topology(args.topology)
    dem = read_demand(args.demand)
    paths = _paths_for(args, topo, dem)
    if args.gamma is None:
        inst = build_balanced_lp(topo, dem, paths, args.delta)
    else:
        inst = build_rebalancing_lp(topo, dem, paths, args.delta, args.gamma)
    return topo, dem, paths, inst


def cmd_fluid_solve(args):
    _, _, _, inst = _solve(args)
    if args.lp_out:
        dump_lp(inst, args.lp_out)
    sol = solve_lp(inst)
    if not sol.optimal:
        raise NumericalFailure(f"LP is {sol.status.value}")
    rates = {_fmt_path(p): r for p, r in sol.rates.items() if r > 1e-12}
    obj = {"objective": sol.objective, "throughput": routed_rate(sol), "rates": rates,
           "rebalancing": {f"{u}>{v}": r for (u, v), r in sol.rebalancing.items() if r > 1e-12}}
    _emit(obj, args.json, [f"objective   {sol.objective:.6g}", f"throughput  {routed_rate(sol):.6g}"]
          + [f"  {k}  {v:.6g}" for k, v in rates.items()])


def cmd_primal_dual(args):
    topo, dem, paths, _ = _solve(args)
    steps = Steps(args.step, args.step, args.step, args.step)
    res = run_primal_dual(topo, dem, paths, args.delta, gamma=args.gamma, steps=steps,
                          max_iters=args.max_iters, tol=args.tol)
    rates = {_fmt_path(p): r for p, r in res.flows.items() if r > 1e-12}
    obj = {"throughput": res.throughput, "objective": res.objective,
           "iterations": res.iterations, "converged": res.converged, "rates": rates}
    _emit(obj, args.json, [f"throughput  {res.throughput:.6g}", f"iterations  {res.iterations}"]
          + [f"  {k}  {v:.6g}" for k, v in rates.items()])


def cmd_t_curve(args):
    topo = read_topology(args.topology)
    dem = read_demand(args.demand)
    curve = t_curve(topo, dem, _paths_for(args, topo, dem), args.delta, _floats(args.budgets))
    if args.json:
        _emit([{"budget": b, "throughput": t} for b, t in curve], True, [])
        return
    w = csv.writer(sys.stdout)
    w.writerow(["budget", "throughput"])
    for b, t in curve:
        w.writerow([f"{b:g}", f"{t:.9g}"])


def cmd_topo_gen(args):
    topo = gen_topology(args.kind, args.nodes, args.edges, args.seed, args.capacity_dist,
                        args.capacity_mean, args.delay_ms / 1000.0)
    if args.out:
        write_topology(topo, args.out)
    else:
        for c in topo.channels:
            print(f"{c.u} {c.v} {c.capacity:g} {c.delay * 1000:g}")


def cmd_workload_gen(args):
    rng = np.random.default_rng(args.seed)
    if args.kind == "circulation":
        dem = gen_circulation_matrix(args.nodes, args.permutations, rng)
    elif args.kind == "dag":
        dem = gen_dag_matrix(args.nodes, args.pairs or 4 * args.nodes, args.skew, rng)
    else:
        dem = gen_mixed_matrix(args.nodes, args.dag_fraction, rng, x=args.permutations,
                               y=args.pairs or None, beta=args.skew)
    if args.out:
        write_demand(dem, args.out)
    else:
        for (i, j), r in dem.items():
            print(f"{i} {j} {r!r}")
    if args.arrivals:
        sizes = load_size_distribution(args.sizes) if args.sizes else default_sizes()
        txns = gen_arrivals(dem, args.horizon, rng, args.rate, sizes, args.deadline)
        with open(args.arrivals, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "time", "src", "dst", "amount", "deadline"])
            for t in txns:
                w.writerow([t.id, f"{t.arrival:.9f}", t.src, t.dst, t.amount / 1000, f"{t.deadline:.9f}"])


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set or []:
        key, _, val = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = cfg.with_value(key.strip(), val)
    if args.seed is not None:
        cfg = cfg.with_value("experiment.seed", args.seed)
    return cfg.validate()


def cmd_simulate(args):
    cfg = _config(args)
    if args.log:
        cfg.sim.log = True
    res = run_experiment(cfg)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write(res.log or "")
    if args.out:
        for p in emit_results(res, args.format, args.out):
            print(f"wrote {p}", file=sys.stderr)
    _print_report(res.report)


def _print_report(r):
    print(f"scheme                 {r.scheme}")
    print(f"transactions           {r.generated}")
    print(f"success ratio          {r.success_ratio:.4f}")
    print(f"normalized throughput  {r.normalized_throughput:.4f}")
    if r.latency_mean is not None:
        print(f"latency mean / p99     {r.latency_mean:.3f}s / {r.latency_p99:.3f}s")
    off = "n/a" if r.offloading_ratio is None else f"{r.offloading_ratio:.2f}"
    print(f"on-chain transactions  {r.onchain} (offloading {off})")


def cmd_sweep(args):
    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = sweep(cfg, args.axis, values, seeds, workers=args.workers)
    if args.out:
        write_sweep(rows, args.out)
    print("value,runs,success_mean,success_min,success_max")
    for r in rows:
        print(f"{r['value']},{r['runs']},{r['success_mean']:.4f},{r['success_min']:.4f},{r['success_max']:.4f}")


def cmd_report(args):
    rep = load_report(args.input)
    if args.format == "csv":
        emit_results(rep, "csv", args.out or "report.csv")
    _print_report(rep)
    if rep.size_buckets:
        print("size octile   range              count  success")
        for b in rep.size_buckets:
            sr = "-" if b["success_ratio"] is None else f"{b['success_ratio']:.3f}"
            print(f"  {b['bucket']}   {b['lo']:9.3f} - {b['hi']:9.3f}  {b['count']:6d}  {sr}")


# ---- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcnflow", description="Payment channel network routing toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="split a demand matrix into circulation and DAG")
    p.add_argument("demand")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_decompose)

    def lp_args(p):
        p.add_argument("topology")
        p.add_argument("demand")
        p.add_argument("--paths", default="widest", choices=["widest", "shortest", "yen", "trails"])
        p.add_argument("-k", type=int, default=4, help="paths per pair (max hops for trails)")
        p.add_argument("--delta", type=float, default=1.0, help="in-flight delay in seconds")
        p.add_argument("--json", action="store_true")

    p = sub.add_parser("fluid-solve", help="solve the balanced or rebalancing routing LP")
    lp_args(p)
    p.add_argument("--gamma", type=float, default=None, help="allow on-chain rebalancing at this cost")
    p.add_argument("--lp-out", default=None, help="also write the LP instance")
    p.set_defaults(fn=cmd_fluid_solve)

    p = sub.add_parser("primal-dual", help="run the decentralized price iteration")
    lp_args(p)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--step", type=float, default=0.2)
    p.add_argument("--max-iters", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(fn=cmd_primal_dual)

    p = sub.add_parser("t-curve", help="throughput against rebalancing budget")
    lp_args(p)
    p.add_argument("--budgets", default="0,1,2,4,8")
    p.set_defaults(fn=cmd_t_curve)

    p = sub.add_parser("topo-gen", help="generate a channel graph")
    p.add_argument("--kind", default="scalefree", choices=["scalefree", "smallworld"])
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--edges", type=int, default=25)
    p.add_argument("--capacity-dist", default="constant")
    p.add_argument("--capacity-mean", type=float, default=100.0)
    p.add_argument("--delay-ms", type=float, default=30.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_topo_gen)

    p = sub.add_parser("workload-gen", help="generate a demand matrix and optional arrivals")
    p.add_argument("--kind", default="circulation", choices=["circulation", "dag", "mixed"])
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--permutations", type=int, default=5)
    p.add_argument("--pairs", type=int, default=0)
    p.add_argument("--skew", type=float, default=0.3)
    p.add_argument("--dag-fraction", type=float, default=0.2)
    p.add_argument("--out", default=None)
    p.add_argument("--arrivals", default=None, help="write a transaction CSV here")
    p.add_argument("--horizon", type=float, default=110.0)
    p.add_argument("--rate", type=float, default=None, help="average transactions/s per sender")
    p.add_argument("--sizes", default=None, help="size distribution file")
    p.add_argument("--deadline", type=float, default=5.0)
    p.set_defaults(fn=cmd_workload_gen)

    def cfg_args(p):
        p.add_argument("--config", default=None, help="INI experiment file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")

    p = sub.add_parser("simulate", help="run one experiment")
    cfg_args(p)
    p.add_argument("--out", default=None)
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--log", default=None, help="write the event log here")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run an experiment over a parameter axis and seeds")
    cfg_args(p)
    p.add_argument("--axis", required=True, help="dotted key, e.g. topology.capacity_mean")
    p.add_argument("--values", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="summarize a saved JSON result")
    p.add_argument("input")
    p.add_argument("--format", default="text", choices=["text", "csv"])
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NotConverged, StepSizeTooLarge) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
