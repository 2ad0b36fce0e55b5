"""Experiment configuration, orchestration and metrics."""

from __future__ import annotations

import configparser
import copy
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FsPath
from typing import Any, Sequence

import networkx as nx
import numpy as np

from .errors import ConfigError, GenerationFailed
from .graph import Channel, DemandMatrix, Topology, read_demand, read_topology
from .sim import EventLog, RebalanceConfig, SimConfig, Simulation, Transaction
from .sim.channel import MILLI
from .transport import make_scheme
from .workload import (
    SCENARIOS, SizeDistribution, default_sizes, gen_arrivals, gen_circulation_matrix,
    gen_dag_matrix, gen_mixed_matrix, load_size_distribution,
)

# ---- configuration ---------------------------------------------------------


@dataclass
class TopologyConfig:
    kind: str = "scalefree"  # scalefree | smallworld | file
    nodes: int = 10
    edges: int = 25
    path: str = ""
    capacity_dist: str = "constant"  # constant | uniform | path to a size file
    capacity_mean: float = 100.0
    delay: float = 0.03
    rewire: float = 0.1


@dataclass
class WorkloadConfig:
    kind: str = "circulation"  # circulation | dag | mixed | file | none
    rate_per_sender: float = 1.0
    permutations: int = 5
    dag_fraction: float = 0.0
    dag_pairs: int = 0
    dag_skew: float = 0.3
    demand_file: str = ""
    sizes: str = "synthetic"  # synthetic | constant | path to a size file
    size_value: float = 1.0
    size_scale: float = 1.0
    deadline: float = 5.0


@dataclass
class SchemeConfig:
    name: str = "spider"
    mtu: float = 1.0
    k: int = 4
    path_type: str = "widest"
    alpha: float = 10.0
    beta: float = 0.1
    w_init: float = 10.0
    grow_when_limited: bool = False
    probe_period: float = 0.2
    blacklist_time: float = 5.0
    tau: float = 0.2
    price_alpha: float = 0.1
    eta: float = 0.5
    kappa: float = 0.5
    delta: float = 0.5


@dataclass
class SimSection:
    policy: str = "LIFO"
    mark_threshold: float = 0.3
    queue_bound: float = 12000.0
    rebalance_trigger: float = math.inf
    rebalance_mode: str = "replenish"
    rebalance_delay: float = 0.0
    mark_on_backlog: bool = False
    check_conservation: bool = False
    log: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 1
    horizon: float = 110.0
    window_start: float = 80.0
    window_end: float = 100.0
    scenario: str = ""
    phase_switch: float = 40.0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    sim: SimSection = field(default_factory=SimSection)

    def validate(self) -> "ExperimentConfig":
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if not self.horizon > 0:
            bad("experiment.horizon", "must be positive")
        if not 0 <= self.window_start < self.window_end <= self.horizon:
            bad("experiment.window_start", "measurement window must lie inside [0, horizon]")
        if self.scenario and self.scenario not in SCENARIOS:
            bad("experiment.scenario", f"unknown scenario {self.scenario!r}")
        t, w, s, m = self.topology, self.workload, self.scheme, self.sim
        if t.kind not in ("scalefree", "smallworld", "file"):
            bad("topology.kind", f"unknown generator {t.kind!r}")
        if t.kind == "file" and not t.path:
            bad("topology.path", "required when kind = file")
        for name in ("capacity_mean", "delay"):
            if not getattr(t, name) > 0:
                bad(f"topology.{name}", "must be positive")
        if t.nodes < 2:
            bad("topology.nodes", "need at least two nodes")
        if w.kind not in ("circulation", "dag", "mixed", "file", "none"):
            bad("workload.kind", f"unknown workload {w.kind!r}")
        if not 0 <= w.dag_fraction <= 1:
            bad("workload.dag_fraction", "must lie in [0, 1]")
        for name in ("rate_per_sender", "size_value", "size_scale", "deadline", "dag_skew"):
            if not getattr(w, name) > 0:
                bad(f"workload.{name}", "must be positive")
        if w.permutations < 1:
            bad("workload.permutations", "must be at least 1")
        from .transport import SCHEMES

        if s.name not in SCHEMES:
            bad("scheme.name", f"unknown scheme {s.name!r}")
        for name in ("mtu", "w_init", "probe_period", "blacklist_time", "tau", "delta"):
            if not getattr(s, name) > 0:
                bad(f"scheme.{name}", "must be positive")
        if s.k < 1:
            bad("scheme.k", "must be at least 1")
        if m.policy not in ("LIFO", "FIFO", "EDF", "SPF"):
            bad("sim.policy", f"unknown policy {m.policy!r}")
        if not m.mark_threshold > 0 or not m.queue_bound > 0 or not m.rebalance_trigger > 0:
            bad("sim", "mark_threshold, queue_bound and rebalance_trigger must be positive")
        if m.rebalance_mode not in ("equalize", "replenish"):
            bad("sim.rebalance_mode", f"unknown mode {m.rebalance_mode!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def with_value(self, key: str, value) -> "ExperimentConfig":
        """Copy with one dotted key (``section.name`` or ``name``) replaced."""
        cfg = copy.deepcopy(self)
        target, name = _resolve(cfg, key)
        setattr(target, name, _coerce(key, type(getattr(target, name)), value))
        return cfg


_SECTIONS = {"topology": "topology", "workload": "workload", "scheme": "scheme", "sim": "sim"}


def _resolve(cfg, key):
    if "." in key:
        sec, name = key.split(".", 1)
        if sec == "experiment":
            target = cfg
        elif sec in _SECTIONS:
            target = getattr(cfg, sec)
        else:
            raise ConfigError(f"{key}: unknown section {sec!r}")
    else:
        target, name = cfg, key
    if name not in {f.name for f in fields(target)} or name in _SECTIONS:
        raise ConfigError(f"{key}: unknown key")
    return target, name


def _coerce(key, typ, raw):
    if not isinstance(raw, str):
        raw_s = str(raw)
    else:
        raw_s = raw.strip()
    try:
        if typ is bool:
            if isinstance(raw, bool):
                return raw
            low = raw_s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw_s)
        if typ is int:
            return int(raw_s)
        if typ is float:
            return float(raw_s)
        return raw_s
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw_s!r} as {typ.__name__}") from None


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a config from ``{section: {key: value}}``; the top section is ``experiment``."""
    cfg = ExperimentConfig()
    for sec, entries in data.items():
        if sec != "experiment" and sec not in _SECTIONS:
            raise ConfigError(f"{sec}: unknown section")
        for k, v in entries.items():
            key = f"{sec}.{k}"
            target, name = _resolve(cfg, key)
            setattr(target, name, _coerce(key, type(getattr(target, name)), v))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return config_from_mapping({s: dict(parser[s]) for s in parser.sections()})


def dumps_config(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    lines = ["[experiment]"]
    lines += [f"{k} = {v}" for k, v in d.items() if k not in _SECTIONS]
    for sec in _SECTIONS:
        lines += ["", f"[{sec}]"] + [f"{k} = {v}" for k, v in d[sec].items()]
    return "\n".join(lines) + "\n"


# ---- topology --------------------------------------------------------------


def _capacities(dist: str, mean: float, count: int, rng) -> np.ndarray:
    if dist == "constant":
        return np.full(count, float(mean))
    if dist == "uniform":
        return rng.uniform(0.5, 1.5, count) * mean
    sizes = load_size_distribution(dist)
    draw = sizes.sample(rng, count)
    return draw * (mean / sizes.mean())


def gen_topology(kind: str, n: int, edges: int, seed=None, capacity_dist: str = "constant",
                 capacity_mean: float = 100.0, delay: float = 0.03, rewire: float = 0.1,
                 max_tries: int = 100) -> Topology:
    """Connected small-world or scale-free channel graph.

    Small-world graphs have exactly ``edges`` channels (the ring degree is
    ``2 * edges / n``).  Scale-free graphs attach each new node with the
    ``m`` that brings ``m * (n - m)`` closest to ``edges``.  Channels start
    with half their capacity on each side.
    """
    rng = np.random.default_rng(seed)
    if kind == "smallworld":
        k, rem = divmod(2 * edges, n)
        if rem or k % 2 or not 2 <= k < n:
            raise ConfigError(f"topology.edges: {edges} edges on {n} nodes needs an even ring degree below n")

        def build(s):
            return nx.watts_strogatz_graph(n, k, rewire, seed=s)
    elif kind == "scalefree":
        m = min(range(1, n), key=lambda mm: (abs(mm * (n - mm) - edges), mm))

        def build(s):
            return nx.barabasi_albert_graph(n, m, seed=s)
    else:
        raise ConfigError(f"topology.kind: unknown generator {kind!r}")
    for _ in range(max_tries):
        g = build(int(rng.integers(2**31)))
        if nx.is_connected(g):
            break
    else:
        raise GenerationFailed(f"no connected {kind} graph after {max_tries} tries")
    es = sorted(tuple(sorted(e)) for e in g.edges())
    caps = _capacities(capacity_dist, capacity_mean, len(es), rng)
    return Topology(tuple(range(n)), tuple(Channel(u, v, float(c), delay) for (u, v), c in zip(es, caps)))


# ---- metrics ---------------------------------------------------------------


@dataclass
class MetricsReport:
    scheme: str
    seed: int
    window: tuple[float, float]
    generated: int = 0
    succeeded: int = 0
    failed: int = 0
    success_ratio: float = 1.0
    generated_volume: float = 0.0
    completed_volume: float = 0.0
    delivered_volume: float = 0.0
    normalized_throughput: float = 1.0
    latency_mean: float | None = None
    latency_p99: float | None = None
    rebalances: int = 0
    onchain: int = 0
    offloading_ratio: float | None = None
    residual_in_network: float = 0.0
    size_buckets: list[dict] = field(default_factory=list)
    per_flow: dict[str, float] = field(default_factory=dict)

    def scalars(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("size_buckets")
        d.pop("per_flow")
        d["window"] = f"{self.window[0]}:{self.window[1]}"
        return d


BUCKET_FIELDS = ("bucket", "lo", "hi", "count", "success_ratio")


def octile_buckets(sizes: np.ndarray, ok: np.ndarray) -> list[dict]:
    """Success ratio per size octile (edges are the 1/8 quantiles of ``sizes``)."""
    if len(sizes) == 0:
        return []
    edges = np.quantile(sizes, np.linspace(0, 1, 9))
    idx = np.clip(np.searchsorted(edges[1:-1], sizes, side="right"), 0, 7)
    out = []
    for b in range(8):
        sel = idx == b
        cnt = int(sel.sum())
        out.append({
            "bucket": b, "lo": float(edges[b]), "hi": float(edges[b + 1]), "count": cnt,
            "success_ratio": float(ok[sel].mean()) if cnt else None,
        })
    return out


def compute_metrics(txns: Sequence[Transaction], sim: Simulation, window, scheme: str,
                    seed: int) -> MetricsReport:
    w0, w1 = window
    rep = MetricsReport(scheme, seed, (w0, w1))
    inwin = [t for t in txns if w0 <= t.arrival < w1]
    rep.rebalances = sum(1 for r in sim.rebalances if w0 <= r.time < w1)
    rep.residual_in_network = sim.in_network() / MILLI
    if inwin:
        ok = np.array([t.succeeded for t in inwin])
        sizes = np.array([t.amount for t in inwin]) / MILLI
        rep.generated = len(inwin)
        rep.succeeded = int(ok.sum())
        rep.failed = rep.generated - rep.succeeded
        rep.success_ratio = rep.succeeded / rep.generated
        rep.generated_volume = float(sizes.sum())
        rep.completed_volume = float(sizes[ok].sum())
        rep.delivered_volume = sum(t.delivered for t in inwin) / MILLI
        rep.normalized_throughput = rep.completed_volume / rep.generated_volume
        lat = np.array([t.completed_at - t.arrival for t in inwin if t.succeeded])
        if len(lat):
            rep.latency_mean = float(lat.mean())
            rep.latency_p99 = float(np.percentile(lat, 99))
        rep.size_buckets = octile_buckets(sizes, ok)
        flows: dict[str, float] = {}
        for t in inwin:
            key = f"{t.src}-{t.dst}"
            flows[key] = flows.get(key, 0.0) + t.delivered / MILLI
        rep.per_flow = dict(sorted(flows.items()))
    # a failed payment would have to settle on-chain; so does every rebalance
    rep.onchain = rep.failed + rep.rebalances
    rep.offloading_ratio = rep.succeeded / rep.onchain if rep.onchain else None
    return rep


# ---- running ---------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: dict
    report: MetricsReport
    series: list[dict]
    log: str | None = None
    transactions: list[Transaction] = field(default_factory=list, repr=False)
    sim: Simulation | None = field(default=None, repr=False)


def build_scheme(s: SchemeConfig):
    per = {
        "spider": dict(mtu=s.mtu, k=s.k, path_type=s.path_type, alpha=s.alpha, beta=s.beta,
                       w_init=s.w_init, grow_when_limited=s.grow_when_limited),
        "waterfilling": dict(mtu=s.mtu, k=s.k, path_type=s.path_type, probe_period=s.probe_period),
        "shortest": {},
        "landmark": dict(k=s.k),
        "lnd": dict(blacklist_time=s.blacklist_time),
        "priceprobe": dict(mtu=s.mtu, k=s.k, path_type=s.path_type, tau=s.tau,
                           alpha=s.price_alpha, eta=s.eta, kappa=s.kappa, delta=s.delta),
    }
    return make_scheme(s.name, **per[s.name])


def _sizes(w: WorkloadConfig) -> SizeDistribution:
    if w.sizes == "synthetic":
        base = default_sizes()
    elif w.sizes == "constant":
        base = SizeDistribution.constant(w.size_value)
    else:
        base = load_size_distribution(w.sizes)
    return base.scaled(w.size_scale) if w.size_scale != 1.0 else base


def build_demand(cfg: ExperimentConfig, topo: Topology, rng) -> DemandMatrix:
    w = cfg.workload
    n = len(topo.nodes)
    nodes = topo.nodes
    if w.kind == "none":
        return DemandMatrix()
    if w.kind == "file":
        return read_demand(w.demand_file)
    if w.kind == "circulation":
        return gen_circulation_matrix(n, w.permutations, rng, nodes)
    if w.kind == "dag":
        return gen_dag_matrix(n, w.dag_pairs or 4 * n, w.dag_skew, rng, nodes)
    return gen_mixed_matrix(n, w.dag_fraction, rng, x=w.permutations, y=w.dag_pairs or None,
                            beta=w.dag_skew, nodes=nodes)


def prepare(cfg: ExperimentConfig) -> tuple[Topology, list[Transaction]]:
    """Topology and arrival stream; depends only on the seed and the workload settings."""
    topo_seed, work_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    w = cfg.workload
    sizes = _sizes(w)
    if cfg.scenario:
        sc = SCENARIOS[cfg.scenario](switch=cfg.phase_switch, horizon=cfg.horizon,
                                     delay=cfg.topology.delay)
        return sc.topology, sc.arrivals(np.random.default_rng(work_seed), sizes, w.deadline)
    t = cfg.topology
    if t.kind == "file":
        topo = read_topology(t.path)
    else:
        topo = gen_topology(t.kind, t.nodes, t.edges, np.random.default_rng(topo_seed),
                            t.capacity_dist, t.capacity_mean, t.delay, t.rewire)
    rng = np.random.default_rng(work_seed)
    demand = build_demand(cfg, topo, rng)
    if not len(demand):
        return topo, []
    txns = gen_arrivals(demand, cfg.horizon, rng, w.rate_per_sender, sizes, w.deadline)
    return topo, txns


def run_experiment(cfg: ExperimentConfig, keep_sim: bool = False) -> ExperimentResult:
    cfg.validate()
    topo, txns = prepare(cfg)
    m = cfg.sim
    rebal = None
    if math.isfinite(m.rebalance_trigger):
        rebal = RebalanceConfig(m.rebalance_trigger, m.rebalance_mode, m.rebalance_delay)
    simcfg = SimConfig(m.policy, m.mark_threshold, m.queue_bound, rebalance=rebal,
                       check_conservation=m.check_conservation, mark_on_backlog=m.mark_on_backlog)
    scheme = build_scheme(cfg.scheme)
    log = EventLog() if m.log else False
    sim = Simulation(topo, scheme, simcfg, log=log)
    for t in txns:
        sim.add_transaction(t)
    sim.run_until(cfg.horizon)
    report = compute_metrics(txns, sim, (cfg.window_start, cfg.window_end), cfg.scheme.name, cfg.seed)
    return ExperimentResult(
        cfg.to_dict(), report, _series(txns, cfg.horizon),
        sim.log.text() if sim.log is not None else None,
        txns, sim if keep_sim else None,
    )


def _series(txns, horizon: float, step: float = 1.0) -> list[dict]:
    nb = int(math.ceil(horizon / step))
    gen = np.zeros(nb)
    done = np.zeros(nb)
    for t in txns:
        b = min(int(t.arrival // step), nb - 1)
        gen[b] += t.amount / MILLI
        if t.succeeded:
            done[min(int(t.completed_at // step), nb - 1)] += t.amount / MILLI
    return [{"t": i * step, "generated": float(g), "completed": float(c)}
            for i, (g, c) in enumerate(zip(gen, done))]


# ---- sweeps ----------------------------------------------------------------


SWEEP_FIELDS = ("value", "runs", "success_mean", "success_min", "success_max",
                "throughput_mean", "throughput_min", "throughput_max")


def _run_one(args):
    cfg = args
    return run_experiment(cfg).report


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, seeds: Sequence[int] = (1,),
          workers: int = 1) -> list[dict]:
    """One run per (value, seed); mean, min and max across seeds per value."""
    jobs = [cfg.with_value(axis, v).with_value("experiment.seed", s).validate()
            for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            reports = list(ex.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    rows = []
    per = len(seeds)
    for i, v in enumerate(values):
        chunk = reports[i * per:(i + 1) * per]
        sr = [r.success_ratio for r in chunk]
        tp = [r.normalized_throughput for r in chunk]
        rows.append({
            "value": v, "runs": len(chunk),
            "success_mean": float(np.mean(sr)), "success_min": min(sr), "success_max": max(sr),
            "throughput_mean": float(np.mean(tp)), "throughput_min": min(tp),
            "throughput_max": max(tp),
            "reports": chunk,
        })
    return rows


# ---- output ----------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def report_to_dict(report: MetricsReport) -> dict:
    d = asdict(report)
    d["window"] = list(report.window)
    return d


def emit_results(result: ExperimentResult | MetricsReport, fmt: str, path) -> list[FsPath]:
    """Write metrics as JSON, or as a CSV row plus an octile-bucket CSV.

    Returns the files written.
    """
    if isinstance(result, ExperimentResult):
        report, config = result.report, result.config
    else:
        report, config = result, None
    path = FsPath(path)
    if fmt == "json":
        doc = {"metrics": report_to_dict(report)}
        if config is not None:
            doc["config"] = config
        path.write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}; use json or csv")
    row = report.scalars()
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: "" if v is None else v for k, v in row.items()})
    bpath = path.with_name(path.stem + "_buckets.csv")
    with bpath.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BUCKET_FIELDS)
        w.writeheader()
        for b in report.size_buckets:
            w.writerow({k: "" if b[k] is None else b[k] for k in BUCKET_FIELDS})
    return [path, bpath]


def load_report(path) -> MetricsReport:
    """Inverse of the JSON form of :func:`emit_results`."""
    d = json.loads(FsPath(path).read_text())["metrics"]
    d["window"] = tuple(d["window"])
    return MetricsReport(**d)


def write_sweep(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
