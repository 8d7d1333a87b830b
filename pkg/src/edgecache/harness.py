"""Experiment orchestration: multi-node simulation, ablations, metrics, CSV output.

A run streams a trace once.  Learned methods pretrain a shared initialization
on the first N days, then serve the remaining days online: at the start of
each day every node adapts from the initialization on its previous day's
events, optionally combines neighbor gradients, and the adapted policy serves
all of that day's requests.  Rule-based methods stream every day.  Overall
hit rates are aggregated over the online days for every method so the
comparisons share a measurement window.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import cachesim, meta, policy, sampling, workload
from .cachesim import EMPTY, ContentStats, RewardWeights, TaskEnv
from .meta import MetaConfig
from .policy import Layout, ParamVector, featurize
from .workload import SyntheticConfig, Task, Trace

RULE_METHODS = ("LRU", "LFU", "Random")
LEARNED_METHODS = ("LocalRL", "MetaOnly", "MetaCollab", "CMCES")
METHODS = RULE_METHODS + LEARNED_METHODS
ABLATION_METHODS = ("MetaOnly", "MetaCollab", "CMCES")

def default_meta_config() -> MetaConfig:
    """Pretraining configuration tuned for the default workload scale."""
    return MetaConfig(rl=policy.RLConfig(meta_lr=3e-3, H=50), mc_width=4,
                      max_epochs=300, tol=1e-4, patience=5, pairs_per_epoch=4,
                      val_every=50)


DEFAULT_WORKLOAD = SyntheticConfig(
    catalog_size=500,
    num_nodes=8,
    requests_per_day_per_node=2000,
    num_days=13,
    zipf_exponent=1.0,
    drift_fraction=0.3,
    heterogeneity=0.4,
    seed=0,
)


@dataclass
class ExperimentConfig:
    workload: SyntheticConfig | str = field(default_factory=lambda: DEFAULT_WORKLOAD)
    method: str = "LRU"
    seeds: tuple = (0,)
    cache_size: int = 20
    neighbor_count: int = 3         # None = all other nodes
    weights: RewardWeights = field(default_factory=RewardWeights)
    meta: MetaConfig = field(default_factory=default_meta_config)
    hidden: int = 32
    z_frac: float = 0.25
    feedback_step: float = 1.0
    combine_lr: float = 1e-3        # None = the adaptation learning rate
    window: int = None              # None = one day of ticks
    greedy_serve: bool = False      # argmax instead of sampling while serving
    serve_temperature: float = 0.2  # softmax sharpening while serving (1 = as trained)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.cache_size < 1:
            raise ValueError("cache_size must be positive")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if not 0.0 <= self.z_frac <= 1.0:
            raise ValueError("z_frac must be in [0, 1]")
        if self.serve_temperature <= 0.0:
            raise ValueError("serve_temperature must be positive")


@dataclass
class RunResult:
    method: str
    seed: int
    num_nodes: int
    day_node_hits: dict            # (day, node) -> (hits, requests)
    online_days: tuple
    comm_per_round: list           # floats transmitted per online round
    messages: np.ndarray           # (n, n) gradient-message counts
    wall_clock: dict

    def hit_rate(self, day: int, node: int) -> float:
        h, r = self.day_node_hits[(day, node)]
        return h / r if r else 0.0

    @property
    def online_hit_rate(self) -> float:
        hits = sum(self.day_node_hits[(d, j)][0]
                   for d in self.online_days for j in range(self.num_nodes))
        reqs = sum(self.day_node_hits[(d, j)][1]
                   for d in self.online_days for j in range(self.num_nodes))
        return hits / reqs if reqs else 0.0

    @property
    def floats_transmitted(self) -> int:
        return int(sum(self.comm_per_round))


@dataclass
class MetricsReport:
    runs: list = field(default_factory=list)

    def median_online_hit_rate(self, method: str) -> float:
        vals = [r.online_hit_rate for r in self.runs if r.method == method]
        if not vals:
            raise ValueError(f"no runs for method {method!r}")
        return float(np.median(vals))

    def per_seed(self, method: str) -> dict:
        return {r.seed: r.online_hit_rate for r in self.runs if r.method == method}

    def methods(self) -> list:
        seen = []
        for r in self.runs:
            if r.method not in seen:
                seen.append(r.method)
        return seen


def resolve_workload(cfg: ExperimentConfig, seed: int):
    """Trace plus its synthetic config (if synthetic) for one run seed."""
    if isinstance(cfg.workload, str):
        trace = workload.load_trace(cfg.workload)
        return trace, None
    wl = replace(cfg.workload, seed=cfg.workload.seed + seed)
    return workload.generate_trace(wl), wl


def neighbor_sets(n: int, E: int = None) -> list:
    """Ring neighborhoods: node j's neighbors are the next E nodes modulo n."""
    if E is None:
        E = n - 1
    E = min(E, n - 1)
    return [tuple((j + k) % n for k in range(1, E + 1)) for j in range(n)]


def neighbor_matrix_b(n: int, E: int = None) -> np.ndarray:
    """Uniform combination weights over each node's closed neighborhood.

    Circulant over the ring topology, hence doubly stochastic.
    """
    nbrs = neighbor_sets(n, E)
    B = np.zeros((n, n))
    for j, ns in enumerate(nbrs):
        B[j, j] = 1.0 / (len(ns) + 1)
        for k in ns:
            B[j, k] = 1.0 / (len(ns) + 1)
    return B


class _NodeRuntime:
    """Live per-node serving state: slots, membership set, request stats."""

    def __init__(self, capacity: int, catalog_size: int, window: int):
        self.slots = np.full(capacity, EMPTY, dtype=np.int64)
        self.member = set()
        self.stats = ContentStats(catalog_size, window)

    def insert(self, slot_index: int, content: int) -> None:
        old = self.slots[slot_index]
        if old != EMPTY:
            self.member.discard(int(old))
        self.slots[slot_index] = content
        self.member.add(int(content))


class _SlotsView:
    __slots__ = ("slots",)

    def __init__(self, slots):
        self.slots = slots


def _serve_day(day_idx, ev_contents, ev_nodes, ev_ts, nodes, nbrs, cfg,
               thetas=None, rule=None, rng=None):
    """Stream one day's merged events; returns per-node (hits, requests)."""
    n = len(nodes)
    C = cfg.cache_size
    hits = np.zeros(n, dtype=np.int64)
    reqs = np.zeros(n, dtype=np.int64)
    slot_views = [_SlotsView(nd.slots) for nd in nodes]
    for c, j, t in zip(ev_contents, ev_nodes, ev_ts):
        c = int(c)
        j = int(j)
        t = int(t)
        node = nodes[j]
        reqs[j] += 1
        if c in node.member:
            hits[j] += 1
        elif any(c in nodes[k].member for k in nbrs[j]):
            hits[j] += 1
        else:
            if rule is not None:
                a = cachesim.baseline_step(rule, slot_views[j], node.stats, c, rng)
            else:
                x = featurize(slot_views[j], node.stats, c, t)
                p = policy._action_probs(thetas[j], x, C)
                if cfg.greedy_serve:
                    a = int(np.argmax(p)) + 1
                else:
                    if cfg.serve_temperature != 1.0:
                        p = p ** (1.0 / cfg.serve_temperature)
                        p /= p.sum()
                    a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right")) + 1
                    if a > C + 1:
                        a = C + 1
            if a <= C:
                node.insert(a - 1, c)
        node.stats.record(c, t)
    return hits, reqs


def pretrain_initialization(cfg: ExperimentConfig, tasks, catalog_size: int,
                            window: int, seed: int) -> ParamVector:
    """Stage-1 pretraining of the shared policy initialization."""
    layout = Layout(policy.feature_dim(cfg.cache_size), cfg.hidden, cfg.cache_size + 1)
    env_factory = _env_factory(cfg, catalog_size, window)
    rng = np.random.default_rng([seed, 777])
    mcfg = cfg.meta
    if cfg.method == "MetaOnly" and mcfg.collaborative:
        mcfg = replace(mcfg, collaborative=False)
    return meta.meta_pretrain(tasks, mcfg, rng, env_factory, layout)


def _env_factory(cfg: ExperimentConfig, catalog_size: int, window: int):
    def factory(task: Task) -> TaskEnv:
        return TaskEnv(task.contents, task.timestamps, cfg.cache_size,
                       catalog_size, cfg.weights, window)
    return factory


def run_experiment(cfg: ExperimentConfig, shared: dict = None) -> MetricsReport:
    """Run one method across all configured seeds.

    ``shared`` optionally maps seed -> {"trace": Trace, "phi": ParamVector} to
    reuse workloads and pretrained initializations across methods.
    """
    cfg.validate()
    report = MetricsReport()
    for seed in cfg.seeds:
        pre = (shared or {}).get(seed, {})
        report.runs.append(_run_seed(cfg, seed, pre))
    return report


def _run_seed(cfg: ExperimentConfig, seed: int, pre: dict) -> RunResult:
    t0 = time.perf_counter()
    trace = pre.get("trace")
    if trace is None:
        trace, _ = resolve_workload(cfg, seed)
    n = trace.num_nodes
    catalog = trace.catalog_size
    window = cfg.window if cfg.window is not None else trace.day_length
    tasks = workload.split_tasks(trace, trace.num_days, n)
    task_grid = {(t.day_index, t.node_id): t for t in tasks}
    nbrs = neighbor_sets(n, cfg.neighbor_count)
    N = cfg.meta.num_pretrain_days
    method = cfg.method

    if method in RULE_METHODS:
        first_day = 0
    else:
        first_day = 1 if method == "LocalRL" else N
    online_days = tuple(range(N, trace.num_days))

    wall = {"pretrain": 0.0, "adapt": 0.0, "serve": 0.0}

    layout = Layout(policy.feature_dim(cfg.cache_size), cfg.hidden, cfg.cache_size + 1)
    env_factory = _env_factory(cfg, catalog, window)

    phi_star = None
    thetas = None
    matrix = None
    if method in ("MetaOnly", "MetaCollab", "CMCES"):
        phi_star = pre.get("phi")
        if phi_star is None:
            tp = time.perf_counter()
            phi_star = pretrain_initialization(cfg, tasks, catalog, window, seed)
            wall["pretrain"] = time.perf_counter() - tp
        thetas = [phi_star.copy() for _ in range(n)]
        if method == "CMCES":
            B = neighbor_matrix_b(n, cfg.neighbor_count)
            z = cfg.z_frac * sampling.z_upper_bound(B)
            matrix = sampling.CombinationMatrix(B=B, z=z)
    elif method == "LocalRL":
        thetas = [policy.init_params(layout, np.random.default_rng([seed, 55, j]),
                                     cfg.meta.init_scale) for j in range(n)]

    nodes = [_NodeRuntime(cfg.cache_size, catalog, window) for _ in range(n)]
    serve_rng = np.random.default_rng([seed, 99])
    combine_lr = cfg.combine_lr if cfg.combine_lr is not None else cfg.meta.rl.inner_lr

    day_node_hits = {}
    comm_per_round = []
    messages = np.zeros((n, n), dtype=np.int64)
    days = np.minimum(trace.timestamps // trace.day_length, trace.num_days - 1)

    for d in range(first_day, trace.num_days):
        # adaptation round before serving the day
        if thetas is not None and d >= 1:
            ta = time.perf_counter()
            floats_sent = 0
            if method == "LocalRL":
                for j in range(n):
                    env = env_factory(task_grid[(d - 1, j)])
                    rng = np.random.default_rng([seed, 11, d, j])
                    thetas[j] = policy.inner_adapt(thetas[j], env, cfg.meta.rl, rng)
            else:
                adapted = []
                for j in range(n):
                    env = env_factory(task_grid[(d - 1, j)])
                    rng = np.random.default_rng([seed, 11, d, j])
                    adapted.append(policy.inner_adapt(phi_star, env, cfg.meta.rl, rng))
                if method == "MetaOnly":
                    thetas = adapted
                else:
                    # Collaborative round: sampled (or all) neighbors transmit
                    # their previous day's request samples; the local node takes
                    # one weighted gradient step of its own adapted policy on
                    # that extra data.
                    new = []
                    for j in range(n):
                        if method == "MetaCollab":
                            w = np.zeros(n)
                            for k in nbrs[j]:
                                w[k] = 1.0 / (len(nbrs[j]) + 1)
                            w[j] = 1.0 / (len(nbrs[j]) + 1)
                            sel = list(nbrs[j])
                        else:  # CMCES
                            rng = np.random.default_rng([seed, 22, d, j])
                            w = sampling.sample_neighbors(matrix, j, rng)
                            sampling.self_weight(w, j)
                            sel = [k for k in nbrs[j] if w[k] > 0]
                        gmap = {j: None}
                        for k in sel:
                            task = task_grid[(d - 1, k)]
                            rng_k = np.random.default_rng([seed, 33, d, j, k])
                            trajs = policy.sample_trajectories(
                                env_factory(task), adapted[j], cfg.meta.rl.K,
                                cfg.meta.rl.H, rng_k)
                            gmap[k] = policy.policy_gradient(
                                adapted[j], trajs, cfg.meta.rl.gamma, center=True)
                            floats_sent += 2 * len(task)
                            messages[k, j] += 1
                        new.append(sampling.combine_update(adapted[j], gmap, w,
                                                           combine_lr))
                        if method == "CMCES":
                            rng_j = np.random.default_rng([seed, 33, d, j, j])
                            own = policy.sample_trajectories(
                                env_factory(task_grid[(d - 1, j)]), adapted[j],
                                cfg.meta.rl.K, cfg.meta.rl.H, rng_j)
                            g_local = policy.policy_gradient(
                                adapted[j], own, cfg.meta.rl.gamma, center=True)
                            sampling.feedback_update(matrix, j, g_local,
                                                     {k: gmap[k] for k in sel},
                                                     cfg.feedback_step)
                    thetas = new
            if method != "LocalRL" and d >= N:
                comm_per_round.append(floats_sent)
            wall["adapt"] += time.perf_counter() - ta

        ts = time.perf_counter()
        sel = days == d
        hits, reqs = _serve_day(d, trace.contents[sel], trace.nodes[sel],
                                trace.timestamps[sel], nodes, nbrs, cfg,
                                thetas=thetas,
                                rule=method.lower() if method in RULE_METHODS else None,
                                rng=serve_rng)
        wall["serve"] += time.perf_counter() - ts
        for j in range(n):
            day_node_hits[(d, j)] = (int(hits[j]), int(reqs[j]))

    wall["total"] = time.perf_counter() - t0
    return RunResult(method=method, seed=seed, num_nodes=n,
                     day_node_hits=day_node_hits, online_days=online_days,
                     comm_per_round=comm_per_round, messages=messages,
                     wall_clock=wall)


def ablation_suite(cfg: ExperimentConfig) -> MetricsReport:
    """Run MetaOnly / MetaCollab / CMCES on identical workloads and seeds.

    The trace is generated once per seed and shared by all three methods.
    MetaCollab and CMCES also share one collaboratively pretrained
    initialization, so their difference isolates the neighbor-sampling
    mechanism; MetaOnly pretrains its own initialization from local task
    pairs only.
    """
    cfg.validate()
    shared = {m: {} for m in ABLATION_METHODS}
    for seed in cfg.seeds:
        trace, _ = resolve_workload(cfg, seed)
        window = cfg.window if cfg.window is not None else trace.day_length
        tasks = workload.split_tasks(trace, trace.num_days, trace.num_nodes)
        phi = {}
        for method in ABLATION_METHODS:
            sub = replace(cfg, method=method)
            key = "local" if method == "MetaOnly" else "collab"
            if key not in phi:
                phi[key] = pretrain_initialization(sub, tasks, trace.catalog_size,
                                                   window, seed)
            shared[method][seed] = {"trace": trace, "phi": phi[key]}
    report = MetricsReport()
    for method in ABLATION_METHODS:
        sub = replace(cfg, method=method)
        report.runs.extend(run_experiment(sub, shared[method]).runs)
    return report


def comm_cost(report: MetricsReport) -> dict:
    """Total floats transmitted per method across all runs."""
    out = {}
    for r in report.runs:
        out[r.method] = out.get(r.method, 0) + r.floats_transmitted
    return out


def write_report(report: MetricsReport, outdir) -> tuple:
    """Write metrics.csv and comms.csv; returns their paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    metrics_path = os.path.join(outdir, "metrics.csv")
    comms_path = os.path.join(outdir, "comms.csv")
    with open(metrics_path, "w", newline="\n") as fh:
        fh.write("method,seed,day,node,hit_rate\n")
        for r in report.runs:
            for (d, j) in sorted(r.day_node_hits):
                fh.write(f"{r.method},{r.seed},{d},{j},{r.hit_rate(d, j):.17g}\n")
    with open(comms_path, "w", newline="\n") as fh:
        fh.write("method,seed,round,floats_sent\n")
        for r in report.runs:
            for i, v in enumerate(r.comm_per_round):
                fh.write(f"{r.method},{r.seed},{i},{v}\n")
    return metrics_path, comms_path
