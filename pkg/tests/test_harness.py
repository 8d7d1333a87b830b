import numpy as np
import pytest

from dataclasses import replace

from edgecache import workload
from edgecache.harness import (ABLATION_METHODS, ExperimentConfig, MetricsReport,
                               RunResult, ablation_suite, comm_cost,
                               neighbor_matrix_b, neighbor_sets, resolve_workload,
                               run_experiment, write_report)
from edgecache.meta import MetaConfig
from edgecache.policy import RLConfig
from edgecache.workload import SyntheticConfig, Trace

TINY_WL = SyntheticConfig(catalog_size=30, num_nodes=3, requests_per_day_per_node=60,
                          num_days=4, zipf_exponent=1.0, drift_fraction=0.2,
                          heterogeneity=0.3, seed=0)


def tiny_cfg(method, **kw):
    mc = MetaConfig(rl=RLConfig(K=1, H=30, M=1), mc_width=1, max_epochs=3,
                    pairs_per_epoch=2, num_pretrain_days=2)
    base = dict(workload=TINY_WL, method=method, seeds=(0,), cache_size=4,
                hidden=8, meta=mc)
    base.update(kw)
    return ExperimentConfig(**base)


def manual_trace(num_nodes, catalog, contents, nodes):
    ts = np.arange(len(contents), dtype=np.int64)
    return Trace(num_nodes=num_nodes, catalog_size=catalog, num_days=1,
                 day_length=len(contents), timestamps=ts,
                 contents=np.array(contents, dtype=np.int64),
                 nodes=np.array(nodes, dtype=np.int64))


# ---------------------------------------------------------------- validation

def test_config_rejects_unknown_method():
    with pytest.raises(ValueError):
        tiny_cfg("FancyNet").validate()


def test_config_rejects_bad_scalars():
    with pytest.raises(ValueError):
        tiny_cfg("LRU", cache_size=0).validate()
    with pytest.raises(ValueError):
        tiny_cfg("LRU", seeds=()).validate()
    with pytest.raises(ValueError):
        tiny_cfg("CMCES", z_frac=1.5).validate()
    with pytest.raises(ValueError):
        tiny_cfg("MetaOnly", serve_temperature=0.0).validate()


# ------------------------------------------------------------- neighborhoods

def test_neighbor_sets_full():
    nbrs = neighbor_sets(5)
    for j, ns in enumerate(nbrs):
        assert sorted(ns) == sorted(set(range(5)) - {j})


def test_neighbor_sets_ring():
    nbrs = neighbor_sets(5, 2)
    assert nbrs[0] == (1, 2)
    assert nbrs[4] == (0, 1)


def test_neighbor_matrix_doubly_stochastic():
    for n, E in ((5, 2), (8, None), (6, 3)):
        B = neighbor_matrix_b(n, E)
        assert np.all(B >= 0)
        assert np.allclose(B.sum(axis=0), 1.0)
        assert np.allclose(B.sum(axis=1), 1.0)
    assert np.allclose(neighbor_matrix_b(5, 2)[0, [0, 1, 2]], 1 / 3)


# ------------------------------------------------------- rule-based serving

def test_lru_hand_simulation():
    # C=2, single node: replay [1,2,1,3,1,2,4,1] by hand -> hits at t2 and t4.
    trace = manual_trace(1, 5, [1, 2, 1, 3, 1, 2, 4, 1], [0] * 8)
    cfg = tiny_cfg("LRU", cache_size=2)
    rep = run_experiment(cfg, {0: {"trace": trace}})
    assert rep.runs[0].day_node_hits[(0, 0)] == (2, 8)


def test_neighbor_hits_counted_without_insertion():
    # node 1 finds content 1 in node 0's cache both times; its own cache
    # stays empty, so a hit is recorded but nothing is evicted or inserted.
    trace = manual_trace(2, 3, [1, 1, 1], [0, 1, 1])
    cfg = tiny_cfg("LRU", cache_size=1)
    rep = run_experiment(cfg, {0: {"trace": trace}})
    run = rep.runs[0]
    assert run.day_node_hits[(0, 0)] == (0, 1)
    assert run.day_node_hits[(0, 1)] == (2, 2)


def test_rule_methods_consume_every_event_once():
    cfg = tiny_cfg("LFU")
    rep = run_experiment(cfg)
    run = rep.runs[0]
    trace, _ = resolve_workload(cfg, 0)
    tasks = workload.split_tasks(trace, trace.num_days, trace.num_nodes)
    sizes = {(t.day_index, t.node_id): len(t) for t in tasks}
    assert {k: v[1] for k, v in run.day_node_hits.items()} == sizes
    assert sum(v[1] for v in run.day_node_hits.values()) == len(trace.timestamps)


def test_oversized_cache_rarely_misses():
    # Cache as large as the catalog: each content misses at most once per node.
    wl = replace(TINY_WL, catalog_size=10, drift_fraction=0.0, heterogeneity=0.0)
    cfg = tiny_cfg("LRU", workload=wl, cache_size=10)
    run = run_experiment(cfg).runs[0]
    for j in range(wl.num_nodes):
        misses = sum(v[1] - v[0] for (d, jj), v in run.day_node_hits.items() if jj == j)
        assert misses <= wl.catalog_size


# ------------------------------------------------------------- determinism

def test_run_experiment_deterministic():
    for method in ("Random", "MetaOnly"):
        a = run_experiment(tiny_cfg(method)).runs[0]
        b = run_experiment(tiny_cfg(method)).runs[0]
        assert a.day_node_hits == b.day_node_hits
        assert a.comm_per_round == b.comm_per_round


def test_write_report_byte_identical(tmp_path):
    rep = run_experiment(tiny_cfg("Random", seeds=(0, 1)))
    p1 = write_report(rep, tmp_path / "a")
    p2 = write_report(rep, tmp_path / "b")
    for x, y in zip(p1, p2):
        assert open(x, "rb").read() == open(y, "rb").read()


def test_resolve_workload_offsets_seed():
    cfg = tiny_cfg("LRU")
    trace, wl = resolve_workload(cfg, 3)
    assert wl.seed == TINY_WL.seed + 3
    direct = workload.generate_trace(replace(TINY_WL, seed=TINY_WL.seed + 3))
    assert np.array_equal(trace.contents, direct.contents)


def test_resolve_workload_from_file(tmp_path):
    trace = workload.generate_trace(TINY_WL)
    path = tmp_path / "trace.csv"
    workload.save_trace(trace, path)
    cfg = tiny_cfg("LRU", workload=str(path))
    loaded, wl = resolve_workload(cfg, 0)
    assert wl is None
    assert np.array_equal(loaded.contents, trace.contents)


# ------------------------------------------------------- learned scheduling

def test_localrl_serves_from_day_one():
    run = run_experiment(tiny_cfg("LocalRL")).runs[0]
    days = {d for d, _ in run.day_node_hits}
    assert days == set(range(1, TINY_WL.num_days))
    assert run.online_days == tuple(range(2, TINY_WL.num_days))


def test_meta_methods_serve_online_days_only():
    run = run_experiment(tiny_cfg("MetaOnly")).runs[0]
    days = {d for d, _ in run.day_node_hits}
    assert days == set(range(2, TINY_WL.num_days))


# --------------------------------------------------- communication accounting

def test_non_collaborative_methods_send_nothing():
    for method in ("LRU", "MetaOnly", "LocalRL"):
        run = run_experiment(tiny_cfg(method)).runs[0]
        assert run.floats_transmitted == 0
        assert np.all(run.messages == 0)


def test_full_broadcast_comm_volume():
    # each neighbor ships its whole previous day: 2 floats per request event
    cfg = tiny_cfg("MetaCollab")
    run = run_experiment(cfg).runs[0]
    n = TINY_WL.num_nodes
    per_day = TINY_WL.requests_per_day_per_node
    rounds = TINY_WL.num_days - cfg.meta.num_pretrain_days
    assert run.comm_per_round == [2 * per_day * n * (n - 1)] * rounds
    assert run.messages.sum() == rounds * n * (n - 1)
    assert run.floats_transmitted == 2 * per_day * run.messages.sum()


def test_sampled_comm_below_broadcast():
    full = run_experiment(tiny_cfg("MetaCollab")).runs[0]
    sampled = run_experiment(tiny_cfg("CMCES")).runs[0]
    assert 0 < sampled.floats_transmitted < full.floats_transmitted
    assert sampled.floats_transmitted == \
        2 * TINY_WL.requests_per_day_per_node * sampled.messages.sum()


def test_never_skipping_with_zero_feedback_matches_broadcast():
    # z = 0 keeps every neighbor with its nominal weight and a zero feedback
    # step keeps the mixing matrix fixed, so the sampled method reduces to
    # the full-broadcast one decision for decision.
    cfg = tiny_cfg("CMCES", z_frac=0.0, feedback_step=0.0)
    trace, _ = resolve_workload(cfg, 0)
    a = run_experiment(cfg, {0: {"trace": trace}}).runs[0]
    b = run_experiment(tiny_cfg("MetaCollab"), {0: {"trace": trace}}).runs[0]
    assert a.day_node_hits == b.day_node_hits
    assert a.floats_transmitted == b.floats_transmitted


# ------------------------------------------------------------------ metrics

def fake_run(method, seed, rates):
    hits = {(d, 0): (int(r * 100), 100) for d, r in enumerate(rates)}
    return RunResult(method=method, seed=seed, num_nodes=1, day_node_hits=hits,
                     online_days=tuple(range(len(rates))), comm_per_round=[],
                     messages=np.zeros((1, 1), dtype=np.int64), wall_clock={})


def test_metrics_report_median_and_per_seed():
    rep = MetricsReport(runs=[fake_run("LRU", 0, [0.2, 0.4]),
                              fake_run("LRU", 1, [0.5, 0.5]),
                              fake_run("LRU", 2, [0.9, 0.9])])
    assert rep.median_online_hit_rate("LRU") == pytest.approx(0.5)
    assert rep.per_seed("LRU") == {0: pytest.approx(0.3), 1: 0.5, 2: 0.9}
    with pytest.raises(ValueError):
        rep.median_online_hit_rate("LFU")


def test_comm_cost_totals_by_method():
    a = fake_run("CMCES", 0, [0.5])
    a.comm_per_round = [10, 20]
    b = fake_run("CMCES", 1, [0.5])
    b.comm_per_round = [5]
    rep = MetricsReport(runs=[a, b])
    assert comm_cost(rep) == {"CMCES": 35}


def test_write_report_contents(tmp_path):
    rep = run_experiment(tiny_cfg("Random", seeds=(0, 1)))
    metrics, comms = write_report(rep, tmp_path)
    lines = open(metrics).read().splitlines()
    assert lines[0] == "method,seed,day,node,hit_rate"
    expected = sum(len(r.day_node_hits) for r in rep.runs)
    assert len(lines) == 1 + expected
    method, seed, day, node, rate = lines[1].split(",")
    assert method == "Random" and float(rate) == rep.runs[0].hit_rate(int(day), int(node))
    assert open(comms).read().splitlines()[0] == "method,seed,round,floats_sent"


# ----------------------------------------------------------------- ablation

def test_ablation_suite_runs_all_three_methods():
    rep = ablation_suite(tiny_cfg("CMCES", seeds=(0, 1)))
    for method in ABLATION_METHODS:
        assert len(rep.per_seed(method)) == 2
    assert rep.methods() == list(ABLATION_METHODS)
