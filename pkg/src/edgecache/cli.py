"""Command-line entry point: generate / run / ablate / report subcommands."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from . import harness, workload
from .harness import DEFAULT_WORKLOAD, METHODS, ExperimentConfig
from .meta import MetaConfig
from .policy import RLConfig
from .workload import SyntheticConfig


def parse_config_file(path) -> dict:
    """Plain key-value config: one `key = value` per line, `#` comments."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


_WORKLOAD_KEYS = {
    "catalog_size": int,
    "num_nodes": int,
    "requests_per_day": int,
    "num_days": int,
    "zipf": float,
    "drift": float,
    "heterogeneity": float,
    "workload_seed": int,
}
_WL_FIELD = {
    "catalog_size": "catalog_size",
    "num_nodes": "num_nodes",
    "requests_per_day": "requests_per_day_per_node",
    "num_days": "num_days",
    "zipf": "zipf_exponent",
    "drift": "drift_fraction",
    "heterogeneity": "heterogeneity",
    "workload_seed": "seed",
}


def build_experiment_config(opts: dict) -> ExperimentConfig:
    """Assemble an ExperimentConfig from merged file/flag options."""
    wl = DEFAULT_WORKLOAD
    for key, conv in _WORKLOAD_KEYS.items():
        if opts.get(key) is not None:
            wl = replace(wl, **{_WL_FIELD[key]: conv(opts[key])})
    wl.validate()
    work = opts["trace"] if opts.get("trace") else wl

    rl_kwargs = {}
    for key in ("gamma", "inner_lr", "meta_lr"):
        if opts.get(key) is not None:
            rl_kwargs[key] = float(opts[key])
    for key in ("K", "H", "M"):
        if opts.get(key) is not None:
            rl_kwargs[key] = int(opts[key])
    rl = RLConfig(**rl_kwargs)

    meta_kwargs = {"rl": rl}
    if opts.get("lambda") is not None:
        meta_kwargs["lam"] = float(opts["lambda"])
    if opts.get("pretrain_days") is not None:
        meta_kwargs["num_pretrain_days"] = int(opts["pretrain_days"])
    if opts.get("epochs") is not None:
        meta_kwargs["max_epochs"] = int(opts["epochs"])
    if opts.get("pairs_per_epoch") is not None:
        meta_kwargs["pairs_per_epoch"] = int(opts["pairs_per_epoch"])
    mc = MetaConfig(**meta_kwargs)

    seeds = opts.get("seeds")
    if seeds is None:
        seeds = (int(opts["seed"]),) if opts.get("seed") is not None else (0,)
    elif isinstance(seeds, str):
        seeds = tuple(int(s) for s in seeds.split(",") if s.strip())
    else:
        seeds = tuple(int(s) for s in seeds)

    cfg = ExperimentConfig(
        workload=work,
        method=opts.get("method") or "LRU",
        seeds=seeds,
        cache_size=int(opts["cache_size"]) if opts.get("cache_size") is not None else 20,
        neighbor_count=int(opts["neighbors"]) if opts.get("neighbors") is not None else None,
        meta=mc,
        z_frac=float(opts["z_frac"]) if opts.get("z_frac") is not None else 0.5,
        feedback_step=float(opts["feedback_step"]) if opts.get("feedback_step") is not None else 0.1,
        combine_lr=float(opts["combine_lr"]) if opts.get("combine_lr") is not None else None,
        hidden=int(opts["hidden"]) if opts.get("hidden") is not None else 32,
    )
    cfg.validate()
    return cfg


def _merged_opts(args: argparse.Namespace) -> dict:
    opts = {}
    if getattr(args, "config", None):
        opts.update(parse_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("func", "config"):
            continue
        if val is not None:
            opts[key] = val
    return opts


def cmd_generate(args) -> int:
    opts = _merged_opts(args)
    wl = DEFAULT_WORKLOAD
    for key, conv in _WORKLOAD_KEYS.items():
        if opts.get(key) is not None:
            wl = replace(wl, **{_WL_FIELD[key]: conv(opts[key])})
    if opts.get("seed") is not None:
        wl = replace(wl, seed=int(opts["seed"]))
    wl.validate()
    trace = workload.generate_trace(wl)
    workload.save_trace(trace, args.out)
    print(f"wrote {len(trace)} events to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = build_experiment_config(_merged_opts(args))
    report = harness.run_experiment(cfg)
    paths = harness.write_report(report, args.out)
    for r in report.runs:
        print(f"{r.method} seed={r.seed} online_hit_rate={r.online_hit_rate:.4f}")
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def cmd_ablate(args) -> int:
    opts = _merged_opts(args)
    if opts.get("seeds") is None:
        opts["seeds"] = tuple(range(10))
    cfg = build_experiment_config(opts)
    report = harness.ablation_suite(cfg)
    paths = harness.write_report(report, args.out)
    for method in harness.ABLATION_METHODS:
        med = report.median_online_hit_rate(method)
        print(f"{method}: median online hit rate {med:.4f}")
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.metrics:
        with open(path) as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        print("no rows")
        return 0
    by_method: dict = {}
    for row in rows:
        key = (row["method"], int(row["seed"]))
        by_method.setdefault(key, []).append(float(row["hit_rate"]))
    methods: dict = {}
    for (method, _), vals in by_method.items():
        methods.setdefault(method, []).append(float(np.mean(vals)))
    lines = [f"{m},{np.median(v):.17g}" for m, v in sorted(methods.items())]
    print("method,median_hit_rate")
    for line in lines:
        print(line)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("method,median_hit_rate\n")
            fh.write("\n".join(lines) + "\n")
    return 0


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--catalog-size", dest="catalog_size", type=int)
    p.add_argument("--num-nodes", dest="num_nodes", type=int)
    p.add_argument("--requests-per-day", dest="requests_per_day", type=int)
    p.add_argument("--num-days", dest="num_days", type=int)
    p.add_argument("--zipf", type=float)
    p.add_argument("--drift", type=float)
    p.add_argument("--heterogeneity", type=float)
    p.add_argument("--workload-seed", dest="workload_seed", type=int)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value config file; flags override it")
    p.add_argument("--trace", help="trace file to replay instead of a synthetic workload")
    p.add_argument("--cache-size", dest="cache_size", type=int)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--z-frac", dest="z_frac", type=float)
    p.add_argument("--feedback-step", dest="feedback_step", type=float)
    p.add_argument("--combine-lr", dest="combine_lr", type=float)
    p.add_argument("--pretrain-days", dest="pretrain_days", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--out", default="results", help="output directory for CSVs")
    _add_workload_flags(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgecache",
                                 description="collaborative edge-cache simulation")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit a synthetic trace file")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    _add_workload_flags(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run a single experiment")
    r.add_argument("--method", choices=METHODS)
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="run the three-method ablation suite")
    _add_run_flags(a)
    a.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate metrics CSVs")
    p.add_argument("metrics", nargs="+", help="metrics.csv files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
