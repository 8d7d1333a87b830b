"""
Synthetic request workloads: popularity, drift, heterogeneity
=============================================================

Generate a small multi-node request trace and look at the three knobs that
shape it: the Zipf popularity skew, the day-to-day popularity drift, and the
per-node heterogeneity.
"""

import numpy as np

from edgecache import workload
from edgecache.workload import SyntheticConfig

# A small workload: 4 nodes request from a 100-content catalog for 6 days.
cfg = SyntheticConfig(catalog_size=100, num_nodes=4,
                      requests_per_day_per_node=2000, num_days=6,
                      zipf_exponent=1.0, drift_fraction=0.3,
                      heterogeneity=0.4, seed=7)
trace = workload.generate_trace(cfg)
print(f"{len(trace.timestamps)} events over {cfg.num_days} days")

# The Zipf law concentrates demand on a short head: the top 10 contents
# should absorb roughly zipf_pmf(100, 1.0)[:10].sum() of all requests.
pmf = workload.zipf_pmf(cfg.catalog_size, cfg.zipf_exponent)
counts = np.bincount(trace.contents, minlength=cfg.catalog_size)
top10 = np.sort(counts)[::-1][:10].sum() / counts.sum()
print(f"top-10 request share: {top10:.3f} (zipf head mass {pmf[:10].sum():.3f})")

# Drift: the set of most-requested contents changes from day to day.  Compare
# each day's top-20 set with day 0's.
days = trace.timestamps // trace.day_length
top_sets = []
for d in range(cfg.num_days):
    c = np.bincount(trace.contents[days == d], minlength=cfg.catalog_size)
    top_sets.append(set(np.argsort(c)[::-1][:20]))
for d in range(cfg.num_days):
    overlap = len(top_sets[0] & top_sets[d]) / 20
    print(f"day {d}: top-20 overlap with day 0 = {overlap:.2f}")

# Heterogeneity: different nodes prefer different contents on the same day.
sel = days == 0
for j in range(cfg.num_nodes):
    c = np.bincount(trace.contents[sel & (trace.nodes == j)],
                    minlength=cfg.catalog_size)
    top_j = set(np.argsort(c)[::-1][:20])
    print(f"node {j}: day-0 top-20 overlap with node 0 = "
          f"{len(top_j & top_sets[0]) / 20:.2f}")

# Optional: plot the per-day popularity of the five globally hottest contents.
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hottest = np.argsort(counts)[::-1][:5]
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in hottest:
        per_day = [np.mean(trace.contents[days == d] == c)
                   for d in range(cfg.num_days)]
        ax.plot(range(cfg.num_days), per_day, marker="o", label=f"content {c}")
    ax.set_xlabel("day")
    ax.set_ylabel("request share")
    ax.set_title("popularity drift of the hottest contents")
    ax.legend()
    fig.tight_layout()
    fig.savefig("workload_drift.png", dpi=120)
    print("wrote workload_drift.png")
except ImportError:
    pass
