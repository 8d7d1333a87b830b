"""
What collaboration buys: the three-method ablation
==================================================

Pretrain cache-eviction policies with and without neighbor task pairs, serve
with and without sample exchange, and compare:

- MetaOnly:   pretrained on each node's own task pairs, no communication.
- MetaCollab: collaborative pretraining + every neighbor's samples each round.
- CMCES:      collaborative pretraining + probabilistically sampled neighbors
              with similarity-driven mixing weights.

This runs the stock workload on two seeds; expect a couple of minutes on one
core.  The gap grows with more seeds (the suite's ten-seed run is the
reliable picture) but the ordering is usually visible already at two.
"""

from edgecache.harness import ExperimentConfig, ablation_suite, comm_cost

cfg = ExperimentConfig(method="CMCES", seeds=(0, 1))
report = ablation_suite(cfg)

for method in ("MetaOnly", "MetaCollab", "CMCES"):
    med = report.median_online_hit_rate(method)
    print(f"{method:>10}: median hit rate {med:.4f}")

# Communication: CMCES transmits a strict subset of the full broadcast.
costs = comm_cost(report)
print(f"floats sent -- MetaCollab {costs['MetaCollab']}, CMCES {costs['CMCES']} "
      f"({costs['CMCES'] / costs['MetaCollab']:.0%} of broadcast)")
