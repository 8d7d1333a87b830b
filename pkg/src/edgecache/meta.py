"""Meta-learning over consecutive-day task pairs, plus the per-round adaptation step.

Stage 1 (pretraining) minimizes a weighted sum of pair losses: for each day
transition, one same-node pair plus, with coefficient lambda, one pair per
neighbor whose source task lives on that neighbor.  Each pair loss adapts the
shared initialization on the source task and evaluates the adapted policy on
the target task.  Gradients are first-order: the target-task policy gradient
evaluated at the adapted parameters.

Stage 2 (adaptation) starts every round from the pretrained initialization,
adapts on the newest local task, and optionally folds in neighbor gradients
through the sampling module's realized combination weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .policy import (Layout, ParamVector, RLConfig, batch_loss, init_params,
                     inner_adapt, policy_gradient, sample_trajectories, zeros_like)
from .sampling import (CombinationMatrix, appear_probability, combine_update,
                       feedback_update, make_uniform_b, sample_neighbors,
                       self_weight, z_upper_bound)
from .workload import Task


class PairKind(Enum):
    LOCAL_LOCAL = "local-local"
    NEIGHBOR_LOCAL = "neighbor-local"


@dataclass
class TaskPair:
    source: Task
    target: Task
    kind: PairKind

    def __post_init__(self):
        if self.target.day_index != self.source.day_index + 1:
            raise ValueError("target task must be the day after the source task")


@dataclass(frozen=True)
class MetaConfig:
    lam: float = 0.5
    num_pretrain_days: int = 5
    rl: RLConfig = field(default_factory=RLConfig)
    mc_width: int = 1          # evaluation trajectories per pair
    max_epochs: int = 200
    tol: float = 1e-3          # relative improvement threshold for convergence
    patience: int = 3
    pairs_per_epoch: int = 16  # stochastic pair batch size (0 = all pairs)
    val_every: int = 1         # epochs between convergence checks
    init_scale: float = 0.05
    collaborative: bool = True  # include neighbor-local pairs in pretraining
    pair_sampling: bool = False  # sample neighbor pairs through a combination matrix
    pair_z_frac: float = 0.5    # pair sampling rate, as a fraction of the z bound
    pair_feedback: float = 0.3  # similarity feedback step for the pair matrix

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must be in (0, 1)")
        if self.num_pretrain_days < 2:
            raise ValueError("need at least 2 pretraining days for one pair")
        if not 0.0 <= self.pair_z_frac <= 1.0:
            raise ValueError("pair_z_frac must be in [0, 1]")
        if self.pair_feedback < 0.0:
            raise ValueError("pair_feedback must be non-negative")


def build_task_pairs(tasks, local_node: int) -> list:
    """All consecutive-day pairs targeting one local node.

    Per day transition: one local-local pair and one neighbor-local pair per
    other node, giving (N-1) * (1 + E) pairs in total.
    """
    grid = {(t.day_index, t.node_id): t for t in tasks}
    days = sorted({t.day_index for t in tasks})
    nodes = sorted({t.node_id for t in tasks})
    if local_node not in nodes:
        raise ValueError(f"local node {local_node} has no tasks")
    pairs = []
    for i in days[:-1]:
        try:
            target = grid[(i + 1, local_node)]
            pairs.append(TaskPair(grid[(i, local_node)], target, PairKind.LOCAL_LOCAL))
            for j in nodes:
                if j != local_node:
                    pairs.append(TaskPair(grid[(i, j)], target, PairKind.NEIGHBOR_LOCAL))
        except KeyError as exc:
            raise ValueError(f"missing task {exc.args[0]}") from None
    return pairs


def _pair_eval(phi: ParamVector, pair: TaskPair, cfg: MetaConfig, rng, env_factory):
    """Adapt on the source, evaluate on the target; returns (loss, eval trajs, theta)."""
    env_src = env_factory(pair.source)
    env_tgt = env_factory(pair.target)
    theta = inner_adapt(phi, env_src, cfg.rl, rng)
    trajs = sample_trajectories(env_tgt, theta, cfg.mc_width, cfg.rl.H, rng)
    return batch_loss(trajs), trajs, theta


def pair_meta_loss(phi: ParamVector, pair: TaskPair, cfg: MetaConfig, rng, env_factory) -> float:
    """Monte-Carlo estimate of one pair's meta-loss."""
    loss, _, _ = _pair_eval(phi, pair, cfg, rng, env_factory)
    return loss


def pair_weight(pair: TaskPair, cfg: MetaConfig) -> float:
    return 1.0 if pair.kind is PairKind.LOCAL_LOCAL else cfg.lam

def total_meta_loss(phi: ParamVector, pairs, cfg: MetaConfig, rng, env_factory) -> float:
    """Sum over pairs of weighted pair losses (local weight 1, neighbor weight lambda)."""
    return sum(pair_weight(p, cfg) * pair_meta_loss(phi, p, cfg, rng, env_factory)
               for p in pairs)


def meta_gradient(phi: ParamVector, pairs, cfg: MetaConfig, rng, env_factory) -> ParamVector:
    """First-order gradient of the weighted pair objective, averaged over pairs."""
    g = zeros_like(phi)
    for pair in pairs:
        _, trajs, theta = _pair_eval(phi, pair, cfg, rng, env_factory)
        pg = policy_gradient(theta, trajs, cfg.rl.gamma, center=True)
        g.data += pair_weight(pair, cfg) * pg.data
    g.data /= len(pairs)
    return g


def meta_pretrain(tasks, cfg: MetaConfig, rng, env_factory, layout: Layout,
                  local_nodes=None, phi0: ParamVector = None) -> ParamVector:
    """Learn a shared initialization over task pairs from every node.

    Each epoch takes one Adam step on a random pair batch; convergence is
    declared when a frozen-seed validation loss improves by less than ``tol``
    relative for ``patience`` consecutive epochs.

    With ``pair_sampling`` enabled, neighbor-local pairs pass through a
    combination matrix: each is kept with its appear probability and, when
    kept, reweighted by the unbiased d/p ratio relative to its nominal
    weight.  Kept pairs feed a similarity signal back into the matrix — pairs
    whose gradients align with the running descent direction gain weight, so
    pretraining gradually concentrates on transferable neighbor tasks.  The
    Bernoulli draws come from a stream derived from the validation seed, so a
    sampled and an unsampled run consume the primary stream identically.
    """
    if local_nodes is None:
        local_nodes = sorted({t.node_id for t in tasks})
    pretrain_tasks = [t for t in tasks if t.day_index < cfg.num_pretrain_days]
    pairs = []
    for local in local_nodes:
        pairs.extend(build_task_pairs(pretrain_tasks, local))
    if not cfg.collaborative:
        pairs = [p for p in pairs if p.kind is PairKind.LOCAL_LOCAL]
    if not pairs:
        raise ValueError("no task pairs to pretrain on")

    phi = phi0.copy() if phi0 is not None else init_params(layout, rng, cfg.init_scale)
    val_seed = int(rng.integers(0, 2**63 - 1))
    val_idx = rng.choice(len(pairs), size=min(8, len(pairs)), replace=False)
    val_pairs = [pairs[i] for i in val_idx]

    def val_loss(p):
        return total_meta_loss(p, val_pairs, cfg, np.random.default_rng(val_seed), env_factory)

    sampler = None
    if cfg.collaborative and cfg.pair_sampling:
        node_index = {node: i for i, node in enumerate(local_nodes)}
        B = make_uniform_b(len(local_nodes))
        sampler = CombinationMatrix(B=B, z=cfg.pair_z_frac * z_upper_bound(B))
        samp_rng = np.random.default_rng([val_seed, 1])

    prev = val_loss(phi)
    stall = 0
    m1 = np.zeros_like(phi.data)
    m2 = np.zeros_like(phi.data)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for epoch in range(cfg.max_epochs):
        if cfg.pairs_per_epoch and cfg.pairs_per_epoch < len(pairs):
            idx = rng.choice(len(pairs), size=cfg.pairs_per_epoch, replace=False)
            batch = [pairs[i] for i in idx]
        else:
            batch = pairs
        if sampler is None:
            g = meta_gradient(phi, batch, cfg, rng, env_factory)
        else:
            g = zeros_like(phi)
            mom = ParamVector(layout, m1)
            for pair in batch:
                _, trajs, theta = _pair_eval(phi, pair, cfg, rng, env_factory)
                pg = policy_gradient(theta, trajs, cfg.rl.gamma, center=True)
                wgt = pair_weight(pair, cfg)
                if pair.kind is PairKind.NEIGHBOR_LOCAL:
                    j = node_index[pair.target.node_id]
                    k = node_index[pair.source.node_id]
                    d = sampler.D[j, k]
                    p = appear_probability(d, sampler.z)
                    if samp_rng.random() < p:
                        wgt *= (d / p) / sampler.B[j, k]
                        feedback_update(sampler, j, mom, {k: pg},
                                        cfg.pair_feedback)
                    else:
                        wgt = 0.0
                if wgt:
                    g.data += wgt * pg.data
            g.data /= len(batch)
        if not np.all(np.isfinite(g.data)):
            raise RuntimeError(f"non-finite meta-gradient at epoch {epoch}")
        m1 = b1 * m1 + (1 - b1) * g.data
        m2 = b2 * m2 + (1 - b2) * g.data**2
        step = cfg.rl.meta_lr * (m1 / (1 - b1**(epoch + 1)))
        step /= np.sqrt(m2 / (1 - b2**(epoch + 1))) + eps
        phi.data -= step
        # convergence is checked on a coarser grid than the update to keep
        # the validation evaluations from dominating the epoch cost
        if (epoch + 1) % cfg.val_every:
            continue
        cur = val_loss(phi)
        if not np.isfinite(cur):
            raise RuntimeError(f"non-finite validation meta-loss at epoch {epoch}: {cur}")
        denom = max(abs(prev), 1e-12)
        stall = stall + 1 if (prev - cur) / denom < cfg.tol else 0
        prev = cur
        if stall >= cfg.patience:
            break
    return phi


def meta_adapt_step(phi_star: ParamVector, env, neighbor_grads, sampler: CombinationMatrix,
                    cfg: MetaConfig, rng, local: int = 0, combine_lr: float = None):
    """One serving-round adaptation: local inner adaptation plus neighbor combination.

    The local node's own contribution is the inner adaptation itself; the
    combination step applies only neighbor gradients, weighted by the realized
    sampled row.  With no sampler or no neighbors this reduces to plain local
    adaptation.  Returns (theta, realized weight row, sampled node set).
    """
    theta = inner_adapt(phi_star, env, cfg.rl, rng)
    n = sampler.n if sampler is not None else 1
    w = np.zeros(n)
    w[local] = 1.0
    sampled = set()
    if sampler is not None and neighbor_grads:
        w = sample_neighbors(sampler, local, rng)
        self_weight(w, local)
        sampled = {j for j in range(n) if j != local and w[j] > 0}
        grads = {j: neighbor_grads.get(j) for j in range(n) if j != local}
        grads[local] = None  # self contribution already realized by inner_adapt
        eta = combine_lr if combine_lr is not None else cfg.rl.inner_lr
        theta = combine_update(theta, grads, w, eta)
    return theta, w, sampled
