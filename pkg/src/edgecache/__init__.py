"""Trace-driven collaborative edge-cache simulation with meta-RL replacement
policies, probabilistic neighbor sampling, and classical baselines."""

from .cachesim import (CacheState, ContentStats, HitRecord, RewardWeights,
                       TaskEnv, apply_action, baseline_step, hit_rate, lookup,
                       reward)
from .harness import (ExperimentConfig, MetricsReport, ablation_suite,
                      comm_cost, run_experiment, write_report)
from .meta import (MetaConfig, PairKind, TaskPair, build_task_pairs,
                   meta_adapt_step, meta_pretrain, pair_meta_loss,
                   total_meta_loss)
from .policy import (Layout, ParamVector, RLConfig, Trajectory,
                     action_distribution, featurize, inner_adapt, init_params,
                     load_params, policy_gradient, sample_trajectories,
                     save_params, trajectory_loss)
from .sampling import (CombinationMatrix, appear_probability, combine_update,
                       feedback_update, make_uniform_b, sample_neighbors,
                       self_weight, z_upper_bound)
from .workload import (RequestEvent, SyntheticConfig, Task, Trace,
                       generate_trace, load_trace, save_trace, split_tasks,
                       zipf_pmf)

__version__ = "0.1.0"
