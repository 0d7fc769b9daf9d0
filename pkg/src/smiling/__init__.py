"""Score-matching imitation learning at desk scale.

A small library and experiment CLI: imitation by matching diffusion score
functions of expert and learner state distributions, plus behavior-cloning
and adversarial baselines, toy continuous-control environments, and
numeric diagnostics against analytic Gaussian oracles.
"""

from .diffusion import (
    DiffusionSchedule,
    NoisePair,
    NumericError,
    conditional_score,
    forward_sample,
    gaussian_marginal_score,
    gaussian_mixture_marginal_score,
    make_gaussian_score_fn,
    reverse_sample,
    sample_time,
)
from .divergence import (
    DsEstimate,
    ds_divergence_gaussian,
    ds_divergence_mc,
    hellinger_grid,
    naive_vs_corrected_gap,
)
from .cost import CostFn, OracleCost, cost_batch_normalize, cost_eval, naive_cost_eval
from .envs import (
    EnvSpec,
    GaussianPolicy,
    Trajectory,
    collect_demos,
    env_spec,
    expert_policy,
    load_demos,
    make_env,
    make_policy,
    normalized_return,
    rollout,
    save_demos,
)
from .imitation import (
    ConfigError,
    MixturePolicy,
    RunResult,
    SmilingConfig,
    bc_run,
    dac_lite_run,
    mixture_policy,
    smiling_run,
)
from .rl import RlConfig, policy_value, rl_solve
from .scorematch import (
    ScoreModel,
    ScoreTrainConfig,
    StateBuffer,
    TrainingDiverged,
    dsm_loss,
    ftl_update,
    pretrain_expert,
)

__version__ = "0.1.0"
