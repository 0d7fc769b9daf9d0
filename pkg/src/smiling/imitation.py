"""End-to-end imitation runs: score-matching loop plus the two baselines.

``smiling_run`` pre-trains an expert score model on the demonstrations,
then alternates: collect learner rollouts into the aggregated state
buffer, refit the learner score on the whole buffer, freeze both models
into a cost function, and run the policy-gradient solver against it.
``dac_lite_run`` keeps the identical loop but swaps the score models for a
JS-style discriminator (binary cross-entropy on expert vs. buffer states,
cost log(1-D) - log D). ``bc_run`` is offline maximum-likelihood on
state-action demonstrations, evaluated at checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .cost import CostFn, cost_batch_normalize
from .diffusion import DiffusionSchedule
from .envs import (
    BasePolicy,
    EnvSpec,
    GaussianPolicy,
    expert_policy,
    load_demos,
    make_env,
    make_policy,
    mean_true_return,
    normalized_return,
    rollout,
    trajectory_return,
)
from .rl import RlCarry, RlConfig, rl_solve
from .scorematch import ScoreModel, ScoreTrainConfig, StateBuffer, dsm_loss, ftl_update, pretrain_expert


class ConfigError(ValueError):
    """A run configuration is inconsistent with its inputs."""


@dataclass
class SmilingConfig:
    env_spec: EnvSpec
    schedule: DiffusionSchedule
    score_cfg: ScoreTrainConfig
    rl_cfg: RlConfig
    demos: str
    K: int = 10
    state_action_mode: bool = False
    linear_mode: bool = False
    seed: int = 0
    pretrain_epochs: int = 400
    bc_epochs: int = 300
    cost_n_mc: int = 500
    cost_normalize: bool = True
    cost_norm_std: float = 0.1
    rollout_episodes: int = 10
    eval_episodes: int = 20
    config_digest: str = ""

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")


@dataclass
class IterationRecord:
    k: int
    env_steps: int
    norm_return_current: float
    norm_return_mixture: float
    ds_value: float
    ds_stderr: float
    score_loss: float
    rl_cost_mean: float


@dataclass
class RunResult:
    records: list[IterationRecord]
    seed: int
    config_digest: str
    wall_clock: float
    v_expert: float
    v_random: float
    final_policy: GaussianPolicy | None = None
    mixture: "MixturePolicy | None" = None

    @property
    def final_norm_return(self) -> float:
        return self.records[-1].norm_return_current

    @property
    def best_norm_return(self) -> float:
        return max(r.norm_return_current for r in self.records)


class MixturePolicy(BasePolicy):
    """Uniform mixture over member policies, fixed per episode."""

    def __init__(self, members):
        if not members:
            raise ValueError("mixture needs at least one member policy")
        self.members = list(members)
        self._current = self.members[0]

    def episode_start(self, env, rng) -> None:
        self._current = self.members[int(rng.integers(len(self.members)))]
        self._current.episode_start(env, rng)

    def act(self, s, rng):
        return self._current.act(s, rng)


def mixture_policy(policies) -> MixturePolicy:
    return MixturePolicy(policies)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def _seed(*key) -> int:
    return int(np.random.SeedSequence(tuple(int(k) for k in key)).generate_state(1)[0])


def _auto_digest(cfg: SmilingConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _load_demo_data(cfg: SmilingConfig) -> np.ndarray:
    """Load demonstrations and project them to the configured training space."""
    try:
        env_name, states, actions = load_demos(cfg.demos)
    except FileNotFoundError:
        raise ConfigError(f"demonstration file not found: {cfg.demos}")
    spec = cfg.env_spec
    if env_name != spec.name:
        raise ConfigError(f"demos were collected on {env_name!r}, config wants {spec.name!r}")
    if states.shape[1] != spec.state_dim:
        raise ConfigError(
            f"demo state dim {states.shape[1]} != env state dim {spec.state_dim}")
    if cfg.state_action_mode:
        if actions is None:
            raise ConfigError("state_action_mode requires demonstrations with actions")
        if actions.shape[1] != spec.action_dim:
            raise ConfigError(
                f"demo action dim {actions.shape[1]} != env action dim {spec.action_dim}")
        return np.concatenate([states, actions], axis=1)
    # State-only training must never see expert actions.
    return states.copy()


def _rollout_inputs(traj, state_action: bool) -> np.ndarray:
    if state_action:
        return np.concatenate([traj.states[:-1], traj.actions], axis=1)
    return traj.states[1:]


def _eval_policy(env, policy, n_episodes: int, rng, state_action: bool):
    """Evaluation rollouts; returns (mean true return, visited cost inputs)."""
    returns = np.zeros(n_episodes)
    inputs = []
    for e in range(n_episodes):
        traj = rollout(env, policy, rng)
        returns[e] = trajectory_return(traj)
        inputs.append(_rollout_inputs(traj, state_action))
    return float(np.mean(returns)), np.concatenate(inputs, axis=0)


def _reference_returns(cfg: SmilingConfig, ref_policy: BasePolicy):
    """Expert and random-policy return anchors for normalization."""
    env = make_env(cfg.env_spec)
    v_expert = mean_true_return(env, expert_policy(cfg.env_spec), 100,
                                _rng(cfg.seed, 900))
    v_random = mean_true_return(env, ref_policy, 100, _rng(cfg.seed, 901))
    return v_expert, v_random


def _run_activation(cfg: SmilingConfig) -> str:
    return "identity" if cfg.linear_mode else "relu"


def smiling_run(cfg: SmilingConfig) -> RunResult:
    """Run the full score-matching imitation loop; returns per-iteration metrics."""
    t0 = time.perf_counter()
    digest = cfg.config_digest or _auto_digest(cfg)
    demo_data = _load_demo_data(cfg)
    d = demo_data.shape[1]
    spec = cfg.env_spec
    act = _run_activation(cfg)
    score_cfg = replace(cfg.score_cfg, activation=act)
    rl_cfg = replace(cfg.rl_cfg, normalize_costs=cfg.cost_normalize,
                     norm_std=cfg.cost_norm_std)

    pretrain_cfg = replace(score_cfg, epochs=cfg.pretrain_epochs)
    g_expert = pretrain_expert(demo_data, cfg.schedule, pretrain_cfg,
                               seed=_seed(cfg.seed, 1))

    train_env = make_env(spec)
    eval_env = make_env(spec)
    policy = make_policy(spec.state_dim, spec.action_dim,
                         (train_env.action_low, train_env.action_high),
                         seed=_seed(cfg.seed, 2), hidden=rl_cfg.policy_hidden)
    v_expert, v_random = _reference_returns(cfg, policy)

    g_learner = ScoreModel(
        nn.init_params([d, score_cfg.hidden_units, d], cfg.schedule.n_steps,
                       activation=act, seed=_seed(cfg.seed, 3),
                       emb_dim=score_cfg.emb_dim),
        cfg.schedule)
    buffer = StateBuffer(d)
    members: list[GaussianPolicy] = []
    records: list[IterationRecord] = []
    rl_carry = RlCarry()

    for k in range(1, cfg.K + 1):
        roll_rng = _rng(cfg.seed, k, 10)
        new_states = [
            _rollout_inputs(rollout(train_env, policy, roll_rng), cfg.state_action_mode)
            for _ in range(cfg.rollout_episodes)
        ]
        buffer.append(np.concatenate(new_states, axis=0))

        g_learner = ftl_update(g_learner, buffer, cfg.schedule, score_cfg,
                               seed=_seed(cfg.seed, k, 11))
        score_loss = dsm_loss(g_learner, buffer.as_array(), cfg.schedule,
                              n_mc=1, rng=_rng(cfg.seed, k, 12))

        cost_fn = CostFn(g_expert, g_learner.copy(), cfg.schedule, n_mc=cfg.cost_n_mc)
        rl_trace: list = []
        policy = rl_solve(train_env, cost_fn, policy, rl_cfg, _rng(cfg.seed, k, 13),
                          input_mode="state_action" if cfg.state_action_mode else "state",
                          trace=rl_trace, carry=rl_carry)
        members.append(policy.copy())

        v_pi, eval_inputs = _eval_policy(eval_env, policy, cfg.eval_episodes,
                                         _rng(cfg.seed, k, 14), cfg.state_action_mode)
        v_mix, _ = _eval_policy(eval_env, MixturePolicy(members), cfg.eval_episodes,
                                _rng(cfg.seed, k, 15), cfg.state_action_mode)
        per_state = cost_fn.evaluate(eval_inputs, _rng(cfg.seed, k, 16))
        records.append(IterationRecord(
            k=k,
            env_steps=train_env.step_count,
            norm_return_current=normalized_return(v_pi, v_expert, v_random),
            norm_return_mixture=normalized_return(v_mix, v_expert, v_random),
            ds_value=float(np.mean(per_state)),
            ds_stderr=float(np.std(per_state, ddof=1) / np.sqrt(len(per_state))),
            score_loss=score_loss,
            rl_cost_mean=float(np.mean([t["episode_cost"] for t in rl_trace])),
        ))

    return RunResult(records=records, seed=cfg.seed, config_digest=digest,
                     wall_clock=time.perf_counter() - t0,
                     v_expert=v_expert, v_random=v_random,
                     final_policy=policy, mixture=MixturePolicy(members))


def bc_run(cfg: SmilingConfig) -> RunResult:
    """Gaussian maximum-likelihood behavior cloning on state-action demos.

    Trains the same policy class on (state, action) pairs and evaluates at
    K evenly spaced checkpoints; headline performance is the best
    checkpoint.
    """
    t0 = time.perf_counter()
    digest = cfg.config_digest or _auto_digest(cfg)
    try:
        env_name, states, actions = load_demos(cfg.demos)
    except FileNotFoundError:
        raise ConfigError(f"demonstration file not found: {cfg.demos}")
    if actions is None:
        raise ConfigError(
            "behavior cloning needs expert actions: collect demonstrations "
            "with actions enabled (state-only files cannot be used)")
    spec = cfg.env_spec
    if env_name != spec.name or states.shape[1] != spec.state_dim:
        raise ConfigError(f"demos do not match environment {spec.name!r}")

    env = make_env(spec)
    policy = make_policy(spec.state_dim, spec.action_dim,
                         (env.action_low, env.action_high),
                         seed=_seed(cfg.seed, 20), hidden=cfg.rl_cfg.policy_hidden,
                         init_log_std=float(np.log(0.1)))
    v_expert, v_random = _reference_returns(cfg, policy)

    opt = nn.init_opt(policy.params, cfg.score_cfg.learning_rate)
    ls_m = np.zeros_like(policy.log_std)
    ls_v = np.zeros_like(policy.log_std)
    train_rng = _rng(cfg.seed, 21)
    n = states.shape[0]
    batch = min(cfg.score_cfg.batch_size, n)
    checkpoints = np.unique(np.linspace(
        max(1, cfg.bc_epochs // cfg.K), cfg.bc_epochs, cfg.K).astype(int))

    records: list[IterationRecord] = []
    nll = float("nan")

    def evaluate(k_idx: int) -> None:
        v_pi, _ = _eval_policy(env, policy, cfg.eval_episodes,
                               _rng(cfg.seed, 22, k_idx), state_action=False)
        records.append(IterationRecord(
            k=k_idx, env_steps=0,
            norm_return_current=normalized_return(v_pi, v_expert, v_random),
            norm_return_mixture=float("nan"),
            ds_value=float("nan"), ds_stderr=float("nan"),
            score_loss=nll, rl_cost_mean=float("nan")))

    if cfg.bc_epochs == 0:
        for j in range(cfg.K):
            evaluate(j + 1)
    else:
        done = 0
        for j, ckpt in enumerate(checkpoints, start=1):
            for _ in range(ckpt - done):
                order = train_rng.permutation(n)
                for start in range(0, n, batch):
                    idx = order[start:start + batch]
                    nll, grads, d_ls = nn.gaussian_nll_grad(
                        policy.params, policy.log_std, states[idx], actions[idx])
                    policy.params, opt = nn.adam_step(policy.params, grads, opt)
                    new_ls, ls_m, ls_v = nn.adam_update_array(
                        policy.log_std, d_ls, ls_m, ls_v, opt.step_count,
                        cfg.score_cfg.learning_rate)
                    policy.log_std = np.clip(new_ls, np.log(1e-3), np.log(2.0))
            done = ckpt
            evaluate(j)
        while len(records) < cfg.K:
            evaluate(len(records) + 1)

    return RunResult(records=records, seed=cfg.seed, config_digest=digest,
                     wall_clock=time.perf_counter() - t0,
                     v_expert=v_expert, v_random=v_random,
                     final_policy=policy, mixture=None)


class DiscriminatorCost:
    """Cost log(1 - D(s)) - log D(s); algebraically equal to -logit(s)."""

    def __init__(self, params: nn.ApproximatorParams):
        self.params = params

    def evaluate(self, states, rng) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        logits = nn.forward_batch(self.params, states,
                                  np.zeros(states.shape[0], dtype=np.intp))[:, 0]
        return -logits


def _train_discriminator(params, expert_data, learner_data, cfg: ScoreTrainConfig, rng):
    """Balanced binary cross-entropy training; returns (params, final loss)."""
    opt = nn.init_opt(params, cfg.learning_rate)
    n_sub = cfg.samples_per_update
    exp_idx = rng.integers(0, len(expert_data), size=n_sub)
    lrn_idx = rng.integers(0, len(learner_data), size=n_sub)
    X = np.concatenate([expert_data[exp_idx], learner_data[lrn_idx]], axis=0)
    y = np.concatenate([np.ones(n_sub), np.zeros(n_sub)])
    loss = float("nan")
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = nn.bce_logits_grad(params, X[idx], y[idx])
            if not np.isfinite(loss):
                from .scorematch import TrainingDiverged

                raise TrainingDiverged("discriminator loss became non-finite")
            params, opt = nn.adam_step(params, grads, opt)
    return params, loss


def dac_lite_run(cfg: SmilingConfig) -> RunResult:
    """Adversarial baseline: same loop, discriminator objective instead.

    The discriminator shares the score network's size, is trained on the
    same aggregated buffer against the expert set, and its cost batches are
    normalized identically, so the two methods differ only in objective.
    """
    t0 = time.perf_counter()
    digest = cfg.config_digest or _auto_digest(cfg)
    demo_data = _load_demo_data(cfg)
    d = demo_data.shape[1]
    spec = cfg.env_spec
    act = _run_activation(cfg)
    rl_cfg = replace(cfg.rl_cfg, normalize_costs=cfg.cost_normalize,
                     norm_std=cfg.cost_norm_std)

    train_env = make_env(spec)
    eval_env = make_env(spec)
    policy = make_policy(spec.state_dim, spec.action_dim,
                         (train_env.action_low, train_env.action_high),
                         seed=_seed(cfg.seed, 2), hidden=rl_cfg.policy_hidden)
    v_expert, v_random = _reference_returns(cfg, policy)

    disc = nn.init_params([d, cfg.score_cfg.hidden_units, 1], n_time_bins=1,
                          activation=act, seed=_seed(cfg.seed, 30), emb_dim=0)
    buffer = StateBuffer(d)
    members: list[GaussianPolicy] = []
    records: list[IterationRecord] = []
    rl_carry = RlCarry()

    for k in range(1, cfg.K + 1):
        roll_rng = _rng(cfg.seed, k, 10)
        new_states = [
            _rollout_inputs(rollout(train_env, policy, roll_rng), cfg.state_action_mode)
            for _ in range(cfg.rollout_episodes)
        ]
        buffer.append(np.concatenate(new_states, axis=0))

        disc, bce = _train_discriminator(disc, demo_data, buffer.as_array(),
                                         replace(cfg.score_cfg, activation=act),
                                         _rng(cfg.seed, k, 31))
        cost_fn = DiscriminatorCost(disc.copy())
        rl_trace: list = []
        policy = rl_solve(train_env, cost_fn, policy, rl_cfg, _rng(cfg.seed, k, 13),
                          input_mode="state_action" if cfg.state_action_mode else "state",
                          trace=rl_trace, carry=rl_carry)
        members.append(policy.copy())

        v_pi, _ = _eval_policy(eval_env, policy, cfg.eval_episodes,
                               _rng(cfg.seed, k, 14), cfg.state_action_mode)
        v_mix, _ = _eval_policy(eval_env, MixturePolicy(members), cfg.eval_episodes,
                                _rng(cfg.seed, k, 15), cfg.state_action_mode)
        records.append(IterationRecord(
            k=k,
            env_steps=train_env.step_count,
            norm_return_current=normalized_return(v_pi, v_expert, v_random),
            norm_return_mixture=normalized_return(v_mix, v_expert, v_random),
            ds_value=float("nan"), ds_stderr=float("nan"),
            score_loss=bce,
            rl_cost_mean=float(np.mean([t["episode_cost"] for t in rl_trace])),
        ))

    return RunResult(records=records, seed=cfg.seed, config_digest=digest,
                     wall_clock=time.perf_counter() - t0,
                     v_expert=v_expert, v_random=v_random,
                     final_policy=policy, mixture=MixturePolicy(members))
