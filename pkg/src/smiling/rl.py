"""Episodic policy-gradient best-response solver.

Plain likelihood-ratio policy gradient with a learned value baseline: per
update, roll out a batch of episodes, score every visited state with the
supplied cost function (the solver never touches the environment's hidden
cost), normalize the cost batch, form costs-to-go, subtract the baseline,
and take one Adam step on the policy mean network and the log-std vector.
An exponential moving average of the raw batch cost selects the snapshot
that is returned, so the result is never meaningfully worse than the
initial policy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .cost import cost_batch_normalize
from .envs import Env, GaussianPolicy, make_policy
from .scorematch import TrainingDiverged

LOG_STD_MIN = np.log(1e-2)
LOG_STD_MAX = np.log(2.0)


@dataclass
class RlCarry:
    """Optimizer and baseline state carried across best-response phases.

    With warm-started policies and short interleaved phases, resetting Adam
    moments and the value baseline every phase wastes most of each phase on
    re-estimating them; callers that run many phases pass one carry object
    and the solver keeps it current. When the solver returns an earlier
    snapshot instead of the final policy, the carried moments no longer
    describe the returned parameters, so they are dropped.
    """

    policy_opt: nn.OptimizerState | None = None
    log_std_m: np.ndarray | None = None
    log_std_v: np.ndarray | None = None
    value_params: nn.ApproximatorParams | None = None
    value_opt: nn.OptimizerState | None = None


@dataclass
class RlConfig:
    episodes_per_update: int = 8
    updates_per_iteration: int = 25
    policy_lr: float = 3e-3
    value_lr: float = 1e-2
    entropy_bonus: float = 1e-3
    warm_start: bool = True
    normalize_costs: bool = True
    norm_std: float = 0.1
    value_hidden: int = 64
    value_steps_per_update: int = 10
    policy_hidden: int = 64

    def __post_init__(self):
        if self.episodes_per_update < 1 or self.updates_per_iteration < 1:
            raise ValueError("episode and update counts must be positive")
        if self.policy_lr <= 0 or self.value_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.entropy_bonus < 0:
            raise ValueError("entropy_bonus must be nonnegative")


def reinforce_gradient(policy: GaussianPolicy, states, raw_actions, coeffs, denom: float):
    """Gradient of (1/denom) * sum_i coeffs[i] * log pi(raw_actions[i] | states[i]).

    Returns (mean-network grads, d/d log_std). This is the single
    likelihood-ratio gradient used both by the solver and by the
    finite-difference check.
    """
    S = np.atleast_2d(np.asarray(states, dtype=float))
    A = np.atleast_2d(np.asarray(raw_actions, dtype=float))
    c = np.asarray(coeffs, dtype=float)
    n = S.shape[0]
    mu, cache = nn._forward_cached(policy.params, S, np.zeros(n, dtype=np.intp))
    var = np.exp(2.0 * policy.log_std)
    d_mu = c[:, None] * (A - mu) / var / denom
    grads = nn.backward_from_output(policy.params, cache, d_mu)
    d_log_std = np.sum(c[:, None] * ((A - mu) ** 2 / var - 1.0), axis=0) / denom
    return grads, d_log_std


def _collect_episodes(env: Env, policy: GaussianPolicy, n_episodes: int, rng):
    """Roll out episodes keeping pre-clip actions for the gradient."""
    H = env.spec.horizon
    dec_states = np.zeros((n_episodes, H, env.spec.state_dim))
    raw_actions = np.zeros((n_episodes, H, env.spec.action_dim))
    exec_actions = np.zeros_like(raw_actions)
    next_states = np.zeros_like(dec_states)
    for e in range(n_episodes):
        s = env.reset(rng)
        policy.episode_start(env, rng)
        for h in range(H):
            raw, a = policy.sample_raw(s, rng)
            dec_states[e, h] = s
            raw_actions[e, h] = raw
            exec_actions[e, h] = a
            s = env.step(a, rng)
            next_states[e, h] = s
    return dec_states, raw_actions, exec_actions, next_states


def _cost_inputs(dec_states, exec_actions, next_states, input_mode: str):
    if input_mode == "state":
        return next_states.reshape(-1, next_states.shape[-1])
    if input_mode == "state_action":
        flat_s = dec_states.reshape(-1, dec_states.shape[-1])
        flat_a = exec_actions.reshape(-1, exec_actions.shape[-1])
        return np.concatenate([flat_s, flat_a], axis=1)
    raise ValueError(f"unknown input_mode {input_mode!r}")


def rl_solve(env: Env, cost_fn, pi_init: GaussianPolicy, cfg: RlConfig,
             rng: np.random.Generator, input_mode: str = "state",
             trace: list | None = None, carry: RlCarry | None = None) -> GaussianPolicy:
    """Minimize expected cumulative cost under ``cost_fn`` starting from ``pi_init``.

    ``cost_fn`` must expose ``evaluate(states, rng) -> costs``; the solver
    reads nothing else from the environment besides transitions. ``carry``
    optionally persists optimizer moments and the value baseline across
    phases (see :class:`RlCarry`).
    """
    H = env.spec.horizon
    if cfg.warm_start:
        policy = pi_init.copy()
    else:
        policy = make_policy(env.spec.state_dim, env.spec.action_dim,
                             pi_init.action_clip, seed=int(rng.integers(2**31)),
                             hidden=cfg.policy_hidden)
    if carry is not None and carry.policy_opt is not None and cfg.warm_start:
        policy_opt = carry.policy_opt
        ls_m, ls_v = carry.log_std_m, carry.log_std_v
    else:
        policy_opt = nn.init_opt(policy.params, cfg.policy_lr)
        ls_m = np.zeros_like(policy.log_std)
        ls_v = np.zeros_like(policy.log_std)

    value_seed = int(rng.integers(2**31))
    if carry is not None and carry.value_params is not None:
        value = carry.value_params
        value_opt = carry.value_opt
    else:
        value = nn.zero_output_layer(
            nn.init_params([env.spec.state_dim, cfg.value_hidden, 1], n_time_bins=1,
                           activation="relu", seed=value_seed, emb_dim=0))
        value_opt = nn.init_opt(value, cfg.value_lr)

    best_monitor = np.inf
    best_snapshot = policy.copy()
    first_cost = first_se = None
    ema = None
    for update in range(cfg.updates_per_iteration):
        # The batch below is generated by (and therefore evaluates) the
        # current policy, so the snapshot candidate is taken before updating.
        candidate = policy.copy()
        dec_s, raw_a, exec_a, next_s = _collect_episodes(
            env, policy, cfg.episodes_per_update, rng)
        inputs = _cost_inputs(dec_s, exec_a, next_s, input_mode)
        costs = cost_fn.evaluate(inputs, rng)
        episode_totals = costs.reshape(cfg.episodes_per_update, H).sum(axis=1)
        raw_episode_cost = float(episode_totals.mean())
        if first_cost is None:
            first_cost = raw_episode_cost
            first_se = float(episode_totals.std(ddof=1)
                             / np.sqrt(cfg.episodes_per_update)) \
                if cfg.episodes_per_update > 1 else 0.0
        if cfg.normalize_costs:
            costs = cost_batch_normalize(costs, cfg.norm_std)
        costs = costs.reshape(cfg.episodes_per_update, H)
        ctg = np.flip(np.cumsum(np.flip(costs, axis=1), axis=1), axis=1)

        flat_states = dec_s.reshape(-1, env.spec.state_dim)
        flat_raw = raw_a.reshape(-1, env.spec.action_dim)
        flat_ctg = ctg.reshape(-1)
        baseline = nn.forward_batch(value, flat_states,
                                    np.zeros(len(flat_states), dtype=np.intp))[:, 0]
        advantages = flat_ctg - baseline

        grads, d_log_std = reinforce_gradient(policy, flat_states, flat_raw,
                                              advantages, cfg.episodes_per_update)
        d_log_std = d_log_std - cfg.entropy_bonus
        before_flat = nn.flatten_params(policy.params)
        policy.params, policy_opt = nn.adam_step(policy.params, grads, policy_opt)
        mean_update_norm = float(np.linalg.norm(
            nn.flatten_params(policy.params) - before_flat))
        new_ls, ls_m, ls_v = nn.adam_update_array(
            policy.log_std, d_log_std, ls_m, ls_v, policy_opt.step_count, cfg.policy_lr)
        policy.log_std = np.clip(new_ls, LOG_STD_MIN, LOG_STD_MAX)

        for _ in range(cfg.value_steps_per_update):
            vloss, vgrads = nn.sq_loss_grad_arrays(
                value, flat_states, np.zeros(len(flat_states), dtype=np.intp),
                flat_ctg[:, None])
            if not np.isfinite(vloss):
                raise TrainingDiverged("value baseline loss became non-finite")
            value, value_opt = nn.adam_step(value, vgrads, value_opt)

        ema = raw_episode_cost if ema is None else 0.5 * ema + 0.5 * raw_episode_cost
        if ema < best_monitor:
            best_monitor = ema
            best_snapshot = candidate
        if trace is not None:
            trace.append({"update": update, "episode_cost": raw_episode_cost,
                          "monitor": ema, "log_std": policy.log_std.copy(),
                          "mean_update_norm": mean_update_norm})
    # Return the trained policy unless its monitored cost regressed past the
    # initial policy's estimate beyond noise; then fall back to the best
    # snapshot seen during the phase.
    regressed = ema is not None and first_cost is not None \
        and ema > first_cost + 2.0 * first_se
    if carry is not None:
        carry.value_params = value
        carry.value_opt = value_opt
        if regressed:
            # moments describe the abandoned final parameters
            carry.policy_opt = None
            carry.log_std_m = carry.log_std_v = None
        else:
            carry.policy_opt = policy_opt
            carry.log_std_m, carry.log_std_v = ls_m, ls_v
    return best_snapshot if regressed else policy


def policy_value(env: Env, policy, cost_fn, n_episodes: int,
                 rng: np.random.Generator, input_mode: str = "state"):
    """Mean and sample variance of episodic cumulative cost under ``cost_fn``."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    from .envs import rollout

    totals = np.zeros(n_episodes)
    for e in range(n_episodes):
        traj = rollout(env, policy, rng)
        if input_mode == "state_action":
            inputs = np.concatenate([traj.states[:-1], traj.actions], axis=1)
        else:
            inputs = traj.states[1:]
        totals[e] = float(np.sum(cost_fn.evaluate(inputs, rng)))
    if n_episodes == 1:
        warnings.warn("policy_value over a single episode: variance reported as 0")
        return float(totals[0]), 0.0
    return float(np.mean(totals)), float(np.var(totals, ddof=1))
