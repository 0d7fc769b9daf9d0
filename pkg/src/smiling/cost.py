"""Score-difference cost for the policy search step.

The per-state cost contrasts how well the frozen expert model and the
current learner model predict the conditional score of the forward process
started at s:

    c(s) = E_{t, eps} [ ||g_e(s_t, t) - grad log q_t(s_t|s)||^2
                        - ||g_k(s_t, t) - grad log q_t(s_t|s)||^2 ]

Both squared terms share the same (t, eps) draws, so the cost is exactly
zero when the two models agree and the conditional-score variance cancels
without bias. Averaged over a policy's state distribution with g_k equal
to that policy's true diffused score, the expectation reproduces the score
divergence from the expert model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionSchedule, NumericError, conditional_score, forward_sample
from .scorematch import _eval_score_fn

_CHUNK_ROWS = 64_000


@dataclass
class CostFn:
    """Frozen cost snapshot: expert model, learner model, schedule, draw count."""

    g_expert: object
    g_learner: object
    schedule: DiffusionSchedule
    n_mc: int = 500

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError(f"n_mc must be >= 1, got {self.n_mc}")

    def evaluate(self, states, rng) -> np.ndarray:
        return cost_batch(self, states, rng)


def _paired_terms(g_expert, g_learner, schedule, states_rep, t_bins, rng):
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(states_rep.shape)
    s_t = forward_sample(states_rep, t, eps)
    cond = conditional_score(states_rep, s_t, t, t_min=schedule.t_min)
    e_vals = _eval_score_fn(g_expert, s_t, t_bins, schedule, fast=True)
    if not np.all(np.isfinite(e_vals)):
        raise NumericError("expert score model returned non-finite values")
    k_vals = _eval_score_fn(g_learner, s_t, t_bins, schedule, fast=True)
    if not np.all(np.isfinite(k_vals)):
        raise NumericError("learner score model returned non-finite values")
    return np.sum((e_vals - cond) ** 2, axis=1) - np.sum((k_vals - cond) ** 2, axis=1)


def cost_batch(cf: CostFn, states, rng) -> np.ndarray:
    """Cost of each state, each averaged over ``cf.n_mc`` paired draws."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    n = states.shape[0]
    out = np.zeros(n)
    # Chunk over states so the expanded (state x draw) matrix stays small.
    per_state = cf.n_mc
    states_per_chunk = max(1, _CHUNK_ROWS // per_state)
    for start in range(0, n, states_per_chunk):
        block = states[start:start + states_per_chunk]
        rep = np.repeat(block, per_state, axis=0)
        t_bins = rng.integers(0, cf.schedule.n_steps, size=rep.shape[0])
        terms = _paired_terms(cf.g_expert, cf.g_learner, cf.schedule, rep, t_bins, rng)
        out[start:start + block.shape[0]] = terms.reshape(block.shape[0], per_state).mean(axis=1)
    return out


def cost_eval(cf: CostFn, s, rng) -> float:
    """Cost of a single state."""
    return float(cost_batch(cf, np.atleast_2d(np.asarray(s, dtype=float)), rng)[0])


def cost_batch_normalize(costs, target_std: float = 0.1):
    """Shift/scale a batch to mean 0 and population std ``target_std``.

    Degenerate batches (population std <= 1e-8, including single elements)
    map to all zeros. The map is strictly increasing otherwise, so the
    ranking of batch elements is preserved.
    """
    arr = np.asarray(costs, dtype=float)
    if arr.size == 0:
        raise ValueError("cost_batch_normalize requires a nonempty batch")
    std = float(np.std(arr))
    if std <= 1e-8:
        return np.zeros_like(arr)
    return (arr - np.mean(arr)) / std * target_std


def naive_cost_eval(g_e, g_pi_hat, schedule: DiffusionSchedule, s, n_mc: int, rng) -> float:
    """Plug-in cost ||g_e(s_t,t) - g_pi_hat(s_t,t)||^2 averaged over draws.

    Exists to power the estimator-gap diagnostic; it is biased by the
    learner model's fit error in an unbounded way and is not used for
    policy search.
    """
    s = np.asarray(s, dtype=float).reshape(1, -1)
    rep = np.repeat(s, n_mc, axis=0)
    t_bins = rng.integers(0, schedule.n_steps, size=n_mc)
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(rep.shape)
    s_t = forward_sample(rep, t, eps)
    e_vals = _eval_score_fn(g_e, s_t, t_bins, schedule)
    pi_vals = _eval_score_fn(g_pi_hat, s_t, t_bins, schedule)
    if not (np.all(np.isfinite(e_vals)) and np.all(np.isfinite(pi_vals))):
        raise NumericError("score model returned non-finite values")
    return float(np.mean(np.sum((e_vals - pi_vals) ** 2, axis=1)))


class OracleCost:
    """Adapter giving a plain per-state function the cost interface."""

    def __init__(self, fn):
        self._fn = fn

    def evaluate(self, states, rng) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.asarray([float(self._fn(s)) for s in states])
