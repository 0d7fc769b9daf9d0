"""Denoising score-matching trainers.

A score network is regressed onto conditional scores of the forward
process: for a data point s, a time t drawn uniformly from the schedule
grid and s_t ~ q_t(.|s), the regression target is grad log q_t(s_t|s).
The minimizer of this loss over all functions is the marginal score of the
diffused data distribution, which is what the trained models are used as.

Two entry points: :func:`pretrain_expert` fits a fresh model to a fixed
demonstration set, and :func:`ftl_update` refits (warm-started) on the
union of all learner states collected so far.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .diffusion import DiffusionSchedule, conditional_score, forward_sample

_BUFFER_MAGIC = b"SMILBUF1"


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite."""


class ScoreModel:
    """Trained score approximator with the (x, t) -> score calling convention.

    Wraps network parameters together with the schedule used to map
    continuous times onto embedding bins.
    """

    def __init__(self, params: nn.ApproximatorParams, schedule: DiffusionSchedule):
        self.params = params
        self.schedule = schedule

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        bins = self.schedule.bin_of_time(t)
        out = nn.forward_batch(self.params, X, np.atleast_1d(bins))
        return out[0] if single else out

    def eval_bins(self, X, t_bins):
        return nn.forward_batch(self.params, X, t_bins)

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.params.copy(), self.schedule)

    def save(self, path) -> None:
        nn.save_params(path, self.params)

    @classmethod
    def load(cls, path, schedule: DiffusionSchedule) -> "ScoreModel":
        return cls(nn.load_params(path), schedule)


class StateBuffer:
    """Append-only store of learner states, one append per outer iteration."""

    def __init__(self, dim: int):
        self.dim = dim
        self._chunks: list[np.ndarray] = []
        self.per_iteration_counts: list[int] = []

    def __len__(self) -> int:
        return sum(self.per_iteration_counts)

    def append(self, states) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[1] != self.dim:
            raise ValueError(f"state dim {states.shape[1]} != buffer dim {self.dim}")
        self._chunks.append(states.copy())
        self.per_iteration_counts.append(states.shape[0])

    def as_array(self) -> np.ndarray:
        if not self._chunks:
            return np.zeros((0, self.dim))
        return np.concatenate(self._chunks, axis=0)

    def save(self, path) -> None:
        """Flat file: magic, total count, dim, per-iteration counts, rows."""
        data = self.as_array()
        with open(path, "wb") as f:
            f.write(_BUFFER_MAGIC)
            f.write(struct.pack("<III", len(data), self.dim, len(self.per_iteration_counts)))
            for c in self.per_iteration_counts:
                f.write(struct.pack("<I", c))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "StateBuffer":
        with open(path, "rb") as f:
            if f.read(8) != _BUFFER_MAGIC:
                raise ValueError(f"{path}: not a state-buffer file")
            count, dim, n_iters = struct.unpack("<III", f.read(12))
            counts = [struct.unpack("<I", f.read(4))[0] for _ in range(n_iters)]
            data = np.frombuffer(f.read(count * dim * 8), dtype="<f8").reshape(count, dim)
        buf = cls(dim)
        start = 0
        for c in counts:
            buf.append(data[start:start + c])
            start += c
        return buf


@dataclass
class ScoreTrainConfig:
    epochs: int = 50
    batch_size: int = 1024
    mc_pairs_per_state: int = 1
    learning_rate: float = 5e-3
    samples_per_update: int = 100_000
    hidden_units: int = 256
    activation: str = "relu"
    emb_dim: int = 16

    def __post_init__(self):
        for name in ("epochs", "batch_size", "mc_pairs_per_state", "samples_per_update",
                     "hidden_units"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def _eval_score_fn(g, s_t: np.ndarray, t_bins: np.ndarray, schedule: DiffusionSchedule,
                   fast: bool = False):
    """Evaluate a model or a generic (x, t) callable on a mixed-time batch."""
    if isinstance(g, ScoreModel):
        if fast:
            return nn.forward_batch_f32(g.params, s_t, t_bins)
        return g.eval_bins(s_t, t_bins)
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float)
    return np.atleast_2d(np.asarray(g(s_t, t), dtype=float))


def _dsm_batch(states: np.ndarray, t_bins: np.ndarray, schedule, rng):
    """Corrupt a batch of states and return (s_t, conditional-score targets)."""
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(states.shape)
    s_t = forward_sample(states, t, eps)
    targets = conditional_score(states, s_t, t, t_min=schedule.t_min)
    return s_t, targets


def dsm_loss(g, states, schedule: DiffusionSchedule, n_mc: int, rng) -> float:
    """Monte-Carlo denoising score-matching loss.

    Per state, ``n_mc`` independent (t, eps) draws; returns the mean of
    ||g(s_t, t) - grad log q_t(s_t|s)||^2 over all draws.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("dsm_loss requires a nonempty state set")
    if n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    rep = np.repeat(states, n_mc, axis=0)
    t_bins = rng.integers(0, schedule.n_steps, size=rep.shape[0])
    s_t, targets = _dsm_batch(rep, t_bins, schedule, rng)
    preds = _eval_score_fn(g, s_t, t_bins, schedule)
    return float(np.mean(np.sum((preds - targets) ** 2, axis=1)))


def _fixed_eval_draws(states: np.ndarray, schedule, seed: int, n_draws: int = 4096):
    """A frozen evaluation set of (state index, t bin, eps) draws."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, states.shape[0], size=n_draws)
    t_bins = rng.integers(0, schedule.n_steps, size=n_draws)
    eps = rng.standard_normal((n_draws, states.shape[1]))
    return idx, t_bins, eps


def _eval_loss_on_draws(params, states, schedule, draws) -> float:
    idx, t_bins, eps = draws
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    s = states[idx]
    s_t = forward_sample(s, t, eps)
    targets = conditional_score(s, s_t, t, t_min=schedule.t_min)
    preds = nn.forward_batch(params, s_t, t_bins)
    return float(np.mean(np.sum((preds - targets) ** 2, axis=1)))


def _train_dsm(params, states, schedule, cfg: ScoreTrainConfig, rng):
    """Adam training on conditional-score regression; returns new params."""
    opt = nn.init_opt(params, cfg.learning_rate)
    n = states.shape[0]
    m = cfg.mc_pairs_per_state
    for _ in range(cfg.epochs):
        order = np.repeat(rng.permutation(n), m)
        if m > 1:
            rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            t_bins = rng.integers(0, schedule.n_steps, size=len(idx))
            s_t, targets = _dsm_batch(states[idx], t_bins, schedule, rng)
            loss, grads = nn.sq_loss_grad_arrays(params, s_t, t_bins, targets)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"score-matching loss became {loss}")
            params, opt = nn.adam_step(params, grads, opt)
    return params


def pretrain_expert(expert_states, schedule: DiffusionSchedule,
                    cfg: ScoreTrainConfig, seed: int) -> ScoreModel:
    """Fit a score model to demonstration states from scratch.

    Runs ``cfg.epochs`` shuffled passes over the demonstration set. A frozen
    held-out set of (t, eps) draws is evaluated before and after training;
    if training somehow ends worse than it started, the initial parameters
    are returned so the result is never worse than the init.
    """
    states = np.atleast_2d(np.asarray(expert_states, dtype=float))
    if states.shape[0] < 2:
        raise ValueError(f"need at least 2 demonstration states, got {states.shape[0]}")
    d = states.shape[1]
    ss = np.random.SeedSequence((seed, 0x5C0E))
    init_seed, train_seed, eval_seed = [int(s) for s in ss.generate_state(3)]
    params = nn.init_params([d, cfg.hidden_units, d], schedule.n_steps,
                            activation=cfg.activation, seed=init_seed,
                            emb_dim=cfg.emb_dim)
    draws = _fixed_eval_draws(states, schedule, eval_seed)
    loss_before = _eval_loss_on_draws(params, states, schedule, draws)
    trained = _train_dsm(params.copy(), states, schedule, cfg,
                         np.random.default_rng(train_seed))
    loss_after = _eval_loss_on_draws(trained, states, schedule, draws)
    if not np.isfinite(loss_after):
        raise TrainingDiverged("held-out loss is non-finite after training")
    if loss_after > loss_before:
        trained = params
    return ScoreModel(trained, schedule)


def ftl_update(g_prev: ScoreModel, buffer: StateBuffer, schedule: DiffusionSchedule,
               cfg: ScoreTrainConfig, seed: int) -> ScoreModel:
    """Refit the learner score on the aggregated buffer, warm-starting.

    Training states are ``cfg.samples_per_update`` draws with replacement
    from the whole buffer, so every past iteration's states keep equal
    weight regardless of when they were collected.
    """
    if len(buffer) == 0:
        raise ValueError("ftl_update requires a nonempty state buffer")
    ss = np.random.SeedSequence((seed, 0xF71))
    sub_seed, train_seed, eval_seed = [int(s) for s in ss.generate_state(3)]
    all_states = buffer.as_array()
    sub_rng = np.random.default_rng(sub_seed)
    idx = sub_rng.integers(0, all_states.shape[0], size=cfg.samples_per_update)
    states = all_states[idx]
    params = g_prev.params.copy()
    draws = _fixed_eval_draws(states, schedule, eval_seed)
    loss_before = _eval_loss_on_draws(params, states, schedule, draws)
    trained = _train_dsm(params.copy(), states, schedule, cfg,
                         np.random.default_rng(train_seed))
    loss_after = _eval_loss_on_draws(trained, states, schedule, draws)
    if not np.isfinite(loss_after):
        raise TrainingDiverged("held-out loss is non-finite after training")
    if loss_after > loss_before:
        trained = params
    return ScoreModel(trained, schedule)
