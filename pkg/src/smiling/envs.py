"""Toy finite-horizon continuous-control environments.

Three tasks, all with fixed horizon and no early termination:

* ``point_goal``   -- 2-d integrator pushed toward the corner (1, 1);
  s' = s + 0.1 a + noise, actions in [-1, 1]^2, H = 32,
  hidden cost ||s - (1, 1)||.
* ``bimodal_goal`` -- same dynamics, but each episode draws its goal
  uniformly from {(1, 1), (1, -1)} and the cost is measured to the drawn
  goal, so the demonstrator's state distribution has two modes.
* ``expfam_gauss`` -- 1-d direct placement s' = clip(a, [-4, 4]) + noise,
  H = 16, hidden cost (s - 1.5)^2 / 2; the target state law is Gaussian,
  whose diffused score is linear in s, which is what the linear-network
  ablation needs.

The hidden cost is only reachable through ``Env.true_cost`` /
``Trajectory.true_costs``; nothing on the action/observation path exposes
it to a learner.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .diffusion import NumericError

ENV_NAMES = ("point_goal", "bimodal_goal", "expfam_gauss")

_DEMO_MAGIC = b"SMILDEM1"

_EXPFAM_TARGET = 1.5


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    dynamics_noise: float = 0.01
    seed: int = 0


def env_spec(name: str, dynamics_noise: float = 0.01, seed: int = 0) -> EnvSpec:
    """Canonical spec for a named task."""
    if name in ("point_goal", "bimodal_goal"):
        return EnvSpec(name, state_dim=2, action_dim=2, horizon=32,
                       dynamics_noise=dynamics_noise, seed=seed)
    if name == "expfam_gauss":
        return EnvSpec(name, state_dim=1, action_dim=1, horizon=16,
                       dynamics_noise=dynamics_noise, seed=seed)
    raise ValueError(f"unknown environment {name!r}, expected one of {ENV_NAMES}")


@dataclass
class Trajectory:
    states: np.ndarray      # (H+1, state_dim), states[0] is the reset state
    actions: np.ndarray     # (H, action_dim), executed (clipped) actions
    true_costs: np.ndarray  # (H,), hidden cost at states[1:]; evaluation only


class Env:
    """Fixed-horizon environment; one episode is reset + horizon steps."""

    def __init__(self, spec: EnvSpec):
        if spec.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {spec.horizon}")
        self.spec = spec
        self.step_count = 0
        self.goal: np.ndarray | None = None
        self._state: np.ndarray | None = None
        if spec.name in ("point_goal", "bimodal_goal"):
            self.action_low, self.action_high = -1.0, 1.0
        else:
            self.action_low, self.action_high = -4.0, 4.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        name = self.spec.name
        if name in ("point_goal", "bimodal_goal"):
            self._state = np.array([-1.0, -1.0]) + 0.1 * rng.standard_normal(2)
            if name == "bimodal_goal":
                self.goal = np.array([1.0, 1.0 if rng.random() < 0.5 else -1.0])
            else:
                self.goal = np.array([1.0, 1.0])
        else:
            self._state = 0.1 * rng.standard_normal(1)
            self.goal = np.array([_EXPFAM_TARGET])
        return self._state.copy()

    def step(self, action, rng: np.random.Generator) -> np.ndarray:
        action = np.asarray(action, dtype=float)
        if not np.all(np.isfinite(action)):
            raise NumericError(f"non-finite action {action}")
        a = np.clip(action, self.action_low, self.action_high)
        noise = self.spec.dynamics_noise * rng.standard_normal(self.spec.state_dim)
        if self.spec.name in ("point_goal", "bimodal_goal"):
            self._state = self._state + 0.1 * a + noise
        else:
            self._state = a + noise
        self.step_count += 1
        return self._state.copy()

    def true_cost(self, s) -> float:
        """Hidden ground-truth cost; for evaluation only, never for learners."""
        s = np.asarray(s, dtype=float)
        if self.spec.name in ("point_goal", "bimodal_goal"):
            return float(np.linalg.norm(s - self.goal))
        return float((s[0] - _EXPFAM_TARGET) ** 2 / 2.0)


def make_env(spec: EnvSpec) -> Env:
    if spec.name not in ENV_NAMES:
        raise ValueError(f"unknown environment {spec.name!r}, expected one of {ENV_NAMES}")
    return Env(spec)


class BasePolicy:
    """Policy protocol: per-episode setup hook plus a clipped action sampler."""

    def episode_start(self, env: Env, rng: np.random.Generator) -> None:
        pass

    def act(self, s, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass
class GaussianPolicy(BasePolicy):
    """Diagonal-Gaussian policy: MLP mean, learnable log-std, clipped actions."""

    params: nn.ApproximatorParams
    log_std: np.ndarray
    action_clip: tuple[float, float] = (-1.0, 1.0)

    def mean(self, s) -> np.ndarray:
        return nn.forward(self.params, np.asarray(s, dtype=float), 0)

    def mean_batch(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return nn.forward_batch(self.params, S, np.zeros(S.shape[0], dtype=np.intp))

    def sample_raw(self, s, rng) -> tuple[np.ndarray, np.ndarray]:
        """Returns (pre-clip sample, executed action)."""
        raw = self.mean(s) + np.exp(self.log_std) * rng.standard_normal(self.log_std.shape)
        return raw, np.clip(raw, *self.action_clip)

    def act(self, s, rng) -> np.ndarray:
        return self.sample_raw(s, rng)[1]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.params.copy(), self.log_std.copy(), self.action_clip)


def make_policy(state_dim: int, action_dim: int, action_clip, seed: int,
                hidden: int = 64, init_log_std: float = np.log(0.3)) -> GaussianPolicy:
    """Fresh policy with a zeroed output layer (mean identically 0 at init)."""
    params = nn.init_params([state_dim, hidden, action_dim], n_time_bins=1,
                            activation="relu", seed=seed, emb_dim=0)
    params = nn.zero_output_layer(params)
    return GaussianPolicy(params, np.full(action_dim, init_log_std), tuple(action_clip))


@dataclass
class ScriptedExpertPolicy(BasePolicy):
    """Hand-written demonstrator; reads the episode goal from the env."""

    spec: EnvSpec
    log_std: float = float(np.log(0.05))
    _goal: np.ndarray = field(default=None, repr=False)

    def episode_start(self, env: Env, rng) -> None:
        self._goal = env.goal.copy()

    def act(self, s, rng) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.spec.name in ("point_goal", "bimodal_goal"):
            mean = np.clip(2.0 * (self._goal - s), -1.0, 1.0)
            noise_clip = (-1.0, 1.0)
        else:
            mean = np.array([_EXPFAM_TARGET])
            noise_clip = (-4.0, 4.0)
        a = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        return np.clip(a, *noise_clip)


def expert_policy(spec: EnvSpec) -> ScriptedExpertPolicy:
    return ScriptedExpertPolicy(spec)


def rollout(env: Env, policy: BasePolicy, rng: np.random.Generator) -> Trajectory:
    """One fixed-length episode; always exactly ``horizon`` steps."""
    H = env.spec.horizon
    states = np.zeros((H + 1, env.spec.state_dim))
    actions = np.zeros((H, env.spec.action_dim))
    costs = np.zeros(H)
    states[0] = env.reset(rng)
    policy.episode_start(env, rng)
    for h in range(H):
        a = np.asarray(policy.act(states[h], rng), dtype=float)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"policy produced non-finite action at step {h}")
        states[h + 1] = env.step(a, rng)
        actions[h] = np.clip(a, env.action_low, env.action_high)
        costs[h] = env.true_cost(states[h + 1])
    return Trajectory(states=states, actions=actions, true_costs=costs)


def trajectory_return(traj: Trajectory) -> float:
    """True return of one episode: negated cumulative hidden cost."""
    return -float(np.sum(traj.true_costs))


def mean_true_return(env: Env, policy: BasePolicy, n_episodes: int,
                     rng: np.random.Generator) -> float:
    return float(np.mean([trajectory_return(rollout(env, policy, rng))
                          for _ in range(n_episodes)]))


def normalized_return(v_pi: float, v_expert: float, v_random: float) -> float:
    """Affine rescale of a true return: expert maps to 1, random policy to 0."""
    denom = v_expert - v_random
    if abs(denom) < 1e-12:
        raise ValueError("expert and random reference returns coincide")
    return (v_pi - v_random) / denom


def collect_demos(spec: EnvSpec, n_episodes: int, seed: int, with_actions: bool = False):
    """Roll out the scripted expert; returns (states, actions-or-None, mean return).

    State-only mode records the visited states s_1..s_H of each episode.
    With actions, each record pairs the state at which the expert decided
    with the action it took there (s_0..s_{H-1} and a_1..a_H), which is the
    pairing behavior cloning needs. Both modes yield horizon * n_episodes
    rows.
    """
    env = make_env(spec)
    expert = expert_policy(spec)
    rng = np.random.default_rng(seed)
    states, actions, returns = [], [], []
    for _ in range(n_episodes):
        traj = rollout(env, expert, rng)
        returns.append(trajectory_return(traj))
        if with_actions:
            states.append(traj.states[:-1])
            actions.append(traj.actions)
        else:
            states.append(traj.states[1:])
    states = np.concatenate(states, axis=0)
    acts = np.concatenate(actions, axis=0) if with_actions else None
    return states, acts, float(np.mean(returns))


def save_demos(path, env_name: str, states: np.ndarray, actions=None) -> None:
    """Demonstration file: magic, env name, counts, flag, row-major float64."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    name_bytes = env_name.encode()
    with open(path, "wb") as f:
        f.write(_DEMO_MAGIC)
        f.write(struct.pack("<H", len(name_bytes)))
        f.write(name_bytes)
        has_actions = actions is not None
        action_dim = actions.shape[1] if has_actions else 0
        f.write(struct.pack("<IIBI", states.shape[0], states.shape[1],
                            int(has_actions), action_dim))
        f.write(np.ascontiguousarray(states, dtype="<f8").tobytes())
        if has_actions:
            if len(actions) != len(states):
                raise ValueError("states and actions must have equal counts")
            f.write(np.ascontiguousarray(actions, dtype="<f8").tobytes())


_POLICY_MAGIC = b"SMILPOL1"


def save_policy(path, policy: GaussianPolicy, env_name: str) -> None:
    """Policy checkpoint: magic, env name, clip box, log-std, then the
    mean network in the shared network-checkpoint layout."""
    name_bytes = env_name.encode()
    with open(path, "wb") as f:
        f.write(_POLICY_MAGIC)
        f.write(struct.pack("<H", len(name_bytes)))
        f.write(name_bytes)
        f.write(struct.pack("<ddI", policy.action_clip[0], policy.action_clip[1],
                            policy.log_std.shape[0]))
        f.write(np.ascontiguousarray(policy.log_std, dtype="<f8").tobytes())
        nn.write_params(f, policy.params)


def load_policy(path) -> tuple[GaussianPolicy, str]:
    """Returns (policy, env_name); inverse of :func:`save_policy`."""
    with open(path, "rb") as f:
        if f.read(8) != _POLICY_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        (name_len,) = struct.unpack("<H", f.read(2))
        env_name = f.read(name_len).decode()
        lo, hi, adim = struct.unpack("<ddI", f.read(20))
        log_std = np.frombuffer(f.read(adim * 8), dtype="<f8").copy()
        params = nn.read_params(f)
    return GaussianPolicy(params, log_std, (lo, hi)), env_name


def load_demos(path):
    """Returns (env_name, states, actions-or-None); bit-exact round trip."""
    with open(path, "rb") as f:
        if f.read(8) != _DEMO_MAGIC:
            raise ValueError(f"{path}: not a demonstration file")
        (name_len,) = struct.unpack("<H", f.read(2))
        env_name = f.read(name_len).decode()
        count, dim, has_actions, action_dim = struct.unpack("<IIBI", f.read(13))
        states = np.frombuffer(f.read(count * dim * 8), dtype="<f8").reshape(count, dim).copy()
        actions = None
        if has_actions:
            actions = np.frombuffer(f.read(count * action_dim * 8), dtype="<f8")
            actions = actions.reshape(count, action_dim).copy()
    return env_name, states, actions
