"""Line-based key=value experiment configuration.

Every tunable of the library appears here with its default; unknown keys
are rejected so typos fail loudly. A config is resolved from (defaults,
file, command-line overrides) in that order and hashed into a short digest
that is stamped on every metrics row, so two byte-identical configs are
recognizable from their outputs.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from .diffusion import DiffusionSchedule
from .envs import env_spec
from .imitation import ConfigError, SmilingConfig
from .rl import RlConfig
from .scorematch import ScoreTrainConfig

OUTPUT_DIR_ENV_VAR = "SMILING_OUTPUT_DIR"


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    parts = [p for p in raw.replace("[", "").replace("]", "").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _parse_choice(*choices):
    def parse(raw: str) -> str:
        if raw not in choices:
            raise ValueError(f"expected one of {choices}, got {raw!r}")
        return raw

    return parse


@dataclass(frozen=True)
class ConfigKey:
    default: str
    parse: callable
    help: str


CONFIG_KEYS: dict[str, ConfigKey] = {
    "run.method": ConfigKey("smiling", _parse_choice("smiling", "bc", "dac_lite"),
                            "algorithm to run"),
    "run.seeds": ConfigKey("0,1,2,3,4", _parse_int_list, "comma-separated run seeds"),
    "run.iterations": ConfigKey("40", int, "outer iterations K (checkpoints for bc)"),
    "run.state_action": ConfigKey("false", _parse_bool,
                                  "train on state-action vectors instead of states"),
    "run.linear": ConfigKey("false", _parse_bool,
                            "ablation: remove hidden activations (purely linear nets)"),
    "output.dir": ConfigKey("runs", str,
                            f"output directory (env {OUTPUT_DIR_ENV_VAR} overrides)"),
    "report.figures": ConfigKey("true", _parse_bool,
                                "render learning-curve figures next to the CSVs"),
    "env.name": ConfigKey("point_goal", _parse_choice("point_goal", "bimodal_goal",
                                                      "expfam_gauss"), "task name"),
    "env.dynamics_noise": ConfigKey("0.01", float, "std of additive dynamics noise"),
    "demos.path": ConfigKey("demos/point_goal.demo", str, "demonstration file"),
    "demos.episodes": ConfigKey("5", int, "expert episodes for collect-demos"),
    "demos.with_actions": ConfigKey("false", _parse_bool,
                                    "record expert actions in the demonstration file"),
    "demos.seed": ConfigKey("123", int, "seed for collect-demos"),
    "diffusion.T": ConfigKey("3.0", float, "forward-process horizon"),
    "diffusion.n_steps": ConfigKey("256", int,
                                   "time discretization steps (desk-scale default)"),
    "diffusion.t_min": ConfigKey("0.01", float, "smallest sampled diffusion time"),
    "score.epochs": ConfigKey("6", int, "training passes per learner score update"),
    "score.pretrain_epochs": ConfigKey("400", int, "training passes for the expert score"),
    "score.batch_size": ConfigKey("1024", int, "score-matching minibatch size"),
    "score.mc_pairs_per_state": ConfigKey("1", int, "noise draws per state per pass"),
    "score.learning_rate": ConfigKey("0.005", float, "score-model Adam learning rate"),
    "score.samples_per_update": ConfigKey("4096", int,
                                          "buffer subsample size per learner update"),
    "score.hidden_units": ConfigKey("256", int, "hidden width of score/discriminator nets"),
    "score.time_embedding_dim": ConfigKey("16", int, "learnable time-embedding width"),
    "cost.n_mc": ConfigKey("500", int, "noise draws per cost evaluation"),
    "cost.normalize": ConfigKey("true", _parse_bool, "normalize each cost batch"),
    "cost.norm_std": ConfigKey("0.1", float, "target std of normalized cost batches"),
    "rl.episodes_per_update": ConfigKey("8", int, "episodes per policy-gradient update"),
    "rl.updates_per_iteration": ConfigKey("8", int, "policy updates per outer iteration"),
    "rl.policy_lr": ConfigKey("0.005", float, "policy Adam learning rate"),
    "rl.value_lr": ConfigKey("0.01", float, "value-baseline Adam learning rate"),
    "rl.entropy_bonus": ConfigKey("0.001", float, "entropy bonus coefficient"),
    "rl.warm_start": ConfigKey("true", _parse_bool,
                               "continue from the previous iteration's policy"),
    "rl.policy_hidden": ConfigKey("64", int, "policy network hidden width"),
    "rl.value_hidden": ConfigKey("64", int, "value network hidden width"),
    "smiling.rollout_episodes": ConfigKey("5", int,
                                          "learner episodes appended to the buffer per iteration"),
    "smiling.bc_epochs": ConfigKey("300", int, "behavior-cloning training passes"),
    "eval.episodes": ConfigKey("16", int, "episodes per evaluation point"),
}


@dataclass
class ExperimentConfig:
    values: dict
    digest: str

    def __getitem__(self, key):
        return self.values[key]


def _parse_assignment(line: str):
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, _, raw = line.partition("=")
    return key.strip(), raw.strip()


def resolve_config(file_path: str | None = None, overrides=()) -> ExperimentConfig:
    """Defaults, then file assignments, then command-line overrides."""
    raw = {k: spec.default for k, spec in CONFIG_KEYS.items()}
    if file_path is not None:
        try:
            text = open(file_path).read()
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {file_path}")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, val = _parse_assignment(line)
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{file_path}:{lineno}: unknown config key {key!r}")
            raw[key] = val
    for ov in overrides:
        key, val = _parse_assignment(ov)
        if key not in CONFIG_KEYS:
            raise ConfigError(f"override: unknown config key {key!r}")
        raw[key] = val
    if os.environ.get(OUTPUT_DIR_ENV_VAR):
        raw["output.dir"] = os.environ[OUTPUT_DIR_ENV_VAR]

    values = {}
    for key, val in raw.items():
        try:
            values[key] = CONFIG_KEYS[key].parse(val)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}")
    # The digest identifies the experiment: keys that cannot change results
    # (where outputs land, whether figures render) are left out, so reruns
    # into different directories stamp identical digests.
    excluded = {"output.dir", "report.figures"}
    canonical = "\n".join(f"{k}={raw[k]}" for k in sorted(raw) if k not in excluded)
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    return ExperimentConfig(values=values, digest=digest)


def config_help() -> str:
    lines = ["configuration keys (key = default  -- description):"]
    for key, spec in CONFIG_KEYS.items():
        lines.append(f"  {key} = {spec.default}  -- {spec.help}")
    return "\n".join(lines)


def to_smiling_config(exp: ExperimentConfig, seed: int) -> SmilingConfig:
    """Materialize one seed's run configuration."""
    v = exp.values
    spec = env_spec(v["env.name"], dynamics_noise=v["env.dynamics_noise"])
    schedule = DiffusionSchedule(T=v["diffusion.T"], n_steps=v["diffusion.n_steps"],
                                 t_min=v["diffusion.t_min"])
    score_cfg = ScoreTrainConfig(
        epochs=v["score.epochs"],
        batch_size=v["score.batch_size"],
        mc_pairs_per_state=v["score.mc_pairs_per_state"],
        learning_rate=v["score.learning_rate"],
        samples_per_update=v["score.samples_per_update"],
        hidden_units=v["score.hidden_units"],
        emb_dim=v["score.time_embedding_dim"],
    )
    rl_cfg = RlConfig(
        episodes_per_update=v["rl.episodes_per_update"],
        updates_per_iteration=v["rl.updates_per_iteration"],
        policy_lr=v["rl.policy_lr"],
        value_lr=v["rl.value_lr"],
        entropy_bonus=v["rl.entropy_bonus"],
        warm_start=v["rl.warm_start"],
        policy_hidden=v["rl.policy_hidden"],
        value_hidden=v["rl.value_hidden"],
    )
    return SmilingConfig(
        env_spec=spec,
        schedule=schedule,
        score_cfg=score_cfg,
        rl_cfg=rl_cfg,
        demos=v["demos.path"],
        K=v["run.iterations"],
        state_action_mode=v["run.state_action"],
        linear_mode=v["run.linear"],
        seed=seed,
        pretrain_epochs=v["score.pretrain_epochs"],
        bc_epochs=v["smiling.bc_epochs"],
        cost_n_mc=v["cost.n_mc"],
        cost_normalize=v["cost.normalize"],
        cost_norm_std=v["cost.norm_std"],
        rollout_episodes=v["smiling.rollout_episodes"],
        eval_episodes=v["eval.episodes"],
        config_digest=exp.digest,
    )
