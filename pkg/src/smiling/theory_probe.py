"""Empirical probes relating performance gaps to return variances.

Directional, correlational checks only: each configuration is run through
the full imitation loop unchanged, then the gap to the expert and the
variances of episodic true return are measured and reported side by side.
No pass/fail gate is attached; the report states what was measured.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .cost import OracleCost
from .envs import expert_policy, load_demos, make_env
from .imitation import SmilingConfig, smiling_run
from .rl import policy_value


@dataclass
class ProbeRow:
    label: str
    dynamics_noise: float
    n_demos: int
    gap: float
    var_expert: float
    var_policy: float
    min_var: float
    ds_value: float
    final_norm_return: float


@dataclass
class ProbeReport:
    rows: list[ProbeRow]
    spearman_min_var_gap: float


def probe_second_order(cfgs: list[SmilingConfig], rng: np.random.Generator,
                       eval_episodes: int = 50) -> ProbeReport:
    """Run each config and relate min(Var_expert, Var_policy) to the gap.

    Read-only over the imitation loop's outputs: the gap is the difference
    in expected cumulative true cost between the learned policy and the
    expert, variances are sample variances of the episodic cumulative true
    cost, and the association is summarized as a Spearman rank correlation
    when at least three rows are available.
    """
    rows = []
    for cfg in cfgs:
        result = smiling_run(cfg)
        env = make_env(cfg.env_spec)
        oracle = OracleCost(env.true_cost)
        seed = int(rng.integers(2**31))
        exp_mean, exp_var = policy_value(env, expert_policy(cfg.env_spec), oracle,
                                         eval_episodes, np.random.default_rng(seed))
        pol_mean, pol_var = policy_value(env, result.final_policy, oracle,
                                         eval_episodes, np.random.default_rng(seed + 1))
        _, demo_states, _ = load_demos(cfg.demos)
        rows.append(ProbeRow(
            label=f"{cfg.env_spec.name}/noise={cfg.env_spec.dynamics_noise:g}"
                  f"/N={demo_states.shape[0]}",
            dynamics_noise=cfg.env_spec.dynamics_noise,
            n_demos=demo_states.shape[0],
            gap=pol_mean - exp_mean,
            var_expert=exp_var,
            var_policy=pol_var,
            min_var=min(exp_var, pol_var),
            ds_value=result.records[-1].ds_value,
            final_norm_return=result.records[-1].norm_return_current,
        ))
    if len(rows) >= 3:
        rho = float(stats.spearmanr([r.min_var for r in rows],
                                    [r.gap for r in rows]).statistic)
    else:
        rho = float("nan")
    return ProbeReport(rows=rows, spearman_min_var_gap=rho)


def write_probe_csv(path, report: ProbeReport) -> None:
    cols = ("label", "dynamics_noise", "n_demos", "gap", "var_expert", "var_policy",
            "min_var", "ds_value", "final_norm_return")
    lines = [",".join(cols)]
    for r in report.rows:
        lines.append(",".join(str(getattr(r, c)) for c in cols))
    lines.append(f"# spearman(min_var, gap) = {report.spearman_min_var_gap}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
