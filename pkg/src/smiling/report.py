"""CSV metrics emission and learning-curve figures.

CSV is the primary metrics format: one file per seed plus an aggregate
with across-seed means and standard errors. Runs with identical configs
and seeds produce byte-identical CSVs, so floats are printed through a
fixed %.10g format. The report path additionally renders a PNG
learning-curve figure next to the delimited output.
"""

from __future__ import annotations

import math
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .imitation import RunResult  # noqa: E402

RUN_COLUMNS = ("iter", "env_steps", "norm_return_current", "norm_return_mixture",
               "ds_value", "ds_stderr", "score_loss", "rl_cost_mean", "seed",
               "config_digest")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if math.isnan(x):
        return "nan"
    return format(float(x), ".10g")


def write_run_csv(path, result: RunResult) -> None:
    rows = [",".join(RUN_COLUMNS)]
    for r in result.records:
        rows.append(",".join(_fmt(v) for v in (
            r.k, r.env_steps, r.norm_return_current, r.norm_return_mixture,
            r.ds_value, r.ds_stderr, r.score_loss, r.rl_cost_mean,
            result.seed, result.config_digest)))
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


def _mean_stderr(vals):
    vals = np.asarray(vals, dtype=float)
    mean = float(np.mean(vals))
    if len(vals) < 2:
        return mean, 0.0
    return mean, float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def write_aggregate_csv(path, results: list[RunResult]) -> None:
    """Across-seed mean/stderr per iteration."""
    cols = ("iter", "env_steps_mean", "norm_return_mean", "norm_return_stderr",
            "norm_return_mixture_mean", "norm_return_mixture_stderr",
            "ds_value_mean", "ds_value_stderr", "n_seeds", "config_digest")
    n_iters = min(len(r.records) for r in results)
    rows = [",".join(cols)]
    for i in range(n_iters):
        recs = [r.records[i] for r in results]
        ret_m, ret_se = _mean_stderr([r.norm_return_current for r in recs])
        mix_m, mix_se = _mean_stderr([r.norm_return_mixture for r in recs])
        ds_m, ds_se = _mean_stderr([r.ds_value for r in recs])
        rows.append(",".join(_fmt(v) for v in (
            recs[0].k, float(np.mean([r.env_steps for r in recs])),
            ret_m, ret_se, mix_m, mix_se, ds_m, ds_se,
            len(results), results[0].config_digest)))
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


def render_learning_curves(path, results: list[RunResult], title: str) -> None:
    """Per-seed curves plus the across-seed mean band; DS panel when present."""
    iters = [r.k for r in results[0].records]
    returns = np.array([[rec.norm_return_current for rec in r.records] for r in results])
    ds_vals = np.array([[rec.ds_value for rec in r.records] for r in results])
    have_ds = np.isfinite(ds_vals).any()

    fig, axes = plt.subplots(1, 2 if have_ds else 1, figsize=(9 if have_ds else 5, 3.4))
    axes = np.atleast_1d(axes)
    ax = axes[0]
    for row in returns:
        ax.plot(iters, row, color="tab:blue", alpha=0.25, lw=0.8)
    mean = returns.mean(axis=0)
    ax.plot(iters, mean, color="tab:blue", lw=2, label="mean")
    if len(results) > 1:
        se = returns.std(axis=0, ddof=1) / np.sqrt(len(results))
        ax.fill_between(iters, mean - se, mean + se, color="tab:blue", alpha=0.2)
    ax.axhline(1.0, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("normalized return")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)

    if have_ds:
        ax2 = axes[1]
        for row in ds_vals:
            ax2.plot(iters, row, color="tab:orange", alpha=0.25, lw=0.8)
        ax2.plot(iters, np.nanmean(ds_vals, axis=0), color="tab:orange", lw=2)
        ax2.axhline(0.0, color="gray", ls="--", lw=0.8)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("score-divergence estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def render_probe_figure(path, rows) -> None:
    """Scatter of performance gap against the smaller return variance."""
    min_vars = [r.min_var for r in rows]
    gaps = [r.gap for r in rows]
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    ax.scatter(min_vars, gaps, color="tab:green")
    for r in rows:
        ax.annotate(r.label, (r.min_var, r.gap), fontsize=7,
                    textcoords="offset points", xytext=(4, 2))
    ax.set_xlabel("min(expert, learner) return variance")
    ax.set_ylabel("performance gap")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
