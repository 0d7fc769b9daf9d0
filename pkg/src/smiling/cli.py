"""Experiment runner and diagnostics front door.

Subcommands:
  run            run the configured method for each seed; writes one CSV per
                 seed, an aggregated mean/stderr CSV, learning-curve figures,
                 and a policy checkpoint per seed
  collect-demos  roll out the scripted expert and write the demonstration file
  diag           run a numeric diagnostic suite and print a pass/fail table
  eval           re-evaluate a checkpointed policy

Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 diagnostic
failure. Every config key accepted in files and as KEY=VALUE overrides is
listed at the bottom of --help.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import OUTPUT_DIR_ENV_VAR, config_help, resolve_config, to_smiling_config
from .envs import (
    collect_demos,
    env_spec,
    expert_policy,
    load_policy,
    make_env,
    make_policy,
    mean_true_return,
    normalized_return,
    save_demos,
    save_policy,
)
from .imitation import ConfigError, bc_run, dac_lite_run, smiling_run

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DIAG = 3

_METHODS = {"smiling": smiling_run, "bc": bc_run, "dac_lite": dac_lite_run}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smiling",
        description=__doc__,
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured method for each seed",
                         epilog=config_help(),
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("-c", "--config", default=None, help="key=value config file")
    run.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                     help="config overrides applied after the file")

    col = sub.add_parser("collect-demos", help="write a demonstration file",
                         epilog=config_help(),
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    col.add_argument("-c", "--config", default=None)
    col.add_argument("overrides", nargs="*", metavar="KEY=VALUE")

    diag = sub.add_parser("diag", help="run a diagnostic suite")
    diag.add_argument("suite", choices=["identities", "oracles", "estimator-gap",
                                        "probe", "all"])
    diag.add_argument("--out", default=None,
                      help="output directory for probe reports (default output.dir)")

    ev = sub.add_parser("eval", help="re-evaluate a checkpointed policy")
    ev.add_argument("checkpoint", help="policy checkpoint path")
    ev.add_argument("-c", "--config", default=None)
    ev.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
    return parser


def cmd_run(args) -> int:
    from . import report

    exp = resolve_config(args.config, args.overrides)
    method = exp["run.method"]
    seeds = exp["run.seeds"]
    out_dir = os.path.join(exp["output.dir"], f"{method}_{exp['env.name']}")
    report.ensure_dir(out_dir)
    if args.overrides:
        print("overrides: " + " ".join(args.overrides))
    print(f"method={method} env={exp['env.name']} seeds={list(seeds)} "
          f"config_digest={exp.digest}")
    if not os.path.exists(exp["demos.path"]):
        raise ConfigError(f"demonstration file not found: {exp['demos.path']} "
                          "(run collect-demos first)")

    results = []
    for seed in seeds:
        cfg = to_smiling_config(exp, seed)
        result = _METHODS[method](cfg)
        results.append(result)
        csv_path = os.path.join(out_dir, f"seed_{seed}.csv")
        report.write_run_csv(csv_path, result)
        if result.final_policy is not None:
            save_policy(os.path.join(out_dir, f"seed_{seed}_policy.ckpt"),
                        result.final_policy, exp["env.name"])
        print(f"seed {seed}: final return {result.final_norm_return:.3f} "
              f"(best {result.best_norm_return:.3f}, {result.wall_clock:.0f}s) "
              f"-> {csv_path}")
    agg_path = os.path.join(out_dir, "aggregate.csv")
    report.write_aggregate_csv(agg_path, results)
    finals = [r.final_norm_return for r in results]
    print(f"aggregate: mean final return {np.mean(finals):.3f} over {len(seeds)} seeds "
          f"-> {agg_path}")
    if exp["report.figures"]:
        fig_path = os.path.join(out_dir, "learning_curve.png")
        report.render_learning_curves(fig_path, results,
                                      f"{method} on {exp['env.name']}")
        print(f"figure -> {fig_path}")
    return EXIT_OK


def cmd_collect_demos(args) -> int:
    exp = resolve_config(args.config, args.overrides)
    spec = env_spec(exp["env.name"], dynamics_noise=exp["env.dynamics_noise"])
    states, actions, mean_ret = collect_demos(
        spec, exp["demos.episodes"], seed=exp["demos.seed"],
        with_actions=exp["demos.with_actions"])
    path = exp["demos.path"]
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_demos(path, spec.name, states, actions)
    print(f"wrote {states.shape[0]} states"
          + (f" + {actions.shape[0]} actions" if actions is not None else "")
          + f" from {exp['demos.episodes']} episodes to {path}")
    print(f"expert mean return: {mean_ret:.3f}")
    return EXIT_OK


def cmd_diag(args) -> int:
    from .diag import SUITES

    names = list(SUITES) + ["probe"] if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        if name == "probe":
            _run_probe(args)
            continue
        print(f"== suite: {name}")
        for check, ok, detail in SUITES[name]():
            status = "PASS" if ok else "FAIL"
            print(f"  [{status}] {check}: {detail}")
            failed += 0 if ok else 1
    return EXIT_OK if failed == 0 else EXIT_DIAG


def _run_probe(args) -> None:
    """Small sweep over dynamics noise and demo counts; report-only."""
    from . import report
    from .theory_probe import probe_second_order, write_probe_csv

    out_dir = args.out or os.environ.get(OUTPUT_DIR_ENV_VAR, "runs")
    report.ensure_dir(out_dir)
    print("== suite: probe (report-only, no gate)")
    cfgs = []
    for noise in (0.0, 0.05):
        for episodes in (2, 5):
            exp = resolve_config(None, [
                "env.name=expfam_gauss",
                f"env.dynamics_noise={noise}",
                "run.iterations=3",
                "rl.updates_per_iteration=10",
                "cost.n_mc=64",
                "diffusion.n_steps=200",
                "score.pretrain_epochs=120",
                "score.samples_per_update=2048",
                "eval.episodes=10",
                f"demos.path={out_dir}/probe_{noise}_{episodes}.demo",
            ])
            spec = env_spec("expfam_gauss", dynamics_noise=noise)
            states, actions, _ = collect_demos(spec, episodes, seed=77)
            save_demos(exp["demos.path"], spec.name, states, actions)
            cfgs.append(to_smiling_config(exp, seed=0))
    rep = probe_second_order(cfgs, np.random.default_rng(0), eval_episodes=30)
    for row in rep.rows:
        print(f"  {row.label}: gap={row.gap:.3f} var_e={row.var_expert:.4f} "
              f"var_pi={row.var_policy:.4f} ds={row.ds_value:.3f} "
              f"return={row.final_norm_return:.3f}")
    print(f"  spearman(min_var, gap) = {rep.spearman_min_var_gap:.3f}")
    csv_path = os.path.join(out_dir, "probe.csv")
    write_probe_csv(csv_path, rep)
    report.render_probe_figure(os.path.join(out_dir, "probe.png"), rep.rows)
    print(f"  report -> {csv_path}")


def cmd_eval(args) -> int:
    exp = resolve_config(args.config, args.overrides)
    try:
        policy, env_name = load_policy(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    spec = env_spec(env_name, dynamics_noise=exp["env.dynamics_noise"])
    env = make_env(spec)
    episodes = exp["eval.episodes"]
    v_pi = mean_true_return(env, policy, episodes, np.random.default_rng(0))
    v_exp = mean_true_return(env, expert_policy(spec), episodes, np.random.default_rng(1))
    rand = make_policy(spec.state_dim, spec.action_dim, (env.action_low, env.action_high),
                       seed=0)
    v_rand = mean_true_return(env, rand, episodes, np.random.default_rng(2))
    print(f"checkpoint {args.checkpoint} on {env_name} ({episodes} episodes)")
    print(f"  return {v_pi:.3f} (expert {v_exp:.3f}, random {v_rand:.3f})")
    print(f"  normalized return {normalized_return(v_pi, v_exp, v_rand):.3f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "collect-demos": cmd_collect_demos,
                "diag": cmd_diag, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # runtime failures map to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
