"""Numeric diagnostic suites behind the ``diag`` CLI subcommand.

Each suite returns (name, passed, detail) rows that the CLI prints as a
table. The checks compare estimators against analytic Gaussian oracles and
verify the identities the cost construction relies on.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from . import nn
from .cost import CostFn, cost_batch
from .diffusion import (
    DiffusionSchedule,
    conditional_score,
    forward_sample,
    gaussian_marginal_score,
    make_gaussian_score_fn,
    reverse_sample,
)
from .divergence import (
    ds_divergence_gaussian,
    ds_divergence_mc,
    dsm_offset_estimate,
    hellinger_grid,
    naive_vs_corrected_gap,
)
from .scorematch import ScoreModel

LN2 = float(np.log(2.0))


def suite_identities() -> list[tuple[str, bool, str]]:
    rows = []
    rng = np.random.default_rng(0)

    worst = 0.0
    for _ in range(500):
        s = rng.standard_normal(3)
        t = rng.uniform(0.02, 5.0)
        eps = rng.standard_normal(3)
        got = conditional_score(s, forward_sample(s, t, eps), t)
        want = -eps / np.sqrt(1 - np.exp(-2 * t))
        worst = max(worst, float(np.max(np.abs(got - want))))
    rows.append(("conditional-score noise identity", worst < 1e-9,
                 f"max abs deviation {worst:.2e} (tol 1e-9)"))

    # Regression-objective offset: conditional vs marginal targets differ by
    # a model-independent constant; at t = ln 2 on unit-Gaussian data the
    # constant is e^{-2t} / (1 - e^{-2t}) = 1/3.
    sched = DiffusionSchedule(T=LN2, n_steps=2, t_min=LN2)
    states = rng.standard_normal((20_000, 1))
    ok = True
    details = []
    for i in range(5):
        g = ScoreModel(nn.init_params([1, 64, 1], sched.n_steps, seed=100 + i), sched)
        g.params.time_embedding[:] = 0.1 * rng.standard_normal(
            g.params.time_embedding.shape)
        off, se = dsm_offset_estimate(g, np.zeros(1), 1.0, states, sched,
                                      100_000, np.random.default_rng(200 + i))
        z = abs(off - 1.0 / 3.0) / se
        ok = ok and z < 3.0
        details.append(f"{off:.4f}({z:.1f}s)")
    rows.append(("objective offset = 1/3 for 5 models", ok,
                 "offsets " + " ".join(details) + " vs 1/3, gate 3 std errors"))

    g = ScoreModel(nn.init_params([2, 32, 2], 50, seed=7),
                   DiffusionSchedule(T=2.0, n_steps=50, t_min=0.01))
    g.params.time_embedding[:] = rng.standard_normal(g.params.time_embedding.shape)
    cf = CostFn(g, g, g.schedule, n_mc=64)
    vals = cost_batch(cf, rng.standard_normal((20, 2)), np.random.default_rng(5))
    rows.append(("self-cost exactly zero", bool(np.all(vals == 0.0)),
                 f"max |cost| {np.max(np.abs(vals)):.1e} with shared models"))
    return rows


def suite_oracles() -> list[tuple[str, bool, str]]:
    rows = []
    rng = np.random.default_rng(1)
    sched = DiffusionSchedule(T=1.0, n_steps=2000, t_min=1e-6)
    param_sets = [(0.0, 1.0, 1.0, 1.0), (0.0, 1.0, 1.0, 0.25), (2.0, 0.25, 0.0, 1.0),
                  (0.0, 1.0, 0.0, 4.0), (1.0, 0.5, 0.0, 1.0)]
    for m1, s1, m2, s2 in param_sets:
        samples = m1 + np.sqrt(s1) * rng.standard_normal((200_000, 1))
        est = ds_divergence_mc(make_gaussian_score_fn(np.array([m1]), s1),
                               make_gaussian_score_fn(np.array([m2]), s2),
                               samples, sched, 200_000, rng)
        cf = ds_divergence_gaussian(np.array([m1]), s1, np.array([m2]), s2, sched)
        z = abs(est.value - cf) / est.std_error
        rows.append((f"divergence MC vs closed form ({m1:g},{s1:g})|({m2:g},{s2:g})",
                     z < 3.0, f"mc {est.value:.5f} cf {cf:.5f} z={z:.2f}"))

    grid = np.arange(-8.0, 9.0, 1e-3)
    h = hellinger_grid(lambda x: stats.norm.pdf(x), lambda x: stats.norm.pdf(x, loc=1),
                       grid)
    target = 1 - np.exp(-0.125)
    rows.append(("Hellinger grid vs closed form", abs(h - target) < 1e-4,
                 f"grid {h:.6f} closed form {target:.6f}"))

    sched2 = DiffusionSchedule(T=3.0, n_steps=100, t_min=0.01)
    out = reverse_sample(make_gaussian_score_fn(np.array([2.0]), 0.25), sched2,
                         10_000, 200, np.random.default_rng(2), dim=1)
    mean_ok = abs(out.mean() - 2.0) < 0.1
    var_ok = abs(out.var() - 0.25) < 0.1
    rows.append(("reverse sampler hits N(2, 0.25)", mean_ok and var_ok,
                 f"mean {out.mean():.3f} var {out.var():.3f}"))
    return rows


def suite_estimator_gap() -> list[tuple[str, bool, str]]:
    """Plug-in objective error grows with expert-model shift; corrected stays flat."""
    rows = []
    rng = np.random.default_rng(3)
    sched = DiffusionSchedule(T=3.0, n_steps=1000, t_min=0.01)
    states = rng.standard_normal((20_000, 1))
    score_true = make_gaussian_score_fn(np.zeros(1), 1.0)
    fit_err = 0.05

    def g_pi(x, t):
        return score_true(x, t) + fit_err

    results = {}
    for shift in (1.0, 10.0):
        def g_e(x, t, c=shift):
            return score_true(x, t) + c

        naive, corrected, _, corr_se = naive_vs_corrected_gap(
            g_e, g_pi, score_true, states, sched, 200_000, np.random.default_rng(4),
            with_stderr=True)
        results[shift] = (naive, corrected, corr_se)
        rows.append((f"shift {shift:g}: naive vs corrected error", True,
                     f"naive {naive:.4f} corrected {corrected:.4f}"))
    growth = results[10.0][0] > results[1.0][0]
    rows.append(("naive error grows with the shift", growth,
                 f"{results[1.0][0]:.4f} -> {results[10.0][0]:.4f}"))
    _, corrected10, corr_se10 = results[10.0]
    bounded = corrected10 <= fit_err**2 + 3 * corr_se10
    rows.append(("corrected error bounded by fit error", bounded,
                 f"corrected {corrected10:.4f} vs fit error {fit_err**2:.4f} "
                 f"+ 3 MC std errors ({3 * corr_se10:.4f})"))
    ratio = results[10.0][0] / max(results[10.0][1], 1e-12)
    rows.append(("error ratio at shift 10 is >= 5", ratio >= 5.0, f"ratio {ratio:.1f}"))
    return rows


SUITES = {
    "identities": suite_identities,
    "oracles": suite_oracles,
    "estimator-gap": suite_estimator_gap,
}
