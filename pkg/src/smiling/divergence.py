"""Distribution discrepancies along the forward diffusion process.

The central quantity is the expected squared difference of two diffusion
score functions, sampled along the forward process of the first
distribution:

    E_{s ~ P} E_{t ~ U(grid)} E_{s_t ~ q_t(.|s)} ||score_P(s_t, t) - score_Q(s_t, t)||^2

This file provides a Monte-Carlo estimator of that quantity, an exact
quadrature oracle for isotropic Gaussians, a grid-based squared Hellinger
distance, and the naive-vs-corrected comparison that demonstrates why the
plug-in estimator of the objective is not usable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

from .diffusion import (
    DiffusionSchedule,
    NumericError,
    conditional_score,
    diffused_gaussian_moments,
    forward_sample,
)
from .scorematch import _eval_score_fn


@dataclass
class DsEstimate:
    """Monte-Carlo estimate: mean of nonnegative per-draw terms."""

    value: float
    std_error: float
    n_mc: int


def _draw_terms(score_p, score_q, samples_p, schedule, n_mc, rng):
    samples_p = np.atleast_2d(np.asarray(samples_p, dtype=float))
    if samples_p.shape[0] == 0:
        raise ValueError("samples_p must be nonempty")
    # Cycle through the provided samples so n_mc == len(samples_p) uses each
    # exactly once; t and eps are drawn fresh per term.
    idx = np.arange(n_mc) % samples_p.shape[0]
    s = samples_p[idx]
    t_bins = rng.integers(0, schedule.n_steps, size=n_mc)
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(s.shape)
    s_t = forward_sample(s, t, eps)
    p_vals = _eval_score_fn(score_p, s_t, t_bins, schedule)
    q_vals = _eval_score_fn(score_q, s_t, t_bins, schedule)
    if not (np.all(np.isfinite(p_vals)) and np.all(np.isfinite(q_vals))):
        raise NumericError("score function returned non-finite values")
    return np.sum((p_vals - q_vals) ** 2, axis=1), s, s_t, t, t_bins


def ds_divergence_mc(score_p, score_q, samples_p, schedule: DiffusionSchedule,
                     n_mc: int, rng) -> DsEstimate:
    """Monte-Carlo score divergence of P from Q given samples of P.

    ``score_p`` and ``score_q`` follow the (x, t) -> score convention and may
    be trained models or analytic closures. The estimate is asymmetric by
    construction: states are drawn from ``samples_p`` only.
    """
    terms, *_ = _draw_terms(score_p, score_q, samples_p, schedule, n_mc, rng)
    value = float(np.mean(terms))
    std_error = float(np.std(terms) / np.sqrt(n_mc))
    return DsEstimate(value=value, std_error=std_error, n_mc=n_mc)


def _ds_gaussian_at_t(mu1, s1, mu2, s2, t):
    """E_{x ~ P_t} ||score_P(x) - score_Q(x)||^2 for isotropic Gaussians.

    The score difference is affine in x, so the expectation reduces to
    second moments of P_t: with a = e^{-t}(mu1/v1 - mu2/v2) and
    B = 1/v2 - 1/v1, it equals ||a + B m1||^2 + B^2 d v1 where m1, v1 are
    the diffused mean and variance of P.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    d = mu1.shape[0]
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    m1, v1 = diffused_gaussian_moments(mu1, s1, t)
    m2, v2 = diffused_gaussian_moments(mu2, s2, t)
    a = m1 / v1 - m2 / v2
    B = 1.0 / v2 - 1.0 / v1
    mean_term = np.sum((a + B * m1) ** 2, axis=1)
    return mean_term + B[:, 0] ** 2 * d * v1[:, 0]


def ds_divergence_gaussian(mu1, s1: float, mu2, s2: float,
                           schedule: DiffusionSchedule, n_quad: int = 10_000) -> float:
    """Exact score divergence between N(mu1, s1 I) and N(mu2, s2 I).

    The inner expectation over x is closed-form (the score difference is
    affine in x); the outer average over t uses trapezoid quadrature on
    [t_min, T] with ``n_quad`` points. Degenerate schedules (t_min == T)
    evaluate at the single time.
    """
    if s1 <= 0 or s2 <= 0:
        raise ValueError(f"variances must be positive, got {s1}, {s2}")
    if schedule.t_min == schedule.T:
        return float(_ds_gaussian_at_t(mu1, s1, mu2, s2, schedule.t_min)[0])
    ts = np.linspace(schedule.t_min, schedule.T, n_quad)
    vals = _ds_gaussian_at_t(mu1, s1, mu2, s2, ts)
    return float(_trapezoid(vals, ts) / (schedule.T - schedule.t_min))


def hellinger_grid(pdf_p, pdf_q, grid) -> float:
    """Squared Hellinger distance 0.5 * integral (sqrt p - sqrt q)^2 on a grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise ValueError("grid must be a 1-d array with at least 2 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    def _eval(pdf):
        try:
            vals = np.asarray(pdf(grid), dtype=float)
            if vals.shape == grid.shape:
                return vals
        except (TypeError, ValueError):
            pass
        return np.asarray([pdf(x) for x in grid], dtype=float)

    p = _eval(pdf_p)
    q = _eval(pdf_q)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("densities must be nonnegative on the grid")
    return float(0.5 * _trapezoid((np.sqrt(p) - np.sqrt(q)) ** 2, grid))


def naive_vs_corrected_gap(g_e, g_pi, score_true, states,
                           schedule: DiffusionSchedule, n_mc: int, rng,
                           with_stderr: bool = False):
    """Errors of two objective estimators against analytic ground truth.

    The target is E ||g_e - score_true||^2 along the diffusion of the given
    states. The naive estimate plugs the learner-score model g_pi in place
    of score_true; the corrected estimate uses conditional scores in both
    squared terms so the plug-in bias cancels. Returns
    (|naive - target|, |corrected - target|), all three computed on shared
    (s, t, eps) draws; with ``with_stderr`` the Monte-Carlo standard errors
    of the two error estimates are appended.
    """
    samples = np.atleast_2d(np.asarray(states, dtype=float))
    idx = np.arange(n_mc) % samples.shape[0]
    s = samples[idx]
    t_bins = rng.integers(0, schedule.n_steps, size=n_mc)
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(s.shape)
    s_t = forward_sample(s, t, eps)
    cond = conditional_score(s, s_t, t, t_min=schedule.t_min)

    e_vals = _eval_score_fn(g_e, s_t, t_bins, schedule)
    pi_vals = _eval_score_fn(g_pi, s_t, t_bins, schedule)
    true_vals = _eval_score_fn(score_true, s_t, t_bins, schedule)

    target_terms = np.sum((e_vals - true_vals) ** 2, axis=1)
    naive_terms = np.sum((e_vals - pi_vals) ** 2, axis=1)
    corrected_terms = (np.sum((e_vals - cond) ** 2, axis=1)
                       - np.sum((pi_vals - cond) ** 2, axis=1))
    target = float(np.mean(target_terms))
    naive_err = abs(float(np.mean(naive_terms)) - target)
    corrected_err = abs(float(np.mean(corrected_terms)) - target)
    if not with_stderr:
        return naive_err, corrected_err
    naive_se = float(np.std(naive_terms - target_terms) / np.sqrt(n_mc))
    corrected_se = float(np.std(corrected_terms - target_terms) / np.sqrt(n_mc))
    return naive_err, corrected_err, naive_se, corrected_se


def dsm_offset_estimate(g, mu, sigma2, states, schedule: DiffusionSchedule,
                        n_mc: int, rng):
    """Paired estimate of (conditional-target loss) - (marginal-target loss).

    For Gaussian data the regression objective with conditional-score
    targets exceeds the one with true marginal-score targets by a constant
    that does not depend on g. This helper estimates that constant for one
    model with shared draws and returns (offset, std_error).
    """
    samples = np.atleast_2d(np.asarray(states, dtype=float))
    idx = np.arange(n_mc) % samples.shape[0]
    s = samples[idx]
    t_bins = rng.integers(0, schedule.n_steps, size=n_mc)
    t = np.asarray(schedule.time_of_bin(t_bins), dtype=float).reshape(-1, 1)
    eps = rng.standard_normal(s.shape)
    s_t = forward_sample(s, t, eps)
    cond = conditional_score(s, s_t, t, t_min=schedule.t_min)
    from .diffusion import gaussian_marginal_score

    marg = gaussian_marginal_score(mu, sigma2, s_t, t)
    g_vals = _eval_score_fn(g, s_t, t_bins, schedule)
    diffs = np.sum((g_vals - cond) ** 2, axis=1) - np.sum((g_vals - marg) ** 2, axis=1)
    return float(np.mean(diffs)), float(np.std(diffs) / np.sqrt(n_mc))
