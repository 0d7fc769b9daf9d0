"""Ornstein-Uhlenbeck forward process and its closed forms.

The forward SDE is dx = -x dt + sqrt(2) dB, whose conditional law given a
start point s is N(s e^{-t}, (1 - e^{-2t}) I) and whose stationary law is
the standard normal. This module provides exact conditional sampling and
scores, analytic marginal scores for Gaussian (and Gaussian-mixture) data
as test oracles, and an Euler-Maruyama integrator for the reverse-time SDE
dz = (z + 2 * score(z, T - tau)) dtau + sqrt(2) dB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T_MIN = 1e-2


class NumericError(RuntimeError):
    """A computation produced non-finite values."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Time grid for the forward process.

    Times live on the uniform grid {t_min + i * (T - t_min) / (n_steps - 1)}.
    ``t_min`` keeps 1/(1 - e^{-2t}) bounded; ``t_min == T`` is allowed and
    collapses the grid to a single repeated time (useful for fixed-t
    diagnostics).
    """

    T: float = 3.0
    n_steps: int = 5000
    t_min: float = DEFAULT_T_MIN

    def __post_init__(self):
        if not (0.0 < self.t_min <= self.T):
            raise ValueError(f"need 0 < t_min <= T, got t_min={self.t_min}, T={self.T}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_min, self.T, self.n_steps)

    def time_of_bin(self, i) -> np.ndarray | float:
        step = (self.T - self.t_min) / (self.n_steps - 1)
        return self.t_min + np.asarray(i) * step

    def bin_of_time(self, t) -> np.ndarray | int:
        """Nearest grid index for a time value (exact on grid points)."""
        step = (self.T - self.t_min) / (self.n_steps - 1)
        if step == 0.0:
            return np.zeros_like(np.asarray(t), dtype=np.intp) if np.ndim(t) else 0
        idx = np.rint((np.asarray(t) - self.t_min) / step).astype(np.intp)
        idx = np.clip(idx, 0, self.n_steps - 1)
        return idx if np.ndim(t) else int(idx)


@dataclass
class NoisePair:
    """One (time, standard-normal noise) draw used to corrupt a state."""

    t: float
    eps: np.ndarray


def sample_time_bins(schedule: DiffusionSchedule, rng: np.random.Generator, size=None):
    return rng.integers(0, schedule.n_steps, size=size)


def sample_time(schedule: DiffusionSchedule, rng: np.random.Generator) -> float:
    """Draw a time uniformly over the schedule grid."""
    return float(schedule.time_of_bin(int(sample_time_bins(schedule, rng))))


def sample_noise_pair(schedule: DiffusionSchedule, rng: np.random.Generator, dim: int) -> NoisePair:
    return NoisePair(t=sample_time(schedule, rng), eps=rng.standard_normal(dim))


def forward_sample(s, t, eps):
    """Closed-form conditional sample: s e^{-t} + sqrt(1 - e^{-2t}) eps.

    Broadcasts over leading axes, so ``s``/``eps`` may be (d,) or (n, d) and
    ``t`` a scalar or an (n, 1)-shaped array.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError(f"forward_sample requires t > 0, got {t}")
    decay = np.exp(-t)
    return np.asarray(s) * decay + np.sqrt(1.0 - decay**2) * np.asarray(eps)


def conditional_score(s, s_t, t, t_min: float = DEFAULT_T_MIN):
    """Score of the conditional law: (s e^{-t} - s_t) / (1 - e^{-2t}).

    Equals -eps / sqrt(1 - e^{-2t}) when s_t = forward_sample(s, t, eps).
    ``t`` below ``t_min`` is rejected to keep the 1/(1 - e^{-2t}) factor
    bounded.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < t_min - 1e-12):
        raise ValueError(f"conditional_score requires t >= t_min={t_min}, got {t}")
    decay = np.exp(-t)
    return (np.asarray(s) * decay - np.asarray(s_t)) / (1.0 - decay**2)


def diffused_gaussian_moments(mu, sigma2, t):
    """Mean and variance of the diffused law of N(mu, sigma2 I) at time t."""
    decay = np.exp(-np.asarray(t, dtype=float))
    return np.asarray(mu) * decay, sigma2 * decay**2 + 1.0 - decay**2


def gaussian_marginal_score(mu, sigma2: float, x, t):
    """Exact diffused score of N(mu, sigma2 I): (mu e^{-t} - x) / v_t.

    v_t = sigma2 e^{-2t} + 1 - e^{-2t}. Valid for all t >= 0.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError(f"t must be nonnegative, got {t}")
    mean, var = diffused_gaussian_moments(mu, sigma2, t)
    return (mean - np.asarray(x)) / var


def gaussian_mixture_marginal_score(mus, sigma2s, weights, x, t):
    """Exact diffused score of a 1-d Gaussian mixture (oracle for tests).

    Each component N(mu_i, sigma2_i) diffuses to N(mu_i e^{-t}, v_{i,t});
    the mixture score is the responsibility-weighted sum of component
    scores.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    log_terms = []
    comp_scores = []
    for mu, s2, w in zip(mus, sigma2s, weights):
        mean, var = diffused_gaussian_moments(mu, s2, t)
        log_terms.append(np.log(w) - 0.5 * np.log(2 * np.pi * var) - (x - mean) ** 2 / (2 * var))
        comp_scores.append((mean - x) / var)
    log_terms = np.stack(log_terms)
    comp_scores = np.stack(comp_scores)
    log_norm = np.logaddexp.reduce(log_terms, axis=0)
    resp = np.exp(log_terms - log_norm)
    return np.sum(resp * comp_scores, axis=0)


def make_gaussian_score_fn(mu, sigma2: float):
    """Analytic score function with the (x, t) -> score calling convention."""
    mu = np.asarray(mu, dtype=float)

    def score(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        t_col = t.reshape(-1, 1) if t.ndim == 1 else t
        return gaussian_marginal_score(mu, sigma2, x, t_col)

    return score


def reverse_sample(
    score_fn,
    schedule: DiffusionSchedule,
    n_samples: int,
    n_euler_steps: int,
    rng: np.random.Generator,
    dim: int,
) -> np.ndarray:
    """Integrate the reverse-time SDE with Euler-Maruyama.

    Starts from z ~ N(0, I) and steps tau from 0 to T - t_min using drift
    z + 2 * score_fn(z, T - tau) and diffusion sqrt(2). Returns the final
    samples as an (n_samples, dim) array.
    """
    if n_euler_steps < 10:
        raise ValueError(f"n_euler_steps must be >= 10, got {n_euler_steps}")
    if n_samples < 0:
        raise ValueError(f"n_samples must be nonnegative, got {n_samples}")
    if n_samples == 0:
        return np.zeros((0, dim))
    z = rng.standard_normal((n_samples, dim))
    total = schedule.T - schedule.t_min
    h = total / n_euler_steps
    for i in range(n_euler_steps):
        tau = i * h
        t = schedule.T - tau
        drift = z + 2.0 * score_fn(z, t)
        if not np.all(np.isfinite(drift)):
            raise NumericError(f"non-finite score output at reverse time tau={tau:.6g}")
        z = z + drift * h + np.sqrt(2.0 * h) * rng.standard_normal(z.shape)
    return z
