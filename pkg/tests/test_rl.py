import warnings

import numpy as np
import pytest

from smiling import nn
from smiling.cost import OracleCost
from smiling.envs import (
    GaussianPolicy,
    env_spec,
    expert_policy,
    make_env,
    make_policy,
    mean_true_return,
    normalized_return,
)
from smiling.rl import RlConfig, policy_value, reinforce_gradient, rl_solve


def proportional_controller_policy(gain=2.0, goal=(1.0, 1.0), log_std=np.log(0.05)):
    """Single affine layer computing gain * (goal - s), the demonstrator's rule."""
    params = nn.ApproximatorParams(
        layer_weights=[-gain * np.eye(2)],
        layer_biases=[gain * np.asarray(goal, dtype=float)],
        time_embedding=np.zeros((1, 0)),
        activation="identity",
    )
    return GaussianPolicy(params, np.full(2, log_std), (-1.0, 1.0))


def hermite_controls(z: np.ndarray) -> np.ndarray:
    """Zero-mean Hermite features of standard-normal draws, for control variates."""
    return np.stack([z, z**2 - 1.0, z**3 - 3.0 * z, z**4 - 6.0 * z**2 + 3.0], axis=1)


def control_variate_mean(samples: np.ndarray, controls: np.ndarray):
    """Regression control variates: returns (reduced mean, its std error)."""
    beta, *_ = np.linalg.lstsq(controls, samples - samples.mean(), rcond=None)
    resid = samples - controls @ beta
    return float(resid.mean()), float(resid.std(ddof=1) / np.sqrt(len(samples)))


class TestReinforceGradient:
    def test_matches_expected_cost_derivative(self):
        # One-step, 1-d problem: a ~ N(mu(s), sigma^2), cost a^2. The expected
        # cost is mu^2 + sigma^2, so its gradient through the mean is
        # 2 mu dmu/dtheta and its log-std gradient is 2 sigma^2. Hermite
        # control variates remove the likelihood-ratio estimator's sampling
        # noise (the integrand is polynomial in the action noise), leaving the
        # 1e-3 relative comparison sharp at 1e6 samples.
        rng = np.random.default_rng(0)
        policy = make_policy(1, 1, (-10, 10), seed=3, hidden=8,
                             init_log_std=np.log(0.3))
        for w in policy.params.layer_weights:
            w += 0.3 * rng.standard_normal(w.shape)
        s = np.array([0.8])
        n = 1_000_000

        mu = float(policy.mean(s)[0])
        sigma = float(np.exp(policy.log_std[0]))
        states = np.repeat(s[None, :], n, axis=0)
        z = rng.standard_normal(n)
        actions = (mu + sigma * z)[:, None]
        costs = actions[:, 0] ** 2
        coeffs = costs - costs.mean()
        grads, d_log_std = reinforce_gradient(policy, states, actions, coeffs, float(n))

        controls = hermite_controls(z)
        mean_channel = coeffs * z / sigma          # per-sample d/dmu terms
        est_mu, se_mu = control_variate_mean(mean_channel, controls)
        assert se_mu < 1e-3 * abs(2 * mu)
        assert est_mu == pytest.approx(2.0 * mu, rel=1e-3)

        ls_channel = coeffs * (z**2 - 1.0)          # per-sample d/dlog_std terms
        est_ls, se_ls = control_variate_mean(ls_channel, controls)
        assert se_ls < 1e-3 * abs(2 * sigma**2)
        assert est_ls == pytest.approx(2.0 * sigma**2, rel=1e-3)

        # The aggregated estimator is exactly the raw per-sample means pushed
        # through backprop: its output-bias coordinate equals mean_channel's
        # mean and the log-std channel matches d_log_std.
        assert grads.layer_biases[-1][0] == pytest.approx(mean_channel.mean(), rel=1e-12)
        assert d_log_std[0] == pytest.approx(ls_channel.mean(), rel=1e-12)

    def test_matches_finite_differences_of_expected_cost(self):
        # Finite differences of the closed-form expected cost, against the
        # control-variate-reduced likelihood-ratio gradient pushed through the
        # network jacobian.
        rng = np.random.default_rng(1)
        policy = make_policy(1, 1, (-10, 10), seed=5, hidden=4,
                             init_log_std=np.log(0.4))
        for w in policy.params.layer_weights:
            w += 0.4 * rng.standard_normal(w.shape)
        s = np.array([0.5])
        n = 1_000_000
        sigma = float(np.exp(policy.log_std[0]))
        mu = float(policy.mean(s)[0])

        z = rng.standard_normal(n)
        costs = (mu + sigma * z) ** 2
        coeffs = costs - costs.mean()
        est_dmu, se = control_variate_mean(coeffs * z / sigma, hermite_controls(z))
        assert se < 1e-3 * abs(2 * mu)

        # dJ/dtheta = (dJ/dmu) * dmu/dtheta for the single evaluation state
        _, cache = nn._forward_cached(policy.params, s[None, :],
                                      np.zeros(1, dtype=np.intp))
        grad_vec = nn.flatten_grads(
            nn.backward_from_output(policy.params, cache, np.array([[est_dmu]])))

        def expected_cost(params):
            m = float(nn.forward(params, s, 0)[0])
            return m**2 + sigma**2

        h = 1e-4
        flat = nn.flatten_params(policy.params)
        checked = 0
        for i in rng.choice(len(flat), size=min(12, len(flat)), replace=False):
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            fd = (expected_cost(nn.set_flat_params(policy.params, up))
                  - expected_cost(nn.set_flat_params(policy.params, down))) / (2 * h)
            if abs(fd) > 1e-2:
                assert grad_vec[i] == pytest.approx(fd, rel=1e-3)
                checked += 1
        assert checked >= 3


class TestRlSolve:
    def test_constant_cost_moves_nothing_without_entropy(self):
        # Constant cost batches normalize to zeros and the zero-initialized
        # baseline stays at zero, so every advantage is exactly zero and the
        # per-update movement of the mean network is exactly none.
        spec = env_spec("point_goal")
        env = make_env(spec)
        pol = make_policy(2, 2, (-1, 1), seed=0)
        before = nn.flatten_params(pol.params).copy()
        log_std_before = pol.log_std.copy()
        cfg = RlConfig(episodes_per_update=4, updates_per_iteration=5,
                       policy_lr=1e-2, entropy_bonus=0.0)
        trace = []
        out = rl_solve(env, OracleCost(lambda s: 3.0), pol, cfg,
                       np.random.default_rng(1), trace=trace)
        assert all(t["mean_update_norm"] < 1e-6 for t in trace)
        assert np.array_equal(nn.flatten_params(out.params), before)
        assert np.array_equal(out.log_std, log_std_before)

    def test_constant_cost_entropy_only_touches_log_std(self):
        spec = env_spec("point_goal")
        env = make_env(spec)
        pol = make_policy(2, 2, (-1, 1), seed=0)
        log_std_before = pol.log_std.copy()
        cfg = RlConfig(episodes_per_update=4, updates_per_iteration=5,
                       policy_lr=1e-2, entropy_bonus=1e-2)
        trace = []
        rl_solve(env, OracleCost(lambda s: 3.0), pol, cfg,
                 np.random.default_rng(1), trace=trace)
        assert all(t["mean_update_norm"] < 1e-6 for t in trace)
        assert not np.array_equal(trace[-1]["log_std"], log_std_before)

    def test_oracle_cost_reaches_expert_level(self):
        spec = env_spec("point_goal")
        env = make_env(spec)
        eval_env = make_env(spec)
        v_expert = mean_true_return(eval_env, expert_policy(spec), 300,
                                    np.random.default_rng(2))
        pol = make_policy(2, 2, (-1, 1), seed=0)
        cfg = RlConfig(episodes_per_update=8, updates_per_iteration=300,
                       policy_lr=5e-3, value_lr=1e-2, entropy_bonus=1e-3)
        out = rl_solve(env, OracleCost(env.true_cost), pol, cfg,
                       np.random.default_rng(3))
        v_learned = mean_true_return(eval_env, out, 300, np.random.default_rng(4))
        assert abs(v_learned - v_expert) <= 0.10 * abs(v_expert)

    def test_warm_start_from_expert_never_unlearns(self):
        spec = env_spec("point_goal")
        env = make_env(spec)
        eval_env = make_env(spec)
        v_expert = mean_true_return(eval_env, expert_policy(spec), 200,
                                    np.random.default_rng(5))
        v_random = mean_true_return(eval_env, make_policy(2, 2, (-1, 1), seed=0),
                                    200, np.random.default_rng(6))
        pol = proportional_controller_policy()
        cfg = RlConfig(episodes_per_update=8, updates_per_iteration=10,
                       policy_lr=5e-3, warm_start=True)
        rng = np.random.default_rng(7)
        for chunk in range(5):
            pol = rl_solve(env, OracleCost(env.true_cost), pol, cfg, rng)
            v = mean_true_return(eval_env, pol, 100, np.random.default_rng(8 + chunk))
            assert normalized_return(v, v_expert, v_random) >= 0.9

    def test_never_reads_hidden_costs(self):
        # Corrupting the env's hidden cost must not change what the solver
        # learns, because it only consumes the supplied cost function.
        spec = env_spec("point_goal")

        class CorruptedEnv(type(make_env(spec))):
            def true_cost(self, s):
                return float("nan")

        cost = OracleCost(lambda s: float(np.linalg.norm(s)))
        cfg = RlConfig(episodes_per_update=4, updates_per_iteration=5, policy_lr=1e-2)
        out_clean = rl_solve(make_env(spec), cost, make_policy(2, 2, (-1, 1), seed=0),
                             cfg, np.random.default_rng(9))
        corrupted = CorruptedEnv(spec)
        out_corrupt = rl_solve(corrupted, cost, make_policy(2, 2, (-1, 1), seed=0),
                               cfg, np.random.default_rng(9))
        assert np.array_equal(nn.flatten_params(out_clean.params),
                              nn.flatten_params(out_corrupt.params))


class TestPolicyValue:
    def test_deterministic_setup_zero_variance(self):
        spec = env_spec("point_goal", dynamics_noise=0.0)
        env = make_env(spec)

        class FixedStart(type(env)):
            def reset(self, rng):
                super().reset(rng)
                self._state = np.array([-1.0, -1.0])
                return self._state.copy()

        env = FixedStart(spec)
        pol = proportional_controller_policy(log_std=-np.inf)
        mean, var = policy_value(env, pol, OracleCost(env.true_cost), 5,
                                 np.random.default_rng(0))
        assert var == 0.0

    def test_single_episode_flagged(self):
        spec = env_spec("point_goal")
        env = make_env(spec)
        pol = make_policy(2, 2, (-1, 1), seed=0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            mean, var = policy_value(env, pol, OracleCost(env.true_cost), 1,
                                     np.random.default_rng(1))
        assert var == 0.0
        assert any("single episode" in str(w.message) for w in caught)

    def test_self_consistency_against_large_reference(self):
        spec = env_spec("point_goal")
        env = make_env(spec)
        expert = expert_policy(spec)
        oracle = OracleCost(env.true_cost)
        ref_mean, ref_var = policy_value(env, expert, oracle, 4000,
                                         np.random.default_rng(2))
        mean, var = policy_value(env, expert, oracle, 1000, np.random.default_rng(3))
        se = np.sqrt(var / 1000 + ref_var / 4000)
        assert abs(mean - ref_mean) < 2 * se + 1e-9
