"""Adversarial reward learning: discriminator identities, analytic gradient
verification, reward standardization, and demonstration-set handling."""

import numpy as np
import pytest

from policyfusion.airl import (AirlConfig, DemoSet, RewardModel, RunningStats,
                               ShapingModel, collect_demos,
                               discriminator_gradient_check,
                               discriminator_loss_and_grad, discriminator_prob,
                               learned_reward, load_reward_model, potential_f,
                               save_reward_model, standardize_rewards)
from policyfusion.errors import VersionMismatch, ZeroPolicyProbability
from policyfusion.gridworld import COLLECT_WORLD, build_seed_env


class TestDiscriminatorIdentities:
    def test_logit_identity(self):
        # log D - log(1 - D) must equal f - ln pi exactly
        rng = np.random.default_rng(0)
        f = rng.normal(size=1000)
        pi = rng.uniform(0.01, 1.0, size=1000)
        d = discriminator_prob(f, pi)
        np.testing.assert_allclose(np.log(d) - np.log1p(-d),
                                   learned_reward(f, pi), atol=1e-9)

    def test_half_probability_zero_reward(self):
        # D = 0.5 when exp(f) = pi, and the learned reward is zero there
        pi = 0.37
        f = np.log(pi)
        assert discriminator_prob(f, pi) == pytest.approx(0.5, abs=1e-15)
        assert learned_reward(f, pi) == pytest.approx(0.0, abs=1e-15)

    def test_two_thirds_oracle(self):
        # f = 0, pi = 0.5: D = 1 / (1 + 0.5) = 2/3, reward = ln 2
        assert discriminator_prob(0.0, 0.5) == pytest.approx(2 / 3, abs=1e-15)
        assert learned_reward(0.0, 0.5) == pytest.approx(np.log(2), abs=1e-15)

    def test_three_quarters_oracle(self):
        # exp(f) = 3 pi gives D = 3/4
        pi = 0.2
        f = np.log(3 * pi)
        assert discriminator_prob(f, pi) == pytest.approx(0.75, abs=1e-12)

    def test_extreme_f_stable(self):
        assert discriminator_prob(800.0, 0.5) == 1.0
        assert discriminator_prob(-800.0, 0.5) == 0.0
        assert np.isfinite(learned_reward(800.0, 1e-6))

    def test_zero_probability_rejected(self):
        with pytest.raises(ZeroPolicyProbability):
            discriminator_prob(0.0, 0.0)
        with pytest.raises(ZeroPolicyProbability):
            learned_reward(0.0, -0.1)


class TestPotential:
    def test_oracle(self):
        # r = 1, phi(s') = 2, phi(s) = 1, gamma = 0.99 -> f = 1 + 1.98 - 1
        reward = RewardModel(np.array([[1.0, 0.0]]))
        shaping = ShapingModel(np.array([0.0, 1.0]))
        f = potential_f(reward, shaping,
                        features=np.array([[1.0, 1.0]]),
                        actions=np.array([0]),
                        next_features=np.array([[0.0, 2.0]]),
                        gamma=0.99)
        assert f[0] == pytest.approx(1.0 + 0.99 * 2.0 - 1.0, abs=1e-15)

    def test_constant_shaping_cancels_at_gamma_one(self):
        reward = RewardModel(np.zeros((2, 3)))
        base = ShapingModel(np.array([1.0, -2.0, 0.5]))
        rng = np.random.default_rng(1)
        feats, nfeats = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        acts = rng.integers(0, 2, size=6)
        f1 = potential_f(reward, base, feats, acts, nfeats, 1.0)
        shifted = ShapingModel(base.omega.copy())
        f2 = potential_f(reward, shifted, feats, acts, nfeats, 1.0)
        np.testing.assert_allclose(f1, f2)


class TestDiscriminatorTraining:
    def _batches(self, seed, nb=20, d=4, n_a=3):
        rng = np.random.default_rng(seed)

        def one():
            return (rng.normal(size=(nb, d)),
                    rng.integers(0, n_a, size=nb).astype(np.intp),
                    rng.normal(size=(nb, d)),
                    rng.uniform(0.1, 0.9, size=nb))
        return one(), one()

    def test_uninformative_model_loss_is_ln2_at_half(self):
        # with D pinned at 0.5 everywhere the balanced BCE equals ln 2
        expert, policy = self._batches(0)
        # force D = 0.5: f = ln pi for every sample
        expert = (expert[0], expert[1], expert[2], expert[3])
        reward = RewardModel(np.zeros((3, 4)))
        shaping = ShapingModel(np.zeros(4))
        # replace pi with 1.0 so f=0 gives exactly D = 0.5
        expert = (expert[0], expert[1], expert[2], np.ones(20))
        policy = (policy[0], policy[1], policy[2], np.ones(20))
        loss, gt, gw = discriminator_loss_and_grad(reward, shaping, expert,
                                                   policy, 0.99)
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_check(self):
        assert discriminator_gradient_check(points=30, seed=0) < 1e-4

    def test_loss_decreases_under_gradient_steps(self):
        from policyfusion.ppo import Adam
        expert, policy = self._batches(3)
        reward = RewardModel(np.zeros((3, 4)))
        shaping = ShapingModel(np.zeros(4))
        adam = Adam(reward.theta.size + shaping.omega.size, 0.05)
        from policyfusion.airl import discriminator_update
        losses = [discriminator_update(reward, shaping, expert, policy,
                                       0.99, adam) for _ in range(50)]
        assert losses[-1] < losses[0]


class TestStandardization:
    def test_oracle(self):
        out = standardize_rewards(np.array([1.0, 2.0, 3.0]), sigma_target=1.0)
        np.testing.assert_allclose(out, [-1.22474487, 0.0, 1.22474487],
                                   atol=1e-8)

    def test_mean_and_std_targets(self):
        rng = np.random.default_rng(2)
        values = rng.normal(3.0, 7.0, size=5000)
        out = standardize_rewards(values, sigma_target=0.2)
        assert abs(out.mean()) < 1e-12
        assert out.std() == pytest.approx(0.2, abs=1e-12)

    def test_idempotent_up_to_scale(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=100)
        once = standardize_rewards(values, 0.2)
        twice = standardize_rewards(once, 0.2)
        np.testing.assert_allclose(once, twice, atol=1e-12)

    def test_constant_input_guard(self):
        out = standardize_rewards(np.full(10, 4.2), sigma_target=0.2)
        # the 1e-8 std floor keeps zero-variance batches from blowing up
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_running_stats_track_batches(self):
        running = RunningStats()
        rng = np.random.default_rng(4)
        for _ in range(20):
            standardize_rewards(rng.normal(size=500), 0.2, running)
        assert abs(running.mean) < 1e-9
        assert abs(running.std - 0.2) < 1e-6

    def test_running_stats_match_numpy(self):
        rng = np.random.default_rng(5)
        values = rng.normal(2.0, 3.0, size=1000)
        running = RunningStats()
        running.update(values)
        assert running.mean == pytest.approx(values.mean(), abs=1e-10)
        assert running.std == pytest.approx(values.std(), abs=1e-10)


class TestDemos:
    def test_fixed_horizon_transition_count(self):
        levels = build_seed_env(COLLECT_WORLD, 4, master_seed=9)
        demos = collect_demos(COLLECT_WORLD, "green-collector", levels,
                              horizon=25, rng=np.random.default_rng(0))
        assert demos.actions.size == 4 * 25
        assert demos.n_trajectories == 4
        np.testing.assert_array_equal(np.unique(demos.episode_ids),
                                      np.arange(4))
        assert all(np.sum(demos.episode_ids == e) == 25 for e in range(4))

    def test_roundtrip(self, tmp_path):
        levels = build_seed_env(COLLECT_WORLD, 2, master_seed=1)
        demos = collect_demos(COLLECT_WORLD, "red-collector", levels,
                              horizon=10, rng=np.random.default_rng(1))
        path = tmp_path / "demos.jsonl"
        demos.save(path)
        loaded = DemoSet.load(path)
        assert loaded.expert_kind == demos.expert_kind
        assert loaded.level_seeds == demos.level_seeds
        assert loaded.horizon == demos.horizon
        np.testing.assert_array_equal(loaded.actions, demos.actions)
        np.testing.assert_allclose(loaded.features, demos.features)
        np.testing.assert_allclose(loaded.next_features, demos.next_features)
        np.testing.assert_array_equal(loaded.episode_ids, demos.episode_ids)

    def test_version_check(self, tmp_path):
        levels = build_seed_env(COLLECT_WORLD, 1, master_seed=1)
        demos = collect_demos(COLLECT_WORLD, "red-collector", levels,
                              horizon=5, rng=np.random.default_rng(1))
        path = tmp_path / "demos.jsonl"
        demos.save(path)
        text = path.read_text().splitlines()
        text[0] = text[0].replace('"format_version": 1', '"format_version": 9')
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(VersionMismatch):
            DemoSet.load(path)

    def test_collect_deterministic(self):
        levels = build_seed_env(COLLECT_WORLD, 3, master_seed=2)
        a = collect_demos(COLLECT_WORLD, "green-collector", levels, 15,
                          np.random.default_rng(7))
        b = collect_demos(COLLECT_WORLD, "green-collector", levels, 15,
                          np.random.default_rng(7))
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_allclose(a.features, b.features)


class TestRewardModelIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        reward = RewardModel(rng.normal(size=(5, 24)))
        shaping = ShapingModel(rng.normal(size=24))
        path = tmp_path / "reward.json"
        save_reward_model((reward, shaping), path, gamma=0.99,
                          sigma_target=0.2)
        r2, s2 = load_reward_model(path)
        np.testing.assert_array_equal(r2.theta, reward.theta)
        np.testing.assert_array_equal(s2.omega, shaping.omega)

    def test_version_check(self, tmp_path):
        path = tmp_path / "reward.json"
        save_reward_model((RewardModel(np.zeros((2, 3))),
                           ShapingModel(np.zeros(3))), path, 0.99, 0.2)
        text = path.read_text().replace('"format_version": 1',
                                        '"format_version": 2')
        path.write_text(text)
        with pytest.raises(VersionMismatch):
            load_reward_model(path)


class TestConfigValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            AirlConfig(n=0)
        with pytest.raises(ValueError):
            AirlConfig(k_rl=0)
        with pytest.raises(ValueError):
            AirlConfig(sigma_target=0.0)
