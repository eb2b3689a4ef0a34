"""Policy networks and the PPO loop: analytic oracles for softmax, GAE and
the clipped surrogate, gradient verification against finite differences, and
training determinism."""

import numpy as np
import pytest

from policyfusion.errors import EncodingMismatch
from policyfusion.gridworld import (COLLECT_WORLD, CollectWorld, LevelPool,
                                    build_seed_env)
from policyfusion.gridworld.observe import observe_arena
from policyfusion.gridworld import ARENA_WORLD, ArenaWorld, generate_level
from policyfusion.gridworld.levels import DEATH_TILE, ORB
from policyfusion.policy import (MLP, TABULAR, PolicyParams, ValueParams,
                                 make_descriptor, n_params, net_backward,
                                 net_forward, new_policy, new_value,
                                 policy_forward, policy_handle, softmax,
                                 value_forward)
from policyfusion.ppo import (Adam, PpoConfig, TrajectoryBatch,
                              check_gradients, collect_rollouts, compute_gae,
                              finite_difference_grad, gradient_check_suite,
                              max_relative_error, policy_loss_and_grad,
                              random_check_point, train, fine_tune,
                              value_loss_and_grad)

BOTH_FLAGS = frozenset({ORB, DEATH_TILE})


class TestSoftmax:
    def test_oracle(self):
        # softmax([ln 3, 0]) = [3, 1] / 4
        np.testing.assert_allclose(softmax(np.array([[np.log(3.0), 0.0]])),
                                   [[0.75, 0.25]], atol=1e-12)

    def test_shift_invariant(self):
        logits = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_allclose(softmax(logits), softmax(logits + 100.0),
                                   atol=1e-12)

    def test_large_logits_stable(self):
        out = softmax(np.array([[1000.0, 0.0]]))
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)


class TestGae:
    def test_two_step_oracle(self):
        # delta_1 = 1 - 0.5 = 0.5 (terminal); A_1 = 0.5
        # delta_0 = 1 + 0.9*0.5 - 0.5 = 0.95; A_0 = 0.95 + 0.9*0.95*0.5
        adv, ret = compute_gae(rewards=[1.0, 1.0], values=[0.5, 0.5],
                               dones=[False, True], last_value=0.0,
                               gamma=0.9, lam=0.95)
        np.testing.assert_allclose(adv, [1.3775, 0.5], atol=1e-12)
        np.testing.assert_allclose(ret, [1.8775, 1.0], atol=1e-12)

    def test_lambda_one_is_monte_carlo(self):
        rng = np.random.default_rng(0)
        rewards = rng.normal(size=12)
        values = rng.normal(size=12)
        dones = np.zeros(12, dtype=bool)
        dones[-1] = True
        gamma = 0.97
        adv, ret = compute_gae(rewards, values, dones, 0.0, gamma, 1.0)
        # lambda = 1 collapses to the discounted return minus the baseline
        mc = np.zeros(12)
        run = 0.0
        for t in range(11, -1, -1):
            run = rewards[t] + gamma * run
            mc[t] = run
        np.testing.assert_allclose(ret, mc, atol=1e-10)
        np.testing.assert_allclose(adv, mc - values, atol=1e-10)

    def test_terminal_blocks_bootstrap(self):
        adv1, _ = compute_gae([1.0], [0.0], [True], last_value=5.0,
                              gamma=0.99, lam=0.95)
        adv2, _ = compute_gae([1.0], [0.0], [True], last_value=-5.0,
                              gamma=0.99, lam=0.95)
        np.testing.assert_allclose(adv1, adv2)

    def test_episode_boundary_isolates_segments(self):
        # advantages before a done must not depend on rewards after it
        a1, _ = compute_gae([1.0, 2.0, 9.0], [0.0, 0.0, 0.0],
                            [False, True, False], 0.0, 0.9, 0.95)
        a2, _ = compute_gae([1.0, 2.0, -9.0], [0.0, 0.0, 0.0],
                            [False, True, False], 0.0, 0.9, 0.95)
        np.testing.assert_allclose(a1[:2], a2[:2])


class TestNetworks:
    def test_param_counts(self):
        tab = make_descriptor(TABULAR, 5, n_states=100)
        assert n_params(tab, 5) == 500
        mlp = make_descriptor(MLP, 10, input_dim=33, hidden=64)
        assert n_params(mlp, 10) == 33 * 64 + 64 + 64 * 10 + 10

    def test_tabular_forward_is_lookup(self):
        desc = make_descriptor(TABULAR, 3, n_states=4)
        theta = np.arange(12, dtype=np.float64)
        out, _ = net_forward(desc, theta, np.array([2, 0]), 3)
        np.testing.assert_array_equal(out, [[6, 7, 8], [0, 1, 2]])

    def test_mlp_backward_matches_fd(self):
        rng = np.random.default_rng(1)
        desc = make_descriptor(MLP, 3, input_dim=4, hidden=5)
        theta = rng.normal(0, 0.5, size=n_params(desc, 3))
        x = rng.normal(size=(6, 4))
        dout = rng.normal(size=(6, 3))
        out, cache = net_forward(desc, theta, x, 3)
        grad = net_backward(desc, theta, cache, dout, 3)

        def f():
            o, _ = net_forward(desc, theta, x, 3)
            return float((dout * o).sum())
        num = finite_difference_grad(f, theta)
        assert max_relative_error(grad, num) < 1e-5

    def test_feature_dim_mismatch_raises(self):
        desc = make_descriptor(MLP, 3, input_dim=4, hidden=5)
        theta = np.zeros(n_params(desc, 3))
        with pytest.raises(EncodingMismatch):
            net_forward(desc, theta, np.zeros((2, 7)), 3)

    def test_fresh_tabular_policy_is_uniform(self):
        desc = make_descriptor(TABULAR, 5, n_states=100)
        params = new_policy(desc, np.random.default_rng(0))

        class Obs:
            state_index = 17
            n_states = 100
        np.testing.assert_allclose(policy_forward(params, Obs()).probs, 0.2)

    def test_policy_handle_masks_wider_observations(self):
        desc = make_descriptor(MLP, 10, input_dim=33, hidden=8,
                               env_kind=ARENA_WORLD, known_flags=())
        params = new_policy(desc, np.random.default_rng(2))
        params.theta = np.random.default_rng(3).normal(0, 0.3,
                                                       params.theta.size)
        lv = generate_level(ARENA_WORLD, 10, 0, BOTH_FLAGS)
        state, _ = ArenaWorld().reset(lv)
        wide = observe_arena(state, BOTH_FLAGS)
        narrow = observe_arena(state, frozenset())
        handle = policy_handle(params)
        np.testing.assert_allclose(handle(wide).probs,
                                   policy_forward(params, narrow).probs,
                                   atol=1e-15)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        opt = Adam(3, lr=0.1)
        step = opt.step(np.array([4.0, -0.5, 0.0]))
        np.testing.assert_allclose(step, [-0.1, 0.1, 0.0], atol=1e-7)

    def test_zero_lr_freezes(self):
        opt = Adam(2, lr=0.0)
        for _ in range(5):
            np.testing.assert_array_equal(opt.step(np.ones(2)), 0.0)


def _synthetic_batch(rng, desc, n_actions, b=8, adv=None):
    if desc["kind"] == TABULAR:
        idx = rng.integers(0, desc["n_states"], size=b).astype(np.intp)
        feats = np.zeros((b, 1))
    else:
        idx = np.zeros(b, dtype=np.intp)
        feats = rng.normal(size=(b, desc["input_dim"]))
    return TrajectoryBatch(
        indices=idx, features=feats, next_indices=idx, next_features=feats,
        actions=rng.integers(0, n_actions, size=b).astype(np.intp),
        rewards=rng.normal(size=b), dones=np.zeros(b, dtype=bool),
        logp=np.log(rng.uniform(0.1, 0.9, size=b)),
        advantages=adv if adv is not None else rng.normal(size=b),
        returns=rng.normal(size=b))


class TestSurrogate:
    def test_zero_advantage_zero_entropy_gives_zero_grad(self):
        rng = np.random.default_rng(5)
        desc = make_descriptor(TABULAR, 4, n_states=10)
        params = PolicyParams(desc, rng.normal(0, 0.5, size=40))
        batch = _synthetic_batch(rng, desc, 4, adv=np.zeros(8))
        cfg = PpoConfig(ent_coef=0.0)
        loss, grad = policy_loss_and_grad(params, batch, cfg, batch.advantages)
        assert loss == 0.0
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_clip_plateau_blocks_gradient(self):
        # positive advantage with ratio far above 1+clip: the clipped branch
        # is active and no gradient flows
        desc = make_descriptor(TABULAR, 2, n_states=1)
        params = PolicyParams(desc, np.array([2.0, -2.0]))
        pi0 = softmax(np.array([[2.0, -2.0]]))[0, 0]
        batch = TrajectoryBatch(
            indices=np.zeros(1, dtype=np.intp), features=np.zeros((1, 1)),
            next_indices=np.zeros(1, dtype=np.intp),
            next_features=np.zeros((1, 1)),
            actions=np.zeros(1, dtype=np.intp), rewards=np.zeros(1),
            dones=np.zeros(1, dtype=bool),
            logp=np.array([np.log(pi0) - 1.0]),  # ratio = e > 1.2
            advantages=np.array([1.0]), returns=np.zeros(1))
        cfg = PpoConfig(clip=0.2, ent_coef=0.0)
        loss, grad = policy_loss_and_grad(params, batch, cfg, batch.advantages)
        assert loss == pytest.approx(-1.2)
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_unit_ratio_reduces_to_policy_gradient(self):
        # at ratio == 1 the surrogate gradient equals -adv * dlog pi/dtheta
        rng = np.random.default_rng(6)
        desc = make_descriptor(TABULAR, 3, n_states=1)
        theta = rng.normal(size=3)
        params = PolicyParams(desc, theta.copy())
        pi = softmax(theta[None, :])[0]
        batch = TrajectoryBatch(
            indices=np.zeros(1, dtype=np.intp), features=np.zeros((1, 1)),
            next_indices=np.zeros(1, dtype=np.intp),
            next_features=np.zeros((1, 1)),
            actions=np.array([1], dtype=np.intp), rewards=np.zeros(1),
            dones=np.zeros(1, dtype=bool), logp=np.array([np.log(pi[1])]),
            advantages=np.array([2.0]), returns=np.zeros(1))
        cfg = PpoConfig(ent_coef=0.0)
        _, grad = policy_loss_and_grad(params, batch, cfg, batch.advantages)
        onehot = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(grad, -2.0 * (onehot - pi), atol=1e-12)

    def test_value_loss_oracle(self):
        desc = make_descriptor(TABULAR, 2, n_states=2)
        vparams = ValueParams(desc, np.array([1.0, 3.0]))
        batch = TrajectoryBatch(
            indices=np.array([0, 1], dtype=np.intp),
            features=np.zeros((2, 1)),
            next_indices=np.array([0, 1], dtype=np.intp),
            next_features=np.zeros((2, 1)),
            actions=np.zeros(2, dtype=np.intp), rewards=np.zeros(2),
            dones=np.zeros(2, dtype=bool), logp=np.zeros(2),
            returns=np.array([0.0, 4.0]))
        loss, grad = value_loss_and_grad(vparams, batch, batch.returns)
        # errors are [1, -1]: loss = 0.5 * mean([1, 1]) = 0.5
        assert loss == pytest.approx(0.5)
        np.testing.assert_allclose(grad, [0.5, -0.5])


class TestGradientVerification:
    def test_suite_under_tolerance(self):
        assert gradient_check_suite(points=25, seed=0) < 1e-4

    def test_single_point_check(self):
        cfg = PpoConfig()
        rng = np.random.default_rng(9)
        params, vparams, batch = random_check_point(rng, cfg)
        assert check_gradients(params, vparams, batch, cfg) < 1e-4

    def test_check_points_avoid_clip_kinks(self):
        cfg = PpoConfig()
        rng = np.random.default_rng(10)
        for _ in range(20):
            params, vparams, batch = random_check_point(rng, cfg)
            logits, _ = net_forward(params.descriptor, params.theta,
                                    batch.indices if params.descriptor["kind"]
                                    == TABULAR else batch.features, 4)
            lp = np.log(softmax(logits))[np.arange(len(batch)), batch.actions]
            ratio = np.exp(lp - batch.logp)
            near = np.minimum(np.abs(ratio - 0.8), np.abs(ratio - 1.2))
            assert (near > 1e-3).all()


def _collect_setup(seed=0, horizon=40):
    env = CollectWorld(horizon=horizon)
    pool = LevelPool(COLLECT_WORLD,
                     levels=build_seed_env(COLLECT_WORLD, 5, master_seed=seed))
    desc = make_descriptor(TABULAR, env.n_actions, n_states=100,
                           env_kind=COLLECT_WORLD)
    return env, pool, desc


class TestRolloutsAndTraining:
    def test_logged_logp_matches_recomputation(self):
        env, pool, desc = _collect_setup()
        rng = np.random.default_rng(3)
        params = new_policy(desc, rng)
        params.theta = np.random.default_rng(4).normal(0, 0.3, 500)
        vparams = new_value(desc, rng)
        batch = collect_rollouts(env, pool, params, vparams, 200, rng,
                                 channels=["R0_red"])
        logits, _ = net_forward(desc, params.theta, batch.indices, 5)
        lp = np.log(softmax(logits))[np.arange(200), batch.actions]
        np.testing.assert_allclose(batch.logp, lp, atol=1e-12)

    def test_channel_sums_match_reward_totals(self):
        env, pool, desc = _collect_setup()
        rng = np.random.default_rng(3)
        params, vparams = new_policy(desc, rng), new_value(desc, rng)
        batch = collect_rollouts(env, pool, params, vparams, 300, rng,
                                 channels=["R0_red", "R1_green"])
        total = batch.channel_sums["R0_red"] + batch.channel_sums["R1_green"]
        assert batch.rewards.sum() == pytest.approx(total)
        assert batch.episodes == int(batch.dones.sum())

    def test_reward_fn_overrides_channel_reward(self):
        env, pool, desc = _collect_setup()
        rng = np.random.default_rng(3)
        params, vparams = new_policy(desc, rng), new_value(desc, rng)
        batch = collect_rollouts(env, pool, params, vparams, 50, rng,
                                 channels=["R0_red"],
                                 reward_fn=lambda b: np.full(len(b), 7.0))
        np.testing.assert_array_equal(batch.rewards, 7.0)

    def test_train_deterministic(self):
        cfg = PpoConfig(iterations=3, rollout=128, minibatch=64)
        thetas = []
        for _ in range(2):
            env, pool, desc = _collect_setup()
            res = train(env, pool, desc, ["R0_red"], cfg, master_seed=12)
            thetas.append(res.params.theta)
        np.testing.assert_array_equal(thetas[0], thetas[1])

    def test_seed_changes_training(self):
        cfg = PpoConfig(iterations=2, rollout=128, minibatch=64)
        env, pool, desc = _collect_setup()
        a = train(env, pool, desc, ["R0_red"], cfg, master_seed=1)
        env, pool, desc = _collect_setup()
        b = train(env, pool, desc, ["R0_red"], cfg, master_seed=2)
        assert not np.array_equal(a.params.theta, b.params.theta)

    def test_zero_lr_preserves_parameters(self):
        env, pool, desc = _collect_setup()
        init = new_policy(desc, np.random.default_rng(0))
        init.theta = np.random.default_rng(1).normal(0, 0.2, 500)
        cfg = PpoConfig(iterations=2, rollout=128, minibatch=64, lr=0.0,
                        value_lr=0.0)
        res = train(env, pool, desc, ["R0_red"], cfg, master_seed=0,
                    init=init)
        np.testing.assert_array_equal(res.params.theta, init.theta)

    def test_fine_tune_does_not_mutate_checkpoint(self):
        env, pool, desc = _collect_setup()
        init = new_policy(desc, np.random.default_rng(0))
        snapshot = init.theta.copy()
        cfg = PpoConfig(iterations=2, rollout=128, minibatch=64)
        fine_tune(init, env, pool, ["R0_red"], cfg, master_seed=0)
        np.testing.assert_array_equal(init.theta, snapshot)

    def test_training_improves_reward(self):
        env, pool, desc = _collect_setup(seed=7)
        cfg = PpoConfig(iterations=25, rollout=512, minibatch=128, lr=0.02,
                        value_lr=0.05)
        res = train(env, pool, desc, ["R0_red", "R1_green"], cfg,
                    master_seed=7)
        first = np.mean([h["mean_reward"] for h in res.history[:5]])
        last = np.mean([h["mean_reward"] for h in res.history[-5:]])
        assert last > first + 0.3

    def test_value_forward_shape(self):
        desc = make_descriptor(TABULAR, 5, n_states=100)
        v = new_value(desc, np.random.default_rng(0))
        out = value_forward(v, np.array([0, 5, 99], dtype=np.intp))
        assert out.shape == (3,)


class TestConfigValidation:
    def test_clip_bounds(self):
        with pytest.raises(ValueError):
            PpoConfig(clip=0.0)
        with pytest.raises(ValueError):
            PpoConfig(clip=1.0)

    def test_gamma_bounds(self):
        with pytest.raises(ValueError):
            PpoConfig(gamma=1.5)
        with pytest.raises(ValueError):
            PpoConfig(lam=-0.1)
