"""Adversarial reward learning with the demonstration-efficiency stabilizers:
reward standardization, K forward-RL iterations per discriminator step, and
fixed-horizon episodes on a frozen set of sampled levels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, VersionMismatch, ZeroPolicyProbability
from .gridworld import (COLLECT_WORLD, FIXED, ArenaWorld, CollectWorld,
                        LevelPool, build_seed_env, scripted_action)
from .gridworld.observe import feature_dim
from .policy import (TABULAR, make_descriptor, net_forward, new_policy,
                     new_value, softmax)
from .ppo import Adam, PpoConfig, collect_rollouts, compute_gae, ppo_update

DEMOSET_FORMAT_VERSION = 1
REWARD_FORMAT_VERSION = 1

# True reward channel each scripted expert maximizes, for evaluation only.
EXPERT_TRUE_CHANNEL = {
    "green-collector": "R1_green",
    "red-collector": "R0_red",
}


@dataclass
class RewardModel:
    """r(s, a): linear over state features, one weight row per action."""
    theta: np.ndarray  # (n_actions, d)

    def evaluate(self, features, actions) -> np.ndarray:
        features = np.atleast_2d(features)
        actions = np.atleast_1d(actions)
        return np.einsum("bd,bd->b", self.theta[actions], features)


@dataclass
class ShapingModel:
    """phi(s): linear over state features."""
    omega: np.ndarray  # (d,)

    def evaluate(self, features) -> np.ndarray:
        return np.atleast_2d(features) @ self.omega


@dataclass
class AirlConfig:
    n: int = 10                 # number of frozen levels / demonstrations
    k_rl: int = 5               # forward-RL iterations per discriminator step
    sigma_target: float = 0.2   # standard deviation of the standardized reward
    horizon: int = 50           # fixed episode length
    disc_lr: float = 0.05
    gamma: float = 0.99
    outer_iterations: int = 60
    rollout: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.k_rl < 1:
            raise ValueError("k_rl must be >= 1")
        if self.sigma_target <= 0:
            raise ValueError("sigma_target must be > 0")


@dataclass
class DemoSet:
    expert_kind: str
    level_seeds: list
    horizon: int
    # Parallel arrays over all expert transitions.
    features: np.ndarray
    actions: np.ndarray
    next_features: np.ndarray
    indices: np.ndarray
    next_indices: np.ndarray
    episode_ids: np.ndarray

    @property
    def n_trajectories(self) -> int:
        return len(self.level_seeds)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({
                "format_version": DEMOSET_FORMAT_VERSION,
                "expert_kind": self.expert_kind,
                "level_seeds": self.level_seeds,
                "horizon": self.horizon,
            }) + "\n")
            for i in range(self.actions.size):
                fh.write(json.dumps({
                    "s": self.features[i].tolist(),
                    "a": int(self.actions[i]),
                    "s2": self.next_features[i].tolist(),
                    "si": int(self.indices[i]),
                    "s2i": int(self.next_indices[i]),
                    "ep": int(self.episode_ids[i]),
                }) + "\n")

    @staticmethod
    def load(path) -> "DemoSet":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format_version") != DEMOSET_FORMAT_VERSION:
                raise VersionMismatch(f"demo format {header.get('format_version')!r}")
            rows = [json.loads(line) for line in fh if line.strip()]
        return DemoSet(
            expert_kind=header["expert_kind"],
            level_seeds=header["level_seeds"],
            horizon=header["horizon"],
            features=np.array([r["s"] for r in rows]),
            actions=np.array([r["a"] for r in rows], dtype=np.intp),
            next_features=np.array([r["s2"] for r in rows]),
            indices=np.array([r["si"] for r in rows], dtype=np.intp),
            next_indices=np.array([r["s2i"] for r in rows], dtype=np.intp),
            episode_ids=np.array([r["ep"] for r in rows], dtype=np.intp),
        )


def potential_f(reward: RewardModel, shaping: ShapingModel, features, actions,
                next_features, gamma) -> np.ndarray:
    """f = r(s,a) + gamma*phi(s') - phi(s)."""
    return (reward.evaluate(features, actions)
            + gamma * shaping.evaluate(next_features)
            - shaping.evaluate(features))


def discriminator_prob(f_value, pi_prob):
    """exp(f) / (exp(f) + pi), computed in log space."""
    pi_prob = np.asarray(pi_prob, dtype=np.float64)
    if np.any(pi_prob <= 0.0):
        raise ZeroPolicyProbability("policy probability must be positive")
    z = np.asarray(f_value, dtype=np.float64) - np.log(pi_prob)
    t = np.exp(-np.abs(z))  # always in (0, 1]; no overflow either side
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def learned_reward(f_value, pi_prob):
    """log D - log(1 - D), which algebraically equals f - ln pi."""
    pi_prob = np.asarray(pi_prob, dtype=np.float64)
    if np.any(pi_prob <= 0.0):
        raise ZeroPolicyProbability("policy probability must be positive")
    return np.asarray(f_value, dtype=np.float64) - np.log(pi_prob)


def discriminator_loss_and_grad(reward, shaping, expert, policy, gamma):
    """Binary cross-entropy: expert labeled 1, policy samples labeled 0.

    `expert` and `policy` are (features, actions, next_features, pi_probs)
    tuples. Returns (loss, grad_theta, grad_omega).
    """
    g_theta = np.zeros_like(reward.theta)
    g_omega = np.zeros_like(shaping.omega)
    loss = 0.0
    for (feats, acts, nfeats, probs), is_expert in ((expert, True), (policy, False)):
        f = potential_f(reward, shaping, feats, acts, nfeats, gamma)
        d = discriminator_prob(f, probs)
        d = np.clip(d, 1e-12, 1 - 1e-12)
        n = acts.size
        if is_expert:
            loss += -np.mean(np.log(d)) / 2
            dz = (d - 1.0) / (2 * n)
        else:
            loss += -np.mean(np.log(1.0 - d)) / 2
            dz = d / (2 * n)
        np.add.at(g_theta, acts, dz[:, None] * feats)
        g_omega += (gamma * nfeats - feats).T @ dz
    return loss, g_theta, g_omega


def discriminator_gradient_check(points=100, seed=0, h=1e-5,
                                 gamma=0.99) -> float:
    """Max relative error of the analytic discriminator gradient against
    central finite differences over random models and batches."""
    from .ppo import finite_difference_grad, max_relative_error

    rng = np.random.default_rng(seed)
    d, n_a, nb = 5, 4, 12
    worst = 0.0
    for _ in range(points):
        theta = rng.normal(0, 0.5, size=(n_a, d))
        omega = rng.normal(0, 0.5, size=d)

        def batch():
            return (rng.normal(size=(nb, d)),
                    rng.integers(0, n_a, size=nb).astype(np.intp),
                    rng.normal(size=(nb, d)),
                    rng.uniform(0.05, 0.95, size=nb))
        expert, policy = batch(), batch()
        flat = np.concatenate([theta.ravel(), omega])

        def loss_at():
            r = RewardModel(flat[:n_a * d].reshape(n_a, d))
            s = ShapingModel(flat[n_a * d:])
            return discriminator_loss_and_grad(r, s, expert, policy, gamma)[0]

        _, gt, gw = discriminator_loss_and_grad(
            RewardModel(theta), ShapingModel(omega), expert, policy, gamma)
        analytic = np.concatenate([gt.ravel(), gw])
        numeric = finite_difference_grad(loss_at, flat, h)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def discriminator_update(reward, shaping, expert, policy, gamma, adam):
    """One adaptive gradient step on the discriminator cross-entropy."""
    loss, gt, gw = discriminator_loss_and_grad(reward, shaping, expert, policy,
                                               gamma)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"discriminator loss {loss}")
    flat = np.concatenate([gt.ravel(), gw])
    step = adam.step(flat)
    k = reward.theta.size
    reward.theta = reward.theta + step[:k].reshape(reward.theta.shape)
    shaping.omega = shaping.omega + step[k:]
    return loss


class RunningStats:
    """Diagnostic running mean/std over standardized batches."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values):
        for v in np.asarray(values, dtype=np.float64).ravel():
            self.count += 1
            delta = v - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (v - self.mean)

    @property
    def std(self):
        return np.sqrt(self.m2 / self.count) if self.count else 0.0


def standardize_rewards(values, sigma_target, running: RunningStats | None = None):
    """(r - mean) / max(std, 1e-8) * sigma_target, batch statistics."""
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean()
    std = values.std()
    out = (values - mu) / max(std, 1e-8) * sigma_target
    if running is not None:
        running.update(out)
    return out


def _make_env(env_kind, horizon):
    if env_kind == COLLECT_WORLD:
        return CollectWorld(mode=FIXED, horizon=horizon)
    return ArenaWorld(mode=FIXED, horizon=horizon)


def collect_demos(env_kind, expert_kind, levels, horizon, rng) -> DemoSet:
    """One fixed-horizon expert trajectory per level."""
    env = _make_env(env_kind, horizon)
    feats, acts, nfeats, idx, nidx, eps = [], [], [], [], [], []
    for ep, level in enumerate(levels):
        state, obs = env.reset(level)
        for _ in range(horizon):
            a = scripted_action(expert_kind, state, rng)
            feats.append(obs.features)
            idx.append(obs.state_index)
            state, nobs, _, _ = env.step(state, a)
            nfeats.append(nobs.features)
            nidx.append(nobs.state_index)
            acts.append(a)
            eps.append(ep)
            obs = nobs
    return DemoSet(expert_kind, [lv.seed for lv in levels], horizon,
                   np.array(feats), np.array(acts, dtype=np.intp),
                   np.array(nfeats), np.array(idx, dtype=np.intp),
                   np.array(nidx, dtype=np.intp), np.array(eps, dtype=np.intp))


def _policy_probs(params, indices, features, actions):
    if params.descriptor["kind"] == TABULAR:
        logits, _ = net_forward(params.descriptor, params.theta, indices,
                                params.n_actions)
    else:
        logits, _ = net_forward(params.descriptor, params.theta, features,
                                params.n_actions)
    return softmax(logits)[np.arange(actions.size), actions]


@dataclass
class DeairlResult:
    reward: RewardModel
    shaping: ShapingModel
    params: object          # sub-policy trained on the learned reward (SeedEnv)
    vparams: object
    demos: DemoSet
    levels: list
    history: list = field(default_factory=list)
    running: RunningStats = None


def _reward_fn(reward, shaping, gamma, sigma_target, running):
    def fn(batch):
        f = potential_f(reward, shaping, batch.features, batch.actions,
                        batch.next_features, gamma)
        r_hat = f - batch.logp  # learned_reward identity: f - ln pi
        return standardize_rewards(r_hat, sigma_target, running)
    return fn


def train_deairl(env_kind, expert_kind, config: AirlConfig,
                 ppo_config: PpoConfig, master_seed, grid_size=None,
                 feature_flags=frozenset()) -> DeairlResult:
    """Alternate one discriminator step with k_rl forward-RL iterations on the
    standardized learned reward, over the frozen level set."""
    ss = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    s_levels, s_demo, s_init, s_act, s_perm = [
        np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(5)]
    levels = build_seed_env(env_kind, config.n,
                            int(s_levels.integers(2 ** 63)), grid_size,
                            feature_flags)
    demos = collect_demos(env_kind, expert_kind, levels, config.horizon, s_demo)

    env = _make_env(env_kind, config.horizon)
    pool = LevelPool(env_kind, grid_size, feature_flags, levels=levels)
    d = feature_dim(env_kind, feature_flags)
    n_actions = env.n_actions
    desc = make_descriptor(TABULAR, n_actions,
                           n_states=100 if env_kind == COLLECT_WORLD else 36,
                           env_kind=env_kind, known_flags=feature_flags)
    params = new_policy(desc, s_init)
    vparams = new_value(desc, s_init)
    adam_p = Adam(params.theta.size, ppo_config.lr)
    adam_v = Adam(vparams.theta.size, ppo_config.value_lr)

    reward = RewardModel(np.zeros((n_actions, d)))
    shaping = ShapingModel(np.zeros(d))
    adam_d = Adam(reward.theta.size + shaping.omega.size, config.disc_lr)
    running = RunningStats()
    history = []

    for outer in range(config.outer_iterations):
        batch = collect_rollouts(env, pool, params, vparams, config.rollout,
                                 s_act, feature_flags)
        expert_probs = _policy_probs(params, demos.indices, demos.features,
                                     demos.actions)
        policy_probs = np.exp(batch.logp)
        loss = discriminator_update(
            reward, shaping,
            (demos.features, demos.actions, demos.next_features,
             np.maximum(expert_probs, 1e-12)),
            (batch.features, batch.actions, batch.next_features, policy_probs),
            config.gamma, adam_d)
        reward_fn = _reward_fn(reward, shaping, config.gamma,
                               config.sigma_target, running)
        for _ in range(config.k_rl):
            rl_batch = collect_rollouts(env, pool, params, vparams,
                                        config.rollout, s_act, feature_flags,
                                        reward_fn=reward_fn)
            rl_batch.advantages, rl_batch.returns = compute_gae(
                rl_batch.rewards, rl_batch.values, rl_batch.dones,
                rl_batch.last_value, ppo_config.gamma, ppo_config.lam)
            ppo_update(params, vparams, rl_batch, ppo_config, adam_p, adam_v,
                       s_perm)
        history.append({"outer": outer, "disc_loss": float(loss)})
    return DeairlResult(reward, shaping, params, vparams, demos, levels,
                        history, running)


def save_reward_model(result_or_pair, path, gamma, sigma_target, config_echo=None):
    reward, shaping = (result_or_pair.reward, result_or_pair.shaping) \
        if isinstance(result_or_pair, DeairlResult) else result_or_pair
    doc = {
        "format_version": REWARD_FORMAT_VERSION,
        "feature_schema": "egocentric-v1",
        "theta": reward.theta.tolist(),
        "omega": shaping.omega.tolist(),
        "gamma": gamma,
        "sigma_target": sigma_target,
        "config": config_echo or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_reward_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != REWARD_FORMAT_VERSION:
        raise VersionMismatch(f"reward format {doc.get('format_version')!r}")
    return RewardModel(np.array(doc["theta"])), ShapingModel(np.array(doc["omega"]))


def evaluate_reward_generalization(reward, shaping, env_kind, expert_kind,
                                   config: AirlConfig, ppo_config: PpoConfig,
                                   master_seed, heldout=50, grid_size=None,
                                   train_iterations=None):
    """Train a fresh policy on procedural levels against the frozen learned
    reward; report its true-channel mean against the scripted expert's on the
    same held-out levels."""
    ss = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    s_pool, s_init, s_act, s_perm, s_eval, s_exp = [
        np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(6)]
    env = _make_env(env_kind, config.horizon)
    pool = LevelPool(env_kind, grid_size, levels=None,
                     master_seed=int(s_pool.integers(2 ** 63)))
    desc = make_descriptor(TABULAR, env.n_actions,
                           n_states=100 if env_kind == COLLECT_WORLD else 36,
                           env_kind=env_kind)
    params = new_policy(desc, s_init)
    vparams = new_value(desc, s_init)
    adam_p = Adam(params.theta.size, ppo_config.lr)
    adam_v = Adam(vparams.theta.size, ppo_config.value_lr)
    reward_fn = _reward_fn(reward, shaping, config.gamma, config.sigma_target,
                           None)
    iters = train_iterations or ppo_config.iterations
    for _ in range(iters):
        batch = collect_rollouts(env, pool, params, vparams, config.rollout,
                                 s_act, reward_fn=reward_fn)
        batch.advantages, batch.returns = compute_gae(
            batch.rewards, batch.values, batch.dones, batch.last_value,
            ppo_config.gamma, ppo_config.lam)
        ppo_update(params, vparams, batch, ppo_config, adam_p, adam_v, s_perm)

    channel = EXPERT_TRUE_CHANNEL[expert_kind]
    heldout_levels = build_seed_env(env_kind, heldout,
                                    int(s_eval.integers(2 ** 63)), grid_size)
    from .fusion import sample_action
    from .policy import policy_forward

    policy_total = 0.0
    expert_total = 0.0
    for level in heldout_levels:
        state, obs = env.reset(level)
        for _ in range(config.horizon):
            a = sample_action(policy_forward(params, obs), s_eval)
            state, obs, r, _ = env.step(state, a)
            policy_total += r[channel]
        state, obs = env.reset(level)
        for _ in range(config.horizon):
            a = scripted_action(expert_kind, state, s_exp)
            state, obs, r, _ = env.step(state, a)
            expert_total += r[channel]
    policy_mean = policy_total / heldout
    expert_mean = expert_total / heldout
    ratio = policy_mean / expert_mean if expert_mean > 0 else float("inf")
    return {"channel": channel, "policy_mean": policy_mean,
            "expert_mean": expert_mean, "ratio": ratio,
            "params": params, "heldout_levels": heldout}
