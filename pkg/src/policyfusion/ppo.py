"""Clipped-surrogate policy-gradient training with GAE, from scratch.

All gradients are analytic (see policy.net_backward); check_gradients compares
them against central finite differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DescriptorMismatch, NonFiniteLoss
from .fusion import sample_action
from .policy import (MLP, TABULAR, PolicyParams, ValueParams, net_backward,
                     net_forward, new_policy, new_value, policy_forward,
                     softmax, value_forward)


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 0.01
    value_lr: float = 0.02
    epochs: int = 4
    minibatch: int = 128
    ent_coef: float = 0.01
    rollout: int = 1024
    iterations: int = 100

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must be in (0, 1)")
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass
class TrajectoryBatch:
    indices: np.ndarray        # (B,) state indices
    features: np.ndarray       # (B, d) feature vectors
    next_indices: np.ndarray
    next_features: np.ndarray
    actions: np.ndarray        # (B,) int
    rewards: np.ndarray        # (B,) scalar training reward
    dones: np.ndarray          # (B,) bool
    logp: np.ndarray           # (B,) log prob under the snapshot policy
    values: np.ndarray = None
    last_value: float = 0.0
    advantages: np.ndarray = None
    returns: np.ndarray = None
    channel_sums: dict = field(default_factory=dict)
    episodes: int = 0

    def __len__(self):
        return self.actions.size


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """delta_t = r_t + gamma*V(s_{t+1})*(1-done) - V(s_t);
    A_t = delta_t + gamma*lam*(1-done)*A_{t+1}; returns = A + V."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.size
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_v = last_value if t == n - 1 else values[t + 1]
        nonterm = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        running = delta + gamma * lam * nonterm * running
        adv[t] = running
    return adv, adv + values


class Adam:
    """Per-parameter first/second-moment adaptive steps with bias correction."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _inputs(params, batch, sl=slice(None)):
    if params.descriptor["kind"] == TABULAR:
        return batch.indices[sl]
    return batch.features[sl]


def policy_loss_and_grad(params: PolicyParams, batch: TrajectoryBatch,
                         config: PpoConfig, advantages, sl=slice(None)):
    """Minimized objective: -clipped surrogate - ent_coef * entropy."""
    desc, n_a = params.descriptor, params.n_actions
    logits, cache = net_forward(desc, params.theta, _inputs(params, batch, sl), n_a)
    pi = softmax(logits)
    logpi = np.log(np.maximum(pi, 1e-300))
    b = logits.shape[0]
    rows = np.arange(b)
    actions = batch.actions[sl]
    logp_new = logpi[rows, actions]
    ratio = np.exp(logp_new - batch.logp[sl])
    adv = advantages[sl]
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - config.clip, 1 + config.clip) * adv
    entropy = -(pi * logpi).sum(axis=1)
    loss = -np.minimum(surr1, surr2).mean() - config.ent_coef * entropy.mean()

    # Gradient of the surrogate flows where the unclipped branch is selected
    # or the ratio sits inside the clip interval.
    inside = (ratio >= 1 - config.clip) & (ratio <= 1 + config.clip)
    flow = (surr1 <= surr2) | inside
    coeff = np.where(flow, ratio * adv, 0.0) / b
    onehot = np.zeros_like(pi)
    onehot[rows, actions] = 1.0
    dlogits = -coeff[:, None] * (onehot - pi)
    # d(-ent_coef * mean H)/dlogits
    dlogits += (config.ent_coef / b) * pi * (logpi + entropy[:, None])
    grad = net_backward(desc, params.theta, cache, dlogits, n_a)
    return loss, grad


def value_loss_and_grad(vparams: ValueParams, batch: TrajectoryBatch,
                        returns, sl=slice(None)):
    desc = vparams.descriptor
    out, cache = net_forward(desc, vparams.theta, _inputs(vparams, batch, sl), 1)
    v = out[:, 0]
    err = v - returns[sl]
    loss = 0.5 * np.mean(err * err)
    dout = (err / err.size)[:, None]
    return loss, net_backward(desc, vparams.theta, cache, dout, 1)


def ppo_update(params, vparams, batch, config, adam_p, adam_v, rng):
    """Epochs of minibatch Adam steps on the clipped surrogate and value loss.

    Advantages are standardized over the batch before the update.
    """
    adv = batch.advantages
    std = adv.std()
    adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    n = len(batch)
    diags = {"policy_loss": 0.0, "value_loss": 0.0, "updates": 0}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            mb = order[start:start + config.minibatch]
            ploss, pgrad = policy_loss_and_grad(params, batch, config, adv, mb)
            vloss, vgrad = value_loss_and_grad(vparams, batch, batch.returns, mb)
            if not (np.isfinite(ploss) and np.isfinite(vloss)):
                raise NonFiniteLoss(f"policy={ploss} value={vloss}")
            params.theta = params.theta + adam_p.step(pgrad)
            vparams.theta = vparams.theta + adam_v.step(vgrad)
            diags["policy_loss"] += ploss
            diags["value_loss"] += vloss
            diags["updates"] += 1
    if diags["updates"]:
        diags["policy_loss"] /= diags["updates"]
        diags["value_loss"] /= diags["updates"]
    return diags


def collect_rollouts(env, pool, params, vparams, count, rng,
                     known_flags=frozenset(), channels=None, reward_fn=None):
    """Sample `count` transitions; episodes reset from the level pool.

    The scalar training reward is the sum over `channels`; reward_fn, when
    given, replaces it after collection (learned-reward training).
    """
    channels = list(channels or [])
    idx, feats, nidx, nfeats = [], [], [], []
    acts, rews, dones, logps = [], [], [], []
    chan_sums = {c: 0.0 for c in channels}
    episodes = 0

    state, _ = env.reset(pool.next_level())
    obs = env.observe(state, known_flags)
    for _ in range(count):
        dist = policy_forward(params, obs)
        a = sample_action(dist, rng)
        logps.append(float(np.log(dist.probs[a])))
        idx.append(obs.state_index)
        feats.append(obs.features)
        state, _, reward, done = env.step(state, a)
        nobs = env.observe(state, known_flags)
        nidx.append(nobs.state_index)
        nfeats.append(nobs.features)
        acts.append(a)
        rews.append(sum(reward[c] for c in channels))
        for c in channels:
            chan_sums[c] += reward[c]
        dones.append(done)
        if done:
            episodes += 1
            state, _ = env.reset(pool.next_level())
            obs = env.observe(state, known_flags)
        else:
            obs = nobs

    batch = TrajectoryBatch(
        indices=np.array(idx, dtype=np.intp),
        features=np.array(feats, dtype=np.float64),
        next_indices=np.array(nidx, dtype=np.intp),
        next_features=np.array(nfeats, dtype=np.float64),
        actions=np.array(acts, dtype=np.intp),
        rewards=np.array(rews, dtype=np.float64),
        dones=np.array(dones, dtype=bool),
        logp=np.array(logps, dtype=np.float64),
        channel_sums=chan_sums, episodes=episodes,
    )
    if reward_fn is not None:
        batch.rewards = np.asarray(reward_fn(batch), dtype=np.float64)
    batch.values = value_forward(vparams, _inputs(vparams, batch))
    if batch.dones[-1]:
        batch.last_value = 0.0
    else:
        if vparams.descriptor["kind"] == TABULAR:
            inp = np.array([obs.state_index], dtype=np.intp)
        else:
            inp = obs.features[None, :]
        batch.last_value = float(value_forward(vparams, inp)[0])
    return batch


@dataclass
class TrainResult:
    params: PolicyParams
    vparams: ValueParams
    history: list
    iterations: int
    wall_seconds: float


def train(env, pool, descriptor, channels, config: PpoConfig, master_seed,
          init=None, value_init=None, reward_fn=None, known_flags=frozenset(),
          log_every=0, on_iteration=None) -> TrainResult:
    """Rollout/update loop; a pure function of (env setup, config, seed)."""
    ss = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    s_init, s_act, s_perm = [np.random.Generator(np.random.PCG64(c))
                             for c in ss.spawn(3)]
    params = init.copy() if init is not None else new_policy(descriptor, s_init)
    vparams = (value_init.copy() if value_init is not None
               else new_value(descriptor, s_init))
    if init is not None and init.descriptor["kind"] != descriptor["kind"]:
        raise DescriptorMismatch("checkpoint kind differs from requested")
    adam_p = Adam(params.theta.size, config.lr)
    adam_v = Adam(vparams.theta.size, config.value_lr)
    history = []
    t0 = time.perf_counter()
    for it in range(config.iterations):
        batch = collect_rollouts(env, pool, params, vparams, config.rollout,
                                 s_act, known_flags, channels, reward_fn)
        batch.advantages, batch.returns = compute_gae(
            batch.rewards, batch.values, batch.dones, batch.last_value,
            config.gamma, config.lam)
        diags = ppo_update(params, vparams, batch, config, adam_p, adam_v, s_perm)
        diags["iteration"] = it
        diags["mean_reward"] = float(batch.rewards.sum() / max(batch.episodes, 1))
        diags["channel_means"] = {c: v / max(batch.episodes, 1)
                                  for c, v in batch.channel_sums.items()}
        history.append(diags)
        if on_iteration is not None:
            on_iteration(it, params, diags)
    return TrainResult(params, vparams, history, config.iterations,
                       time.perf_counter() - t0)


def fine_tune(checkpoint: PolicyParams, env, pool, channels, config,
              master_seed, value_init=None, known_flags=frozenset()) -> TrainResult:
    """Same loop as train(), initialized from an existing checkpoint."""
    return train(env, pool, checkpoint.descriptor, channels, config,
                 master_seed, init=checkpoint, value_init=value_init,
                 known_flags=known_flags)


def finite_difference_grad(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        hi = f()
        theta[i] = orig - h
        lo = f()
        theta[i] = orig
        g[i] = (hi - lo) / (2 * h)
    return g


def max_relative_error(analytic, numeric):
    denom = np.maximum(1e-8, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(params: PolicyParams, vparams: ValueParams,
                    batch: TrajectoryBatch, config: PpoConfig, h=1e-5) -> float:
    """Max relative error of analytic vs central-finite-difference gradients
    for the policy and value losses on this batch."""
    adv = batch.advantages
    _, pgrad = policy_loss_and_grad(params, batch, config, adv)
    pnum = finite_difference_grad(
        lambda: policy_loss_and_grad(params, batch, config, adv)[0],
        params.theta, h)
    _, vgrad = value_loss_and_grad(vparams, batch, batch.returns)
    vnum = finite_difference_grad(
        lambda: value_loss_and_grad(vparams, batch, batch.returns)[0],
        vparams.theta, h)
    return max(max_relative_error(pgrad, pnum), max_relative_error(vgrad, vnum))


def random_check_point(rng, config: PpoConfig, n_actions=4, batch_size=16,
                       kink_margin=1e-3):
    """One random (params, vparams, batch) triple for gradient verification.

    Points whose ratio lands within `kink_margin` of a clip boundary are
    resampled: the surrogate is not differentiable there and central
    differences straddle the kink.
    """
    from .policy import make_descriptor

    if rng.random() < 0.5:
        desc = make_descriptor(TABULAR, n_actions, n_states=12)
        inputs = {"indices": rng.integers(0, 12, size=batch_size).astype(np.intp),
                  "features": np.zeros((batch_size, 1))}
    else:
        desc = make_descriptor(MLP, n_actions, input_dim=6, hidden=8)
        inputs = {"indices": np.zeros(batch_size, dtype=np.intp),
                  "features": rng.normal(size=(batch_size, 6))}
    while True:
        params = PolicyParams(desc, rng.normal(0, 0.5,
                                               size=new_policy(desc, rng).theta.size))
        vparams = ValueParams(desc, rng.normal(0, 0.5,
                                               size=new_value(desc, rng).theta.size))
        actions = rng.integers(0, n_actions, size=batch_size).astype(np.intp)
        batch = TrajectoryBatch(
            indices=inputs["indices"], features=inputs["features"],
            next_indices=inputs["indices"], next_features=inputs["features"],
            actions=actions,
            rewards=rng.normal(size=batch_size),
            dones=np.zeros(batch_size, dtype=bool),
            logp=np.log(rng.uniform(0.05, 0.95, size=batch_size)),
            advantages=rng.normal(size=batch_size),
            returns=rng.normal(size=batch_size),
        )
        logits, _ = net_forward(desc, params.theta, _inputs(params, batch),
                                n_actions)
        logp_new = np.log(softmax(logits))[np.arange(batch_size), actions]
        ratio = np.exp(logp_new - batch.logp)
        near_kink = np.minimum(np.abs(ratio - (1 - config.clip)),
                               np.abs(ratio - (1 + config.clip)))
        if (near_kink > kink_margin).all():
            return params, vparams, batch


def gradient_check_suite(points=100, seed=0, config: PpoConfig | None = None,
                         h=1e-5) -> float:
    """Max relative error over `points` random parameter points."""
    config = config or PpoConfig()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        params, vparams, batch = random_check_point(rng, config)
        worst = max(worst, check_gradients(params, vparams, batch, config, h))
    return worst
