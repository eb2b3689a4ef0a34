"""Experiment orchestration: seeded evaluations, reward normalization,
head-to-head duels, style statistics and the four packaged use-cases.

Every evaluation derives one rng sub-stream per episode from the master seed,
so aggregation is order-independent and any report is reproducible bit-exactly
from (spec, master seed). Wall-clock timings live in a separate `timing`
section excluded from that guarantee.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .artifacts import (REPORT_FORMAT_VERSION, SPEC_FORMAT_VERSION,
                        atomic_write_text, write_document, read_document)
from .errors import DegenerateNormalizer, EncodingMismatch
from .fusion import FusionEnsemble, fused_distribution, sample_action
from .gridworld import (ARENA_WORLD, COLLECT_WORLD, ArenaWorld, CollectWorld,
                        generate_level, mirror_state, observe_arena,
                        scripted_policy)
from .policy import make_descriptor, policy_handle
from .ppo import PpoConfig, fine_tune, train

MASK64 = 0xFFFFFFFFFFFFFFFF

USE_CASES = ("enhance", "style", "adapt", "miniworld")
FUSION_METHODS = ("MP", "PP", "ET", "EW")

# Default master seed per packaged use-case (calibrated reference runs).
DEFAULT_USE_CASE_SEEDS = {"miniworld": 3, "adapt": 0, "style": 0,
                          "enhance": 0}

# rng stream tags; distinct constants keep per-purpose streams independent.
_STREAMS = {"level": 11, "actor": 13, "opponent": 17, "train": 19}


def _episode_rng(master_seed, stream, episode) -> np.random.Generator:
    entropy = [int(master_seed) & MASK64, _STREAMS[stream], int(episode)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _episode_level(env_kind, grid_size, master_seed, episode, feature_flags):
    seed = int(_episode_rng(master_seed, "level", episode).integers(2 ** 63))
    return generate_level(env_kind, grid_size or
                          (8 if env_kind == COLLECT_WORLD else 10),
                          seed, feature_flags)


def as_actor(policy_or_ensemble):
    """Normalize a PolicyParams / FusionEnsemble / callable to a callable."""
    if isinstance(policy_or_ensemble, FusionEnsemble):
        ens = policy_or_ensemble
        return lambda obs: fused_distribution(ens, obs)
    if callable(policy_or_ensemble):
        return policy_or_ensemble
    return policy_handle(policy_or_ensemble)


def policy_opponent(handle, rng, feature_flags=frozenset()):
    """Arena opponent controller driven by a policy handle on the mirrored
    state; the handle's own knowledge mask applies."""
    def controller(env, state):
        obs = observe_arena(mirror_state(state), feature_flags)
        return sample_action(handle(obs), rng)
    return controller


def _make_opponent(opponent, rng, feature_flags):
    if opponent is None:
        return None
    if opponent == "random":
        def controller(env, state):
            return int(rng.integers(env.n_actions))
        return controller
    return policy_opponent(opponent, rng, feature_flags)


def _run_episode(actor, env_kind, level, feature_flags, horizon, opponent,
                 actor_rng, opp_rng):
    if env_kind == COLLECT_WORLD:
        env = CollectWorld(mode="terminal", horizon=horizon)
    else:
        env = ArenaWorld(opponent=_make_opponent(opponent, opp_rng,
                                                 feature_flags),
                         mode="terminal", horizon=horizon)
    state, obs = env.reset(level)
    sums = {ch: 0.0 for ch in env.channels}
    done = False
    while not done:
        action = sample_action(actor(obs), actor_rng)
        state, obs, rewards, done = env.step(state, action)
        for ch, v in rewards.items():
            sums[ch] += v
    return sums, state


def evaluate_rewards(policy_or_ensemble, env_kind, channels, episodes,
                     master_seed, feature_flags=frozenset(), grid_size=None,
                     horizon=80, opponent=None):
    """Per-channel reward means over seeded episodes.

    Returns {"means": {...}, "sums": {...}, "episodes": n}; deterministic
    given the master seed.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    actor = as_actor(policy_or_ensemble)
    totals = {ch: 0.0 for ch in channels}
    for ep in range(episodes):
        level = _episode_level(env_kind, grid_size, master_seed, ep,
                               feature_flags)
        sums, _ = _run_episode(
            actor, env_kind, level, frozenset(feature_flags), horizon,
            opponent, _episode_rng(master_seed, "actor", ep),
            _episode_rng(master_seed, "opponent", ep))
        for ch in channels:
            totals[ch] += sums[ch]
    means = {ch: totals[ch] / episodes for ch in channels}
    return {"means": means, "sums": totals, "episodes": episodes}


def normalize_rewards(raw_means: dict, normalizers: dict) -> dict:
    """Divide each channel by its specialist-policy mean (1.0 = specialist)."""
    out = {}
    for ch, value in raw_means.items():
        norm = normalizers[ch]
        if norm <= 0:
            raise DegenerateNormalizer(f"normalizer for {ch} is {norm}")
        out[ch] = value / norm
    return out


def wilson_interval(successes, n, z=1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def head_to_head(ensemble_a, policy_b, episodes, master_seed,
                 feature_flags=frozenset(), grid_size=None, horizon=100):
    """Win rate of A against B on mirrored-start arena levels.

    The slot each side occupies alternates per episode: the opponent slot
    reacts within the same step, so fixing slots would bias the count. A
    step-cap draw counts as a loss for both sides and is reported separately.
    """
    actor_a = as_actor(ensemble_a)
    handle_b = as_actor(policy_b)
    flags = frozenset(feature_flags)
    wins = losses = draws = 0
    for ep in range(episodes):
        level = _episode_level(ARENA_WORLD, grid_size, master_seed, ep, flags)
        a_rng = _episode_rng(master_seed, "actor", ep)
        b_rng = _episode_rng(master_seed, "opponent", ep)
        a_in_agent_slot = ep % 2 == 0
        agent, opp = (actor_a, handle_b) if a_in_agent_slot \
            else (handle_b, actor_a)
        agent_rng, opp_rng = (a_rng, b_rng) if a_in_agent_slot \
            else (b_rng, a_rng)
        env = ArenaWorld(opponent=policy_opponent(opp, opp_rng, flags),
                         mode="terminal", horizon=horizon)
        state, obs = env.reset(level)
        done = False
        while not done:
            state, obs, _, done = env.step(state,
                                           sample_action(agent(obs), agent_rng))
        if state.winner is None:
            draws += 1
        elif (state.winner == "agent") == a_in_agent_slot:
            wins += 1
        else:
            losses += 1
    rate = wins / episodes
    ci_low, ci_high = wilson_interval(wins, episodes)
    return {"win_rate": rate, "loss_rate": losses / episodes,
            "draw_rate": draws / episodes, "wins": wins, "losses": losses,
            "draws": draws, "episodes": episodes,
            "ci_low": ci_low, "ci_high": ci_high}


STYLE_KEYS = ("melee", "ranged", "loot", "orb", "death_contacts")


def style_stats(policy_or_ensemble, opponent, episodes, master_seed,
                feature_flags=frozenset(), grid_size=None, horizon=100):
    """Per-episode means of the style counters plus the win rate."""
    actor = as_actor(policy_or_ensemble)
    flags = frozenset(feature_flags)
    agg = {k: 0 for k in STYLE_KEYS}
    wins = 0
    for ep in range(episodes):
        level = _episode_level(ARENA_WORLD, grid_size, master_seed, ep, flags)
        _, state = _run_episode(
            actor, ARENA_WORLD, level, flags, horizon, opponent,
            _episode_rng(master_seed, "actor", ep),
            _episode_rng(master_seed, "opponent", ep))
        for k in STYLE_KEYS:
            agg[k] += state.stats[k]
        wins += state.winner == "agent"
    out = {f"{k}_per_episode": agg[k] / episodes for k in STYLE_KEYS}
    attacks = agg["melee"] + agg["ranged"]
    out["melee_share"] = agg["melee"] / max(attacks, 1)
    out["ranged_share"] = agg["ranged"] / max(attacks, 1)
    out["win_rate"] = wins / episodes
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one use-case run."""
    use_case: str
    episodes: int = 1000
    master_seed: int = 0
    methods: tuple = FUSION_METHODS
    epsilon: float = 0.0
    baselines: tuple = ("from-scratch", "fine-tune")
    feature_flags: tuple = ()

    def __post_init__(self):
        if self.use_case not in USE_CASES:
            raise ValueError(f"unknown use case {self.use_case!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        unknown = set(self.methods) - set(FUSION_METHODS)
        if unknown:
            raise ValueError(f"unknown fusion methods {sorted(unknown)}")

    def to_json(self) -> str:
        return json.dumps({
            "format_version": SPEC_FORMAT_VERSION,
            "use_case": self.use_case, "episodes": self.episodes,
            "master_seed": self.master_seed, "methods": list(self.methods),
            "epsilon": self.epsilon, "baselines": list(self.baselines),
            "feature_flags": list(self.feature_flags),
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentSpec":
        d = json.loads(text)
        if d.get("format_version") != SPEC_FORMAT_VERSION:
            from .errors import VersionMismatch
            raise VersionMismatch(f"spec format {d.get('format_version')!r}")
        return ExperimentSpec(
            use_case=d["use_case"], episodes=d["episodes"],
            master_seed=d["master_seed"], methods=tuple(d["methods"]),
            epsilon=d["epsilon"], baselines=tuple(d["baselines"]),
            feature_flags=tuple(d["feature_flags"]))


# ---------------------------------------------------------------------------
# Training recipes. Each returns (TrainResult, ledger entry); seeds are fixed
# offsets from the experiment master seed so runs are reproducible end to end.

ARENA_MAIN_CONFIG = PpoConfig(iterations=100, rollout=2048, lr=0.003,
                              value_lr=0.01, minibatch=256)
ARENA_SUB_CONFIG = PpoConfig(iterations=45, rollout=2048, lr=0.005,
                             value_lr=0.01, minibatch=256, ent_coef=0.02)
ARENA_HAZARD_CONFIG = PpoConfig(iterations=30, rollout=2048, lr=0.005,
                                value_lr=0.01, minibatch=256, ent_coef=0.1)
ARENA_SCRATCH_CONFIG = PpoConfig(iterations=250, rollout=2048, lr=0.003,
                                 value_lr=0.01, minibatch=256)
ARENA_TUNE_CONFIG = PpoConfig(iterations=45, rollout=2048, lr=0.003,
                              value_lr=0.01, minibatch=256)
COLLECT_CONFIG = PpoConfig(iterations=120, rollout=1024, lr=0.02,
                           value_lr=0.05, ent_coef=0.01)
COLLECT_TUNE_CONFIG = PpoConfig(iterations=60, rollout=1024, lr=0.02,
                                value_lr=0.05, ent_coef=0.01)


def _ledgered(ledger, name, result):
    ledger.append({"name": name, "iterations": result.iterations,
                   "wall_seconds": result.wall_seconds})
    return result


def _train_arena(channels, config, seed_base, offset, opponent_handle=None,
                 opponent_flags=frozenset(), level_flags=frozenset(),
                 known_flags=frozenset(), init=None, value_init=None):
    from .gridworld import LevelPool, feature_dim

    opp_rng = _episode_rng(seed_base, "train", offset)
    if opponent_handle is None:
        opponent = _make_opponent("random", opp_rng, level_flags)
    else:
        opponent = policy_opponent(opponent_handle, opp_rng, level_flags)
    env = ArenaWorld(opponent=opponent, mode="terminal", horizon=100)
    pool = LevelPool(ARENA_WORLD, 10, level_flags,
                     master_seed=(seed_base * 1000 + offset) & MASK64)
    desc = make_descriptor("mlp", env.n_actions,
                           input_dim=feature_dim(ARENA_WORLD, known_flags),
                           hidden=64, env_kind=ARENA_WORLD,
                           known_flags=sorted(known_flags))
    return train(env, pool, desc, channels, config,
                 (seed_base * 7919 + offset) & MASK64, init=init,
                 value_init=value_init, known_flags=frozenset(known_flags))


def _train_collect(channels, config, seed_base, offset, init=None,
                   value_init=None):
    from .gridworld import LevelPool

    env = CollectWorld(mode="terminal", horizon=80)
    pool = LevelPool(COLLECT_WORLD, 8,
                     master_seed=(seed_base * 1000 + offset) & MASK64)
    desc = make_descriptor("tabular", env.n_actions, n_states=100,
                           env_kind=COLLECT_WORLD)
    return train(env, pool, desc, channels, config,
                 (seed_base * 7919 + offset) & MASK64, init=init,
                 value_init=value_init)


# ---------------------------------------------------------------------------
# Use-case runners.

def _config_row(config_id, method, epsilon, spec, channels=None,
                normalized=None, h2h=None, style=None):
    row = {"config_id": config_id, "method": method, "epsilon": epsilon,
           "episodes": spec.episodes, "seed": spec.master_seed,
           "channels": channels or {}, "normalized": normalized or {},
           "style": style or {}}
    if h2h is not None:
        row.update({"win_rate": h2h["win_rate"], "ci_low": h2h["ci_low"],
                    "ci_high": h2h["ci_high"], "draw_rate": h2h["draw_rate"],
                    "loss_rate": h2h["loss_rate"]})
    return row


def _run_miniworld(spec: ExperimentSpec, ledger):
    seed = spec.master_seed
    channels = ("R0_red", "R1_green")
    pi0 = _ledgered(ledger, "main-red",
                    _train_collect(["R0_red"], COLLECT_CONFIG, seed, 1))
    pi1 = _ledgered(ledger, "sub-green",
                    _train_collect(["R1_green"], COLLECT_CONFIG, seed, 2))
    h0, h1 = policy_handle(pi0.params), policy_handle(pi1.params)

    def ev(actor):
        return evaluate_rewards(actor, COLLECT_WORLD, channels, spec.episodes,
                                seed, horizon=80)["means"]

    ref0, ref1 = ev(h0), ev(h1)
    normalizers = {"R0_red": ref0["R0_red"], "R1_green": ref1["R1_green"]}

    configs = []
    for method in spec.methods:
        ens = FusionEnsemble(main=h0, subs=[h1], method=method,
                             epsilon=spec.epsilon)
        means = ev(ens)
        configs.append(_config_row(
            f"fused-{method}", method, spec.epsilon, spec, means,
            normalize_rewards(means, normalizers)))
    if "from-scratch" in spec.baselines:
        scratch = _ledgered(ledger, "from-scratch",
                            _train_collect(list(channels), COLLECT_CONFIG,
                                           seed, 3))
        means = ev(policy_handle(scratch.params))
        configs.append(_config_row("from-scratch", "none", 0.0, spec, means,
                                   normalize_rewards(means, normalizers)))
    if "fine-tune" in spec.baselines:
        tuned = _ledgered(ledger, "fine-tune",
                          _train_collect(list(channels), COLLECT_TUNE_CONFIG,
                                         seed, 4, init=pi0.params.copy(),
                                         value_init=pi0.vparams.copy()))
        means = ev(policy_handle(tuned.params))
        configs.append(_config_row("fine-tune", "none", 0.0, spec, means,
                                   normalize_rewards(means, normalizers)))
    return {"configurations": configs, "normalizers": normalizers,
            "references": {"main-red": ref0, "sub-green": ref1}}


def _run_adapt(spec: ExperimentSpec, ledger):
    seed = spec.master_seed
    e1 = frozenset(["orb"])
    e2 = frozenset(["orb", "death-tile"])
    pi0 = _ledgered(ledger, "main",
                    _train_arena(["R0_env"], ARENA_MAIN_CONFIG, seed, 1))
    h0 = policy_handle(pi0.params)
    orb = _ledgered(ledger, "sub-orb",
                    _train_arena(["R0_env", "R_orb"], ARENA_SUB_CONFIG, seed,
                                 2, opponent_handle=h0, level_flags=e1,
                                 known_flags=e1))
    hazard = _ledgered(ledger, "sub-hazard",
                       _train_arena(["R_hazard"], ARENA_HAZARD_CONFIG, seed,
                                    3, opponent_handle=h0, level_flags=e2,
                                    known_flags=frozenset(["death-tile"])))
    h_orb = policy_handle(orb.params)
    h_haz = policy_handle(hazard.params)

    configs = []
    for method in spec.methods:
        pair = FusionEnsemble(main=h0, subs=[h_orb], method=method,
                              epsilon=spec.epsilon)
        configs.append(_config_row(
            f"e1-fused-{method}", method, spec.epsilon, spec,
            h2h=head_to_head(pair, h0, spec.episodes, seed,
                             feature_flags=e1)))
        triple = FusionEnsemble(main=h0, subs=[h_orb, h_haz], method=method,
                                epsilon=spec.epsilon)
        configs.append(_config_row(
            f"e2-triple-{method}", method, spec.epsilon, spec,
            h2h=head_to_head(triple, h0, spec.episodes, seed,
                             feature_flags=e2)))
    if "from-scratch" in spec.baselines:
        scratch = _ledgered(ledger, "from-scratch-e1",
                            _train_arena(["R0_env"], ARENA_SCRATCH_CONFIG,
                                         seed, 4, opponent_handle=h0,
                                         level_flags=e1, known_flags=e1))
        configs.append(_config_row(
            "e1-from-scratch", "none", 0.0, spec,
            h2h=head_to_head(policy_handle(scratch.params), h0, spec.episodes,
                             seed, feature_flags=e1)))
    if "fine-tune" in spec.baselines:
        # The pre-change network cannot grow inputs; fine-tuning continues on
        # E1 levels behind the old observation mask.
        tuned = _ledgered(ledger, "fine-tune-e1",
                          _train_arena(["R0_env"], ARENA_TUNE_CONFIG, seed, 5,
                                       opponent_handle=h0, level_flags=e1,
                                       init=pi0.params.copy(),
                                       value_init=pi0.vparams.copy()))
        configs.append(_config_row(
            "e1-fine-tune", "none", 0.0, spec,
            h2h=head_to_head(policy_handle(tuned.params), h0, spec.episodes,
                             seed, feature_flags=e1)))
    return {"configurations": configs, "normalizers": {}}


def _run_style(spec: ExperimentSpec, ledger):
    seed = spec.master_seed
    stage1 = _ledgered(ledger, "main-stage1",
                       _train_arena(["R0_env"], ARENA_MAIN_CONFIG, seed, 1))
    h_stage1 = policy_handle(stage1.params)
    # Second stage against the frozen first stage: fights last long enough
    # that loot healing matters, giving the loot-avoidance criterion teeth.
    pi0 = _ledgered(ledger, "main",
                    _train_arena(["R0_env"], ARENA_TUNE_CONFIG, seed, 2,
                                 opponent_handle=h_stage1,
                                 init=stage1.params.copy(),
                                 value_init=stage1.vparams.copy()))
    h0 = policy_handle(pi0.params)
    subs = {}
    for offset, (name, chans) in enumerate([
            ("warrior", ["R0_env", "R_melee"]),
            ("archer", ["R0_env", "R_ranged"]),
            ("loot-avoider", ["R0_env", "R_noloot"])], start=3):
        result = _ledgered(ledger, f"sub-{name}",
                           _train_arena(chans, ARENA_SUB_CONFIG, seed, offset,
                                        opponent_handle=h0))
        subs[name] = policy_handle(result.params)

    def stats(actor):
        return style_stats(actor, h_stage1, spec.episodes, seed)

    configs = [_config_row("main", "none", 0.0, spec, style=stats(h0))]
    for name, handle in subs.items():
        for method in spec.methods:
            ens = FusionEnsemble(main=h0, subs=[handle], method=method,
                                 epsilon=spec.epsilon)
            configs.append(_config_row(f"fused-{method}-{name}", method,
                                       spec.epsilon, spec, style=stats(ens)))
    return {"configurations": configs, "normalizers": {}}


def _run_enhance(spec: ExperimentSpec, ledger):
    seed = spec.master_seed
    pi0 = _ledgered(ledger, "main",
                    _train_arena(["R0_env"], ARENA_MAIN_CONFIG, seed, 1))
    h0 = policy_handle(pi0.params)
    w = _ledgered(ledger, "sub-warrior",
                  _train_arena(["R0_env", "R_melee"], ARENA_SUB_CONFIG, seed,
                               2, opponent_handle=h0))
    a = _ledgered(ledger, "sub-archer",
                  _train_arena(["R0_env", "R_ranged"], ARENA_SUB_CONFIG, seed,
                               3, opponent_handle=h0))
    hw, ha = policy_handle(w.params), policy_handle(a.params)
    combos = [("warrior", [hw]), ("archer", [ha]),
              ("warrior+archer", [hw, ha])]
    configs = []
    for method in spec.methods:
        for name, sub_handles in combos:
            ens = FusionEnsemble(main=h0, subs=sub_handles, method=method,
                                 epsilon=spec.epsilon)
            configs.append(_config_row(
                f"fused-{method}-{name}", method, spec.epsilon, spec,
                h2h=head_to_head(ens, h0, spec.episodes, seed)))
    return {"configurations": configs, "normalizers": {}}


_RUNNERS = {"miniworld": _run_miniworld, "adapt": _run_adapt,
            "style": _run_style, "enhance": _run_enhance}


def run_use_case(spec: ExperimentSpec, out_dir=None) -> dict:
    """Train, fuse, evaluate; returns the MetricsReport and optionally writes
    report.json / report.csv (atomic) under out_dir."""
    ledger = []
    t0 = time.perf_counter()
    body = _RUNNERS[spec.use_case](spec, ledger)
    report = {
        "spec": json.loads(spec.to_json()),
        "use_case": spec.use_case,
        "action_selection": "sampling",
        "configurations": body["configurations"],
        "normalizers": body["normalizers"],
        "references": body.get("references", {}),
        "timing": {"training": ledger,
                   "total_wall_seconds": time.perf_counter() - t0},
    }
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def canonical_report(report: dict) -> dict:
    """The deterministic part of a report (timing stripped)."""
    return {k: v for k, v in report.items() if k != "timing"}


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config-id", "method", "epsilon", "channel", "mean",
                     "normalized", "win-rate", "ci-low", "ci-high",
                     "episodes", "seed"])
    for cfg in report["configurations"]:
        channels = cfg["channels"] or {"": ""}
        for ch in channels:
            writer.writerow([
                cfg["config_id"], cfg["method"], cfg["epsilon"], ch,
                cfg["channels"].get(ch, ""), cfg["normalized"].get(ch, ""),
                cfg.get("win_rate", ""), cfg.get("ci_low", ""),
                cfg.get("ci_high", ""), cfg["episodes"], cfg["seed"]])
    return buf.getvalue()


def write_report(report: dict, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    write_document(os.path.join(out_dir, "report.json"), report,
                   REPORT_FORMAT_VERSION)
    atomic_write_text(os.path.join(out_dir, "report.csv"), report_csv(report))


def load_report(path) -> dict:
    return read_document(path, REPORT_FORMAT_VERSION)
