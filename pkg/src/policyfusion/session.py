"""Interactive playground sessions: a single-writer state machine that steps
one episode under a mutable FusionEnsemble and emits full snapshots.

The stepping code path (fused_distribution then sample_action then env.step)
is the same one library rollouts use, so a protocol-driven episode with seed
sigma reproduces a library rollout with seed sigma exactly.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (EpisodeFinished, MalformedMessage, NoActiveSubPolicy,
                     SessionBusy, UnknownSession)
from .fusion import (FusionEnsemble, fused_distribution, min_entropy_index,
                     normalized_entropy, sample_action)
from .gridworld import (ARENA_WORLD, COLLECT_WORLD, ArenaWorld, CollectWorld,
                        generate_level)

MASK64 = 0xFFFFFFFFFFFFFFFF
DEFAULT_HORIZON = {COLLECT_WORLD: 80, ARENA_WORLD: 100}

_session_ids = itertools.count(1)


def episode_rngs(seed):
    """Actor and opponent generators for one playground episode."""
    actor = np.random.default_rng(int(seed) & MASK64)
    opponent = np.random.default_rng((int(seed) + 1) & MASK64)
    return actor, opponent


def _build_env(env_kind, opp_rng):
    if env_kind == COLLECT_WORLD:
        return CollectWorld(mode="terminal", horizon=DEFAULT_HORIZON[env_kind])

    def random_controller(env, state):
        return int(opp_rng.integers(env.n_actions))
    return ArenaWorld(opponent=random_controller, mode="terminal",
                      horizon=DEFAULT_HORIZON[env_kind])


@dataclass
class SessionState:
    session_id: str
    env_kind: str
    feature_flags: frozenset
    seed: int
    ensemble: FusionEnsemble
    env: object = None
    level: object = None
    state: object = None
    obs: object = None
    rng: object = None
    opp_rng: object = None
    last_action: int | None = None
    last_rewards: dict | None = None
    step_count: int = 0
    done: bool = False
    auto_running: bool = False
    step_log: list = field(default_factory=list)  # append-only
    lock: threading.Lock = field(default_factory=threading.Lock)

    def start_episode(self, seed):
        self.seed = int(seed)
        self.rng, self.opp_rng = episode_rngs(self.seed)
        self.env = _build_env(self.env_kind, self.opp_rng)
        self.level = generate_level(
            self.env_kind, 8 if self.env_kind == COLLECT_WORLD else 10,
            self.seed, self.feature_flags)
        self.state, self.obs = self.env.reset(self.level)
        self.last_action = None
        self.last_rewards = None
        self.step_count = 0
        self.done = False


def create_session(env_kind, feature_flags, seed, main_handle, sub_handles,
                   method="EW", epsilon=0.0) -> SessionState:
    if env_kind not in (COLLECT_WORLD, ARENA_WORLD):
        raise MalformedMessage(f"unknown env {env_kind!r}")
    ensemble = FusionEnsemble(main=main_handle, subs=list(sub_handles),
                              method=method, epsilon=epsilon)
    session = SessionState(session_id=f"s{next(_session_ids)}",
                           env_kind=env_kind,
                           feature_flags=frozenset(feature_flags),
                           seed=int(seed), ensemble=ensemble)
    session.start_episode(seed)
    return session


def _grid_payload(session: SessionState) -> dict:
    state, level = session.state, session.level
    payload = {
        "env": session.env_kind,
        "size": level.grid_size,
        "objects": [[x, y, kind] for (x, y), kind
                    in sorted(state.objects.items())],
        "walls": sorted(list(w) for w in state.walls),
        "agent": {"pos": list(state.agent_pos), "hp": state.agent_hp,
                  "orb": state.agent_orb},
    }
    if state.opponent_pos is not None:
        payload["opponent"] = {"pos": list(state.opponent_pos),
                               "hp": state.opponent_hp,
                               "orb": state.opponent_orb}
    return payload


def snapshot(session: SessionState) -> dict:
    """Full state readout; all fusion numbers recomputed fresh at the current
    observation so clients never need fusion math of their own."""
    ens = session.ensemble
    main_dist = ens.main(session.obs)
    sub_dists = [sub(session.obs) for sub in ens.subs]
    try:
        k_star, h_star = min_entropy_index(ens, session.obs)
    except NoActiveSubPolicy:
        k_star, h_star = None, None
    fused = fused_distribution(ens, session.obs)
    return {
        "type": "snapshot",
        "session": session.session_id,
        "step": session.step_count,
        "done": session.done,
        "grid": _grid_payload(session),
        "fusion": {"method": ens.method, "epsilon": ens.epsilon,
                   "active": list(ens.active)},
        "distributions": {
            "main": main_dist.probs.tolist(),
            "subs": [d.probs.tolist() for d in sub_dists],
            "fused": fused.probs.tolist(),
        },
        "entropies": {
            "main": normalized_entropy(main_dist),
            "subs": [normalized_entropy(d) for d in sub_dists],
        },
        "k_star": k_star,
        "action": session.last_action,
        "rewards": session.last_rewards,
    }


def _advance(session: SessionState) -> None:
    if session.done:
        raise EpisodeFinished("episode finished; send reset")
    dist = fused_distribution(session.ensemble, session.obs)
    action = sample_action(dist, session.rng)
    session.state, session.obs, rewards, session.done = \
        session.env.step(session.state, action)
    session.last_action = int(action)
    session.last_rewards = rewards
    session.step_count += 1


def _apply_set_fusion(session: SessionState, message: dict) -> None:
    ens = session.ensemble
    if "method" in message:
        if message["method"] not in ("MP", "PP", "ET", "EW"):
            raise MalformedMessage(f"unknown method {message['method']!r}")
        ens.method = message["method"]
    if "epsilon" in message:
        eps = message["epsilon"]
        if not isinstance(eps, (int, float)) or not np.isfinite(eps):
            raise MalformedMessage("epsilon must be a finite number")
        ens.epsilon = float(eps)
    if "active" in message:
        active = message["active"]
        if (not isinstance(active, list)
                or len(active) != len(ens.subs)
                or not all(isinstance(a, bool) for a in active)):
            raise MalformedMessage("active must be a boolean list over subs")
        ens.active = list(active)


def session_step(session: SessionState, message: dict) -> dict:
    """Apply one protocol message; returns the resulting snapshot.

    `auto-run` pacing belongs to the server; here it advances min(n, rest of
    episode) steps and returns the final snapshot.
    """
    if not isinstance(message, dict) or "type" not in message:
        raise MalformedMessage("message must be an object with a type")
    if not session.lock.acquire(blocking=False):
        raise SessionBusy(f"{session.session_id} has an active controller")
    try:
        kind = message["type"]
        if kind == "set-fusion":
            _apply_set_fusion(session, message)
        elif kind == "step":
            _advance(session)
        elif kind == "auto-run":
            n = message.get("n")
            if not isinstance(n, int) or n < 1:
                raise MalformedMessage("auto-run needs integer n >= 1")
            session.auto_running = True
            for _ in range(n):
                if session.done or not session.auto_running:
                    break
                _advance(session)
            session.auto_running = False
        elif kind == "pause":
            session.auto_running = False
        elif kind == "reset":
            seed = message.get("seed", session.seed)
            if not isinstance(seed, int):
                raise MalformedMessage("reset seed must be an integer")
            session.start_episode(seed)
        else:
            raise MalformedMessage(f"unknown message type {kind!r}")
        snap = snapshot(session)
        session.step_log.append(snap)
        return snap
    finally:
        session.lock.release()


def rollout_episode(env_kind, feature_flags, seed, ensemble,
                    max_steps=None) -> list:
    """Library-side episode with the session's exact rng and stepping scheme;
    returns the per-step (action, rewards, done) log."""
    rng, opp_rng = episode_rngs(seed)
    env = _build_env(env_kind, opp_rng)
    level = generate_level(env_kind,
                           8 if env_kind == COLLECT_WORLD else 10,
                           int(seed), frozenset(feature_flags))
    state, obs = env.reset(level)
    log = []
    done = False
    while not done and (max_steps is None or len(log) < max_steps):
        action = sample_action(fused_distribution(ensemble, obs), rng)
        state, obs, rewards, done = env.step(state, action)
        log.append({"action": int(action), "rewards": rewards, "done": done})
    return log
