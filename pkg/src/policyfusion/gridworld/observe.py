"""Observation encoding shared by tabular policies, MLP policies and IRL models.

Egocentric features: direction buckets toward the nearest object of each kind,
normalized offsets, HP values and a 4-neighborhood wall bitmap. The encoding
is a pure function of the grid state and the observer's known-feature set, so
hiding a post-change feature is just re-encoding with a smaller vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .levels import ARENA_WORLD, COLLECT_WORLD, DEATH_TILE, GREEN_BALL, ORB, RED_BOX

# Direction bucket: 3x3 sign grid of the offset to the nearest object, plus a
# tenth "absent" bucket.
N_BUCKETS = 10
ABSENT = 9


@dataclass(frozen=True)
class Observation:
    env_kind: str
    state_index: int
    n_states: int
    blocks: tuple          # ((name, np.ndarray), ...) in fixed order
    known_flags: frozenset

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([v for _, v in self.blocks])


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def _bucket(dx, dy, present) -> int:
    if not present:
        return ABSENT
    return 3 * (_sign(dx) + 1) + (_sign(dy) + 1)


def _nearest(pos, tiles):
    """Nearest tile by Manhattan distance; ties break on (y, x) order."""
    if not tiles:
        return None
    ax, ay = pos
    return min(tiles, key=lambda t: (abs(t[0] - ax) + abs(t[1] - ay), t[1], t[0]))


def _target_block(pos, tiles, grid_size, extra=()):
    near = _nearest(pos, tiles)
    onehot = np.zeros(N_BUCKETS)
    if near is None:
        onehot[ABSENT] = 1.0
        offs = [0.0, 0.0]
        bucket = ABSENT
    else:
        dx, dy = near[0] - pos[0], near[1] - pos[1]
        bucket = _bucket(dx, dy, True)
        onehot[bucket] = 1.0
        offs = [dx / grid_size, dy / grid_size]
    return bucket, np.concatenate([onehot, offs, list(extra)])


def observe_collect(state, known_flags=frozenset()) -> Observation:
    g = state.level.grid_size
    reds = [p for p, k in state.objects.items() if k == RED_BOX]
    greens = [p for p, k in state.objects.items() if k == GREEN_BALL]
    rb, red_block = _target_block(state.agent_pos, reds, g)
    gb, green_block = _target_block(state.agent_pos, greens, g)
    blocks = (("red", red_block), ("green", green_block))
    return Observation(COLLECT_WORLD, rb * N_BUCKETS + gb, N_BUCKETS * N_BUCKETS,
                       blocks, frozenset(known_flags))


def observe_arena(state, known_flags=frozenset()) -> Observation:
    g = state.level.grid_size
    ax, ay = state.agent_pos
    ox, oy = state.opponent_pos
    dx, dy = ox - ax, oy - ay
    opp_bucket = _bucket(dx, dy, True)
    onehot = np.zeros(9)
    onehot[opp_bucket] = 1.0
    same_row = float(dy == 0)
    same_col = float(dx == 0)
    los = float(state.line_of_sight(state.agent_pos, state.opponent_pos))
    adjacent = float(abs(dx) + abs(dy) == 1)
    opp_block = np.concatenate([onehot, [dx / g, dy / g],
                                [same_row, same_col, los, adjacent],
                                [state.agent_hp, state.opponent_hp]])
    wall_block = np.array([float(not state.passable((ax + mx, ay + my)))
                           for mx, my in ((0, -1), (0, 1), (-1, 0), (1, 0))])
    from .levels import LOOT
    loot_tiles = [p for p, k in state.objects.items() if k == LOOT]
    _, loot_block = _target_block(state.agent_pos, loot_tiles, g)
    blocks = [("opp", opp_block), ("walls", wall_block), ("loot", loot_block)]

    known = frozenset(known_flags)
    if ORB in known:
        orb_tiles = [p for p, k in state.objects.items() if k == ORB]
        _, orb_block = _target_block(state.agent_pos, orb_tiles, g,
                                     extra=[float(state.agent_orb)])
        blocks.append(("orb", orb_block))
    if DEATH_TILE in known:
        death_tiles = [p for p, k in state.objects.items() if k == DEATH_TILE]
        _, death_block = _target_block(state.agent_pos, death_tiles, g)
        blocks.append(("death-tile", death_block))

    state_index = opp_bucket * 4 + int(los) * 2 + int(adjacent)
    return Observation(ARENA_WORLD, state_index, 36, tuple(blocks), known)


def mask_observation(obs: Observation, known_flags) -> Observation:
    """Re-encode as seen by an observer that only knows `known_flags`.

    Feature blocks outside the known vocabulary are dropped; the result is in
    the observation space of the environment version without those features.
    """
    known = frozenset(known_flags)
    if not known <= obs.known_flags:
        raise ValueError("known-feature-set must be a subset of the observation's")
    kept = tuple((name, vec) for name, vec in obs.blocks
                 if name not in (ORB, DEATH_TILE) or name in known)
    return Observation(obs.env_kind, obs.state_index, obs.n_states, kept, known)


def feature_dim(env_kind, known_flags=frozenset()) -> int:
    base = {COLLECT_WORLD: 24, ARENA_WORLD: 33}[env_kind]
    if env_kind == ARENA_WORLD:
        if ORB in known_flags:
            base += 13
        if DEATH_TILE in known_flags:
            base += 12
    return base


def n_states(env_kind) -> int:
    return {COLLECT_WORLD: 100, ARENA_WORLD: 36}[env_kind]
