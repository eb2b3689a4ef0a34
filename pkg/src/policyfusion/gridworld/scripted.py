"""Scripted opponents and experts: greedy BFS pursuit of one labeled objective."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..errors import IncompatibleExpert
from .envs import (A_MELEE, A_USE, ARENA_ACTIONS, C_PICKUP, MOVES, GridState)
from .levels import (ARENA_WORLD, COLLECT_WORLD, DEATH_TILE, GREEN_BALL, LOOT,
                     ORB, RED_BOX)

RANDOM_OPPONENT = "random-opponent"
RED_COLLECTOR = "red-collector"
GREEN_COLLECTOR = "green-collector"
LOOT_AVOIDER = "loot-avoider"
WARRIOR = "warrior"
ARCHER = "archer"
ORB_USER = "orb-user"
HAZARD_AVOIDER = "hazard-avoider"

COLLECT_EXPERTS = (RED_COLLECTOR, GREEN_COLLECTOR)
ARENA_EXPERTS = (RANDOM_OPPONENT, LOOT_AVOIDER, WARRIOR, ARCHER, ORB_USER,
                 HAZARD_AVOIDER)
EXPERT_KINDS = COLLECT_EXPERTS + ARENA_EXPERTS


def _bfs_move(state: GridState, targets, avoid=frozenset(), block_other=True):
    """First move (action 0..3) on a shortest path to any target tile.

    Returns None when no target is reachable. Deterministic: fixed move order.
    """
    targets = set(targets)
    if not targets:
        return None
    start = state.agent_pos
    blocked = set(avoid)
    if block_other and state.opponent_pos is not None:
        blocked.add(state.opponent_pos)
    if start in targets:
        return "here"
    seen = {start}
    queue = deque([(start, None)])
    while queue:
        pos, first = queue.popleft()
        for action, (mx, my) in enumerate(MOVES):
            nxt = (pos[0] + mx, pos[1] + my)
            if nxt in seen or not state.passable(nxt) or nxt in blocked:
                continue
            f = first if first is not None else action
            if nxt in targets:
                return f
            seen.add(nxt)
            queue.append((nxt, f))
    return None


def _safe_random_move(state, rng, avoid=frozenset()):
    options = []
    for action, (mx, my) in enumerate(MOVES):
        nxt = (state.agent_pos[0] + mx, state.agent_pos[1] + my)
        if state.passable(nxt) and nxt not in avoid and nxt != state.opponent_pos:
            options.append(action)
    if not options:
        return int(rng.integers(4))
    return int(options[rng.integers(len(options))])


def _tiles(state, kind):
    return {p for p, k in state.objects.items() if k == kind}


def _ranged_action(state):
    """Ranged attack action toward the opponent, or None if out of line."""
    (ax, ay), (ox, oy) = state.agent_pos, state.opponent_pos
    if not state.line_of_sight(state.agent_pos, state.opponent_pos):
        return None
    if ax == ox:
        return 4 if oy < ay else 5
    return 6 if ox < ax else 7


def _adjacent(state):
    (ax, ay), (ox, oy) = state.agent_pos, state.opponent_pos
    return abs(ax - ox) + abs(ay - oy) == 1


def _collector(state, rng, kind):
    move = _bfs_move(state, _tiles(state, kind), block_other=False)
    if move == "here":
        return C_PICKUP
    if move is None:
        return _safe_random_move(state, rng)
    return move


def _fight_or_approach(state, rng, avoid, melee_ok=True, ranged_ok=True):
    if ranged_ok and state.opponent_hp > 0:
        ra = _ranged_action(state)
        if ra is not None and not (_adjacent(state) and melee_ok):
            return ra
    if melee_ok and _adjacent(state) and state.opponent_hp > 0:
        return A_MELEE
    # Move toward a tile adjacent to the opponent.
    ox, oy = state.opponent_pos
    adj = {(ox + mx, oy + my) for mx, my in MOVES}
    adj = {p for p in adj if state.passable(p) and p not in avoid}
    move = _bfs_move(state, adj, avoid=avoid)
    if move == "here" or move is None:
        return _safe_random_move(state, rng, avoid)
    return move


def _archer(state, rng, avoid):
    ra = _ranged_action(state)
    if ra is not None and not _adjacent(state) and state.opponent_hp > 0:
        return ra
    if _adjacent(state):
        # Back off: any safe move increasing distance.
        (ax, ay), (ox, oy) = state.agent_pos, state.opponent_pos
        best, best_d = None, abs(ax - ox) + abs(ay - oy)
        for action, (mx, my) in enumerate(MOVES):
            nxt = (ax + mx, ay + my)
            if not state.passable(nxt) or nxt in avoid or nxt == (ox, oy):
                continue
            d = abs(nxt[0] - ox) + abs(nxt[1] - oy)
            if d > best_d:
                best, best_d = action, d
        if best is not None:
            return best
        return _safe_random_move(state, rng, avoid)
    # Seek row/column alignment with the opponent.
    (ax, ay), (ox, oy) = state.agent_pos, state.opponent_pos
    best, best_key = None, (min(abs(ax - ox), abs(ay - oy)), 0)
    for action, (mx, my) in enumerate(MOVES):
        nxt = (ax + mx, ay + my)
        if not state.passable(nxt) or nxt in avoid or nxt == (ox, oy):
            continue
        key = (min(abs(nxt[0] - ox), abs(nxt[1] - oy)),
               abs(nxt[0] - ox) + abs(nxt[1] - oy))
        if best is None or key < best_key:
            best, best_key = action, key
    if best is not None:
        return best
    return _safe_random_move(state, rng, avoid)


def scripted_action(kind: str, state: GridState, rng: np.random.Generator) -> int:
    """Action of the named scripted expert at `state`."""
    env_kind = state.level.env_kind
    if kind in COLLECT_EXPERTS:
        if env_kind != COLLECT_WORLD:
            raise IncompatibleExpert(f"{kind} needs CollectWorld")
        return _collector(state, rng, RED_BOX if kind == RED_COLLECTOR else GREEN_BALL)
    if kind not in ARENA_EXPERTS:
        raise IncompatibleExpert(f"unknown expert kind {kind!r}")
    if env_kind != ARENA_WORLD:
        raise IncompatibleExpert(f"{kind} needs ArenaWorld")

    death = _tiles(state, DEATH_TILE)
    if kind == RANDOM_OPPONENT:
        return int(rng.integers(ARENA_ACTIONS))
    if kind == WARRIOR:
        return _fight_or_approach(state, rng, avoid=death, ranged_ok=False)
    if kind == ARCHER:
        return _archer(state, rng, avoid=death)
    if kind == LOOT_AVOIDER:
        return _fight_or_approach(state, rng, avoid=death | _tiles(state, LOOT))
    if kind == HAZARD_AVOIDER:
        return _fight_or_approach(state, rng, avoid=death)
    if kind == ORB_USER:
        if not state.agent_orb:
            orbs = _tiles(state, ORB)
            if orbs:
                move = _bfs_move(state, orbs, avoid=death)
                if move == "here":
                    return A_USE
                if move is not None:
                    return move
        return _fight_or_approach(state, rng, avoid=death)
    raise IncompatibleExpert(kind)


def scripted_policy(kind: str, rng: np.random.Generator):
    """Close over an rng stream; returns state -> action."""
    def act(state):
        return scripted_action(kind, state, rng)
    return act
