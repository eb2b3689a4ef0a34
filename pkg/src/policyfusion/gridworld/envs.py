"""The two gridworld environments and their reward channels.

CollectWorld: open room with red boxes and green balls, 5 actions
(4 cardinal moves + pickup). ArenaWorld: walled 10x10 duel against an
opponent slot, 10 actions (4 moves, 4 cardinal ranged attacks, melee,
use/loot), with optional orb and death-tile feature flags.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import EpisodeFinished
from .levels import (ARENA_WORLD, COLLECT_WORLD, DEATH_TILE, GREEN_BALL, LOOT,
                     ORB, RED_BOX, WALL, LevelSpec)
from .observe import Observation, observe_arena, observe_collect

MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right

# CollectWorld actions
C_UP, C_DOWN, C_LEFT, C_RIGHT, C_PICKUP = range(5)
COLLECT_ACTIONS = 5

# ArenaWorld actions
A_MOVES = (0, 1, 2, 3)
A_RANGED = (4, 5, 6, 7)
A_MELEE = 8
A_USE = 9
ARENA_ACTIONS = 10

TERMINAL = "terminal"
FIXED = "fixed"

COLLECT_CHANNELS = ("R0_red", "R1_green")
ARENA_CHANNELS = ("R0_env", "R_orb", "R_hazard", "R_melee", "R_ranged",
                  "R_noloot", "R_loot")


@dataclass
class GridState:
    level: LevelSpec
    walls: frozenset
    agent_pos: tuple
    agent_hp: float = 1.0
    agent_facing: int = 1
    agent_orb: bool = False
    opponent_pos: tuple | None = None
    opponent_hp: float = 1.0
    opponent_orb: bool = False
    objects: dict = field(default_factory=dict)  # (x, y) -> kind
    step_count: int = 0
    terminal: bool = False
    winner: str | None = None  # "agent" | "opponent" | None
    win_granted: bool = False
    stats: dict = field(default_factory=dict)

    def passable(self, pos) -> bool:
        x, y = pos
        g = self.level.grid_size
        return 0 <= x < g and 0 <= y < g and (x, y) not in self.walls

    def line_of_sight(self, a, b) -> bool:
        """Same row or column with no wall strictly between."""
        (ax, ay), (bx, by) = a, b
        if ax == bx and ay != by:
            lo, hi = sorted((ay, by))
            return all((ax, y) not in self.walls for y in range(lo + 1, hi))
        if ay == by and ax != bx:
            lo, hi = sorted((ax, bx))
            return all((x, ay) not in self.walls for x in range(lo + 1, hi))
        return False


def mirror_state(state: GridState) -> GridState:
    """The opponent's view of an arena state: actor roles swapped."""
    m = copy.copy(state)
    m.agent_pos, m.opponent_pos = state.opponent_pos, state.agent_pos
    m.agent_hp, m.opponent_hp = state.opponent_hp, state.agent_hp
    m.agent_orb, m.opponent_orb = state.opponent_orb, state.agent_orb
    m.objects = state.objects
    return m


def random_opponent(rng: np.random.Generator):
    """The paper's baseline enemy: uniformly random actions."""
    def controller(env, state):
        return int(rng.integers(ARENA_ACTIONS))
    return controller


class CollectWorld:
    env_kind = COLLECT_WORLD
    n_actions = COLLECT_ACTIONS
    channels = COLLECT_CHANNELS

    def __init__(self, mode=TERMINAL, horizon=100):
        if mode not in (TERMINAL, FIXED):
            raise ValueError(mode)
        self.mode = mode
        self.horizon = horizon

    def observe(self, state, known_flags=frozenset()) -> Observation:
        return observe_collect(state, known_flags)

    def reset(self, level: LevelSpec):
        if level.env_kind != COLLECT_WORLD:
            raise ValueError("level is not a CollectWorld level")
        state = GridState(
            level=level, walls=frozenset(), agent_pos=level.agent_start,
            objects={(x, y): k for x, y, k in level.objects},
            stats={"red": 0, "green": 0},
        )
        return state, self.observe(state)

    def step(self, state: GridState, action: int):
        if self.mode == TERMINAL and state.terminal:
            raise EpisodeFinished("episode already finished")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        rewards = {"R0_red": 0.0, "R1_green": 0.0}
        if action in (C_UP, C_DOWN, C_LEFT, C_RIGHT):
            mx, my = MOVES[action]
            target = (state.agent_pos[0] + mx, state.agent_pos[1] + my)
            if state.passable(target):
                state.agent_pos = target
                state.agent_facing = action
        elif action == C_PICKUP:
            kind = state.objects.pop(state.agent_pos, None)
            if kind == RED_BOX:
                rewards["R0_red"] = 1.0
                state.stats["red"] += 1
            elif kind == GREEN_BALL:
                rewards["R1_green"] = 1.0
                state.stats["green"] += 1
        state.step_count += 1
        if self.mode == TERMINAL:
            state.terminal = not state.objects or state.step_count >= self.horizon
        else:
            state.terminal = state.step_count >= self.horizon
        return state, self.observe(state), rewards, state.terminal


class ArenaWorld:
    env_kind = ARENA_WORLD
    n_actions = ARENA_ACTIONS
    channels = ARENA_CHANNELS

    def __init__(self, opponent=None, mode=TERMINAL, horizon=100):
        if mode not in (TERMINAL, FIXED):
            raise ValueError(mode)
        self.mode = mode
        self.horizon = horizon
        self.opponent = opponent  # callable (env, state) -> action

    def observe(self, state, known_flags=frozenset()) -> Observation:
        return observe_arena(state, known_flags)

    def reset(self, level: LevelSpec):
        if level.env_kind != ARENA_WORLD:
            raise ValueError("level is not an ArenaWorld level")
        walls = frozenset((x, y) for x, y, k in level.objects if k == WALL)
        objects = {(x, y): k for x, y, k in level.objects if k != WALL}
        state = GridState(
            level=level, walls=walls, agent_pos=level.agent_start,
            opponent_pos=level.opponent_start, objects=objects,
            stats={"melee": 0, "ranged": 0, "loot": 0, "orb": 0,
                   "death_contacts": 0},
        )
        return state, self.observe(state, level.feature_flags)

    def _apply(self, state: GridState, actor: str, action: int) -> dict:
        """Apply one actor's action; returns the event record."""
        ev = {"impossible": False, "melee": False, "ranged": False,
              "loot": False, "orb": False, "death": False, "win": False}
        if actor == "agent":
            pos, other = state.agent_pos, state.opponent_pos
            hp_other, has_orb = state.opponent_hp, state.agent_orb
        else:
            pos, other = state.opponent_pos, state.agent_pos
            hp_other, has_orb = state.agent_hp, state.opponent_orb
        level = state.level
        mult = level.attr("orb_multiplier") if has_orb else 1.0

        if action in A_MOVES:
            mx, my = MOVES[action]
            target = (pos[0] + mx, pos[1] + my)
            if not state.passable(target) or target == other:
                ev["impossible"] = True
            else:
                pos = target
                if state.objects.get(pos) == DEATH_TILE:
                    ev["death"] = True
        elif action in A_RANGED:
            mx, my = MOVES[action - 4]
            dx, dy = other[0] - pos[0], other[1] - pos[1]
            aligned = (dx * my == dy * mx) and (dx * mx + dy * my > 0)
            if aligned and state.line_of_sight(pos, other) and hp_other > 0:
                hp_other = max(0.0, hp_other - level.attr("ranged_damage") * mult)
                ev["ranged"] = True
            else:
                ev["impossible"] = True
        elif action == A_MELEE:
            if abs(other[0] - pos[0]) + abs(other[1] - pos[1]) == 1 and hp_other > 0:
                hp_other = max(0.0, hp_other - level.attr("melee_damage") * mult)
                ev["melee"] = True
            else:
                ev["impossible"] = True
        elif action == A_USE:
            kind = state.objects.get(pos)
            if kind == LOOT:
                del state.objects[pos]
                ev["loot"] = True
            elif kind == ORB:
                del state.objects[pos]
                ev["orb"] = True
            else:
                ev["impossible"] = True
        else:
            raise ValueError(f"action {action} out of range")

        if actor == "agent":
            state.agent_pos = pos
            if action in A_MOVES and not ev["impossible"]:
                state.agent_facing = action
            state.opponent_hp = hp_other
            if ev["death"]:
                state.agent_hp = 0.0
            if ev["loot"]:
                state.agent_hp = min(1.0, state.agent_hp + level.attr("loot_heal"))
            if ev["orb"]:
                state.agent_orb = True
            if state.opponent_hp <= 0.0 and state.winner is None:
                state.winner = "agent"
        else:
            state.opponent_pos = pos
            state.agent_hp = hp_other
            if ev["death"]:
                state.opponent_hp = 0.0
            if ev["loot"]:
                state.opponent_hp = min(1.0, state.opponent_hp + level.attr("loot_heal"))
            if ev["orb"]:
                state.opponent_orb = True
            if state.agent_hp <= 0.0 and state.winner is None:
                state.winner = "opponent"
        return ev

    def step(self, state: GridState, action: int):
        if self.mode == TERMINAL and state.terminal:
            raise EpisodeFinished("episode already finished")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")

        ev = self._apply(state, "agent", action)
        if ev["death"] and state.winner is None:
            state.winner = "opponent"
        for key in ("melee", "ranged", "loot", "orb"):
            if ev[key]:
                state.stats[key] += 1
        if ev["death"]:
            state.stats["death_contacts"] += 1

        # Opponent acts unless the duel is already decided this step.
        if self.opponent is not None and state.winner is None \
                and state.opponent_hp > 0 and state.agent_hp > 0:
            opp_action = self.opponent(self, state)
            opp_ev = self._apply(state, "opponent", opp_action)
            if opp_ev["death"] and state.winner is None:
                state.winner = "agent"

        state.step_count += 1
        win_now = state.winner == "agent" and not state.win_granted
        if win_now:
            state.win_granted = True
        # Per-step env reward is exactly one of three values:
        # -0.01, -0.11 (impossible move) or -0.01 + 10*HP (win step).
        r0 = -0.01
        if win_now:
            r0 += 10.0 * state.agent_hp
        elif ev["impossible"]:
            r0 -= 0.1
        rewards = {
            "R0_env": r0,
            "R_orb": -0.01 + (1.0 if ev["orb"] else 0.0),
            "R_hazard": (-1.0 if ev["death"] else 0.0),
            "R_melee": -0.01 + (0.5 if ev["melee"] else 0.0)
                       - (0.1 if ev["ranged"] else 0.0),
            "R_ranged": -0.01 + (0.5 if ev["ranged"] else 0.0)
                        - (0.1 if ev["melee"] else 0.0),
            "R_noloot": (-1.0 if ev["loot"] else 0.0),
            "R_loot": -0.01 + (1.0 if ev["loot"] else 0.0),
        }
        if self.mode == TERMINAL:
            state.terminal = (state.winner is not None
                              or state.step_count >= self.horizon)
        else:
            state.terminal = state.step_count >= self.horizon
        obs = self.observe(state, state.level.feature_flags)
        return state, obs, rewards, state.terminal
