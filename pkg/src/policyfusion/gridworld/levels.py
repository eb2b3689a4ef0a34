"""Procedural level generation: seed-deterministic placements for both worlds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import GridTooSmall

COLLECT_WORLD = "CollectWorld"
ARENA_WORLD = "ArenaWorld"

RED_BOX = "red-box"
GREEN_BALL = "green-ball"
WALL = "wall"
LOOT = "loot"
ORB = "orb"
DEATH_TILE = "death-tile"

FEATURE_FLAGS = (ORB, DEATH_TILE)

LEVEL_FORMAT_VERSION = 1

_KIND_CODE = {COLLECT_WORLD: 1, ARENA_WORLD: 2}


@dataclass(frozen=True)
class LevelSpec:
    env_kind: str
    grid_size: int
    seed: int
    feature_flags: frozenset
    # (x, y, kind) triples; walls, loot, orbs, death tiles and collectibles.
    objects: tuple
    agent_start: tuple
    opponent_start: tuple | None
    attributes: tuple = field(default_factory=tuple)  # ((name, value), ...)

    def attr(self, name: str) -> float:
        for k, v in self.attributes:
            if k == name:
                return v
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": LEVEL_FORMAT_VERSION,
            "env_kind": self.env_kind,
            "grid_size": self.grid_size,
            "seed": self.seed,
            "feature_flags": sorted(self.feature_flags),
            "objects": [list(o) for o in self.objects],
            "agent_start": list(self.agent_start),
            "opponent_start": list(self.opponent_start) if self.opponent_start else None,
            "attributes": [list(a) for a in self.attributes],
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "LevelSpec":
        d = json.loads(text)
        if d.get("format_version") != LEVEL_FORMAT_VERSION:
            from ..errors import VersionMismatch
            raise VersionMismatch(f"level format {d.get('format_version')!r}")
        return LevelSpec(
            env_kind=d["env_kind"],
            grid_size=d["grid_size"],
            seed=d["seed"],
            feature_flags=frozenset(d["feature_flags"]),
            objects=tuple(tuple(o) for o in d["objects"]),
            agent_start=tuple(d["agent_start"]),
            opponent_start=tuple(d["opponent_start"]) if d["opponent_start"] else None,
            attributes=tuple((a[0], a[1]) for a in d["attributes"]),
        )


def _flags_code(flags: Iterable[str]) -> int:
    return sum(1 << FEATURE_FLAGS.index(f) for f in flags)


def _level_rng(env_kind, grid_size, seed, flags) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _KIND_CODE[env_kind],
               grid_size, _flags_code(flags)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _sample_tiles(rng, grid_size, count, taken):
    """Draw `count` distinct free tiles, in rng order."""
    free = [(x, y) for y in range(grid_size) for x in range(grid_size)
            if (x, y) not in taken]
    idx = rng.choice(len(free), size=count, replace=False)
    return [free[i] for i in np.atleast_1d(idx)]


def _connected(grid_size, walls) -> bool:
    passable = {(x, y) for y in range(grid_size) for x in range(grid_size)
                if (x, y) not in walls}
    if not passable:
        return False
    start = next(iter(sorted(passable)))
    seen, frontier = {start}, [start]
    while frontier:
        x, y = frontier.pop()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if (nx, ny) in passable and (nx, ny) not in seen:
                seen.add((nx, ny))
                frontier.append((nx, ny))
    return len(seen) == len(passable)


def generate_level(env_kind, grid_size, seed, feature_flags=frozenset()) -> LevelSpec:
    """Deterministic level from (env-kind, grid-size, seed, feature-flags)."""
    if grid_size < 5:
        raise GridTooSmall(f"grid size {grid_size} < 5")
    flags = frozenset(feature_flags)
    unknown = flags - set(FEATURE_FLAGS)
    if unknown:
        raise ValueError(f"unknown feature flags {sorted(unknown)}")
    rng = _level_rng(env_kind, grid_size, seed, flags)

    if env_kind == COLLECT_WORLD:
        count = int(rng.integers(1, 6))  # at most 5 collectibles
        tiles = _sample_tiles(rng, grid_size, count + 1, set())
        kinds = [RED_BOX if rng.random() < 0.5 else GREEN_BALL for _ in range(count)]
        objects = tuple((x, y, k) for (x, y), k in zip(tiles[:count], kinds))
        return LevelSpec(env_kind, grid_size, int(seed), flags, objects,
                         agent_start=tiles[count], opponent_start=None)

    if env_kind == ARENA_WORLD:
        n_walls = max(4, grid_size * grid_size // 16)
        while True:
            walls = set(_sample_tiles(rng, grid_size, n_walls, set()))
            if _connected(grid_size, walls):
                break
        taken = set(walls)
        loot_tiles = _sample_tiles(rng, grid_size, 3, taken)
        taken |= set(loot_tiles)
        objects = [(x, y, WALL) for x, y in sorted(walls)]
        objects += [(x, y, LOOT) for x, y in loot_tiles]
        if ORB in flags:
            (ox, oy), = _sample_tiles(rng, grid_size, 1, taken)
            taken.add((ox, oy))
            objects.append((ox, oy, ORB))
        if DEATH_TILE in flags:
            tiles = _sample_tiles(rng, grid_size, 2, taken)
            taken |= set(tiles)
            objects += [(x, y, DEATH_TILE) for x, y in tiles]
        # Mirrored starts keep head-to-head matchups symmetric.
        while True:
            (ax, ay), = _sample_tiles(rng, grid_size, 1, taken)
            bx, by = grid_size - 1 - ax, grid_size - 1 - ay
            if (bx, by) not in taken and (bx, by) != (ax, ay):
                break
        loot_heal = round(float(rng.uniform(0.1, 0.3)), 3)
        attributes = (("melee_damage", 0.4), ("ranged_damage", 0.2),
                      ("loot_heal", loot_heal), ("orb_multiplier", 3.0))
        return LevelSpec(env_kind, grid_size, int(seed), flags, tuple(objects),
                         agent_start=(ax, ay), opponent_start=(bx, by),
                         attributes=attributes)

    raise ValueError(f"unknown env kind {env_kind!r}")


def build_seed_env(env_kind, n, master_seed, grid_size=None,
                   feature_flags=frozenset()) -> list:
    """n levels drawn from the procedural distribution by splitting master_seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if grid_size is None:
        grid_size = 8 if env_kind == COLLECT_WORLD else 10
    children = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF).spawn(n)
    seeds = [int(c.generate_state(1, np.uint64)[0]) for c in children]
    return [generate_level(env_kind, grid_size, s, feature_flags) for s in seeds]


class LevelPool:
    """Episode-to-episode level source.

    A seed list cycles round-robin (SeedEnv); a master seed streams fresh
    procedural levels (ProcEnv).
    """

    def __init__(self, env_kind, grid_size=None, feature_flags=frozenset(),
                 levels=None, master_seed=None):
        if (levels is None) == (master_seed is None):
            raise ValueError("provide exactly one of levels / master_seed")
        self.env_kind = env_kind
        self.grid_size = grid_size or (8 if env_kind == COLLECT_WORLD else 10)
        self.feature_flags = frozenset(feature_flags)
        self.levels = list(levels) if levels is not None else None
        self._cursor = 0
        if master_seed is not None:
            self._seed_seq = np.random.SeedSequence(
                int(master_seed) & 0xFFFFFFFFFFFFFFFF)

    def next_level(self) -> LevelSpec:
        if self.levels is not None:
            level = self.levels[self._cursor % len(self.levels)]
            self._cursor += 1
            return level
        child, = self._seed_seq.spawn(1)
        seed = int(child.generate_state(1, np.uint64)[0])
        return generate_level(self.env_kind, self.grid_size, seed,
                              self.feature_flags)
