from .levels import (ARENA_WORLD, COLLECT_WORLD, DEATH_TILE, GREEN_BALL, LOOT,
                     ORB, RED_BOX, WALL, LevelPool, LevelSpec, build_seed_env,
                     generate_level)
from .envs import (ARENA_CHANNELS, COLLECT_CHANNELS, FIXED, TERMINAL,
                   ArenaWorld, CollectWorld, GridState, mirror_state,
                   random_opponent)
from .observe import (Observation, feature_dim, mask_observation, n_states,
                      observe_arena, observe_collect)
from .scripted import (ARCHER, ARENA_EXPERTS, COLLECT_EXPERTS, EXPERT_KINDS,
                       GREEN_COLLECTOR, HAZARD_AVOIDER, LOOT_AVOIDER, ORB_USER,
                       RANDOM_OPPONENT, RED_COLLECTOR, WARRIOR, scripted_action,
                       scripted_policy)

__all__ = [n for n in dir() if not n.startswith("_")]
