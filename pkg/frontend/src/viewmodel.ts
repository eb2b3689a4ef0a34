/**
 * Pure view-model construction from server snapshots.
 *
 * Every displayed probability and entropy is copied verbatim from the
 * snapshot; the client performs no fusion arithmetic of its own. Reward
 * tallies are plain sums of the per-step reward channels the server reports.
 */

import { Snapshot } from "./protocol.js";

export interface PolicyBar {
  label: string;
  probs: number[];
  /** Normalized entropy in [0, 1]; null for the fused row (not a member). */
  entropy: number | null;
  /** True for the minimum-entropy active sub-policy, as picked server-side. */
  isKStar: boolean;
  /** False for sub-policies toggled out of the ensemble. */
  active: boolean;
}

export interface TileView {
  x: number;
  y: number;
  kind: "empty" | "wall" | "object" | "agent" | "opponent";
  /** Object kind name when kind === "object". */
  objectKind: string | null;
}

export interface ActorView {
  pos: [number, number];
  hp: number;
  orb: boolean;
}

export interface ViewModel {
  session: string;
  step: number;
  done: boolean;
  gridSize: number;
  tiles: TileView[];
  agent: ActorView;
  opponent: ActorView | null;
  policies: PolicyBar[];
  fused: PolicyBar;
  controls: {
    method: "MP" | "PP" | "ET" | "EW";
    epsilon: number;
    active: boolean[];
  };
  lastAction: number | null;
  lastRewards: Record<string, number> | null;
}

/** Running per-channel reward sums across the steps of one episode. */
export type RewardTally = Record<string, number>;

export function emptyTally(): RewardTally {
  return {};
}

/** Fold one snapshot's step rewards into the tally; returns a new tally. */
export function accumulateTally(tally: RewardTally, snap: Snapshot): RewardTally {
  if (snap.rewards === null) return { ...tally };
  const next: RewardTally = { ...tally };
  for (const [channel, value] of Object.entries(snap.rewards)) {
    next[channel] = (next[channel] ?? 0) + value;
  }
  return next;
}

/** Build the full view model for one snapshot. Pure: no I/O, no mutation. */
export function renderState(snap: Snapshot): ViewModel {
  const tiles: TileView[] = [];
  const size = snap.grid.size;
  const kinds = new Map<string, TileView>();
  for (const [x, y] of snap.grid.walls) {
    kinds.set(`${x},${y}`, { x, y, kind: "wall", objectKind: null });
  }
  for (const [x, y, objectKind] of snap.grid.objects) {
    kinds.set(`${x},${y}`, { x, y, kind: "object", objectKind });
  }
  const [ax, ay] = snap.grid.agent.pos;
  kinds.set(`${ax},${ay}`, { x: ax, y: ay, kind: "agent", objectKind: null });
  if (snap.grid.opponent) {
    const [ox, oy] = snap.grid.opponent.pos;
    kinds.set(`${ox},${oy}`, { x: ox, y: oy, kind: "opponent", objectKind: null });
  }
  for (let y = 0; y < size; y += 1) {
    for (let x = 0; x < size; x += 1) {
      tiles.push(
        kinds.get(`${x},${y}`) ?? { x, y, kind: "empty", objectKind: null },
      );
    }
  }

  const policies: PolicyBar[] = [
    {
      label: "main",
      probs: [...snap.distributions.main],
      entropy: snap.entropies.main,
      isKStar: false,
      active: true,
    },
  ];
  snap.distributions.subs.forEach((probs, k) => {
    policies.push({
      label: `sub-${k}`,
      probs: [...probs],
      entropy: snap.entropies.subs[k] ?? null,
      isKStar: snap.k_star === k,
      active: snap.fusion.active[k] ?? false,
    });
  });

  return {
    session: snap.session,
    step: snap.step,
    done: snap.done,
    gridSize: size,
    tiles,
    agent: {
      pos: snap.grid.agent.pos,
      hp: snap.grid.agent.hp,
      orb: snap.grid.agent.orb,
    },
    opponent: snap.grid.opponent
      ? {
          pos: snap.grid.opponent.pos,
          hp: snap.grid.opponent.hp,
          orb: snap.grid.opponent.orb,
        }
      : null,
    policies,
    fused: {
      label: "fused",
      probs: [...snap.distributions.fused],
      entropy: null,
      isKStar: false,
      active: true,
    },
    controls: {
      method: snap.fusion.method,
      epsilon: snap.fusion.epsilon,
      active: [...snap.fusion.active],
    },
    lastAction: snap.action,
    lastRewards: snap.rewards === null ? null : { ...snap.rewards },
  };
}
