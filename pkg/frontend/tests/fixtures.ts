import { Snapshot } from "../src/protocol.js";

/** A hand-written snapshot in the server's exact wire shape. */
export function sampleSnapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    type: "snapshot",
    session: "s1",
    step: 3,
    done: false,
    grid: {
      env: "CollectWorld",
      size: 4,
      objects: [
        [1, 2, "red"],
        [3, 0, "green"],
      ],
      walls: [[2, 2]],
      agent: { pos: [0, 0], hp: 1.0, orb: false },
    },
    fusion: { method: "EW", epsilon: 0.1, active: [true, false] },
    distributions: {
      main: [0.7, 0.1, 0.1, 0.05, 0.05],
      subs: [
        [0.05, 0.8, 0.05, 0.05, 0.05],
        [0.2, 0.2, 0.2, 0.2, 0.2],
      ],
      fused: [0.4, 0.4, 0.1, 0.05, 0.05],
    },
    entropies: { main: 0.65, subs: [0.41, 1.0] },
    k_star: 0,
    action: 2,
    rewards: { R0_env: -0.01, R1_red: 1.0 },
    ...overrides,
  };
}
