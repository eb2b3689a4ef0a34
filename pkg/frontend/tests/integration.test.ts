/**
 * End-to-end tests against the real playground server process. The fusion
 * arithmetic below exists only as a test oracle; the shipped client never
 * computes it (see viewmodel tests for the verbatim-copy invariant).
 */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { PlaygroundApp } from "../src/app.js";
import { ProtocolError, SessionClient } from "../src/client.js";
import { Snapshot } from "../src/protocol.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const FIXTURE = join(HERE, "server_fixture.py");

interface RolloutEntry {
  action: number;
  rewards: Record<string, number>;
  done: boolean;
}

let checkpointDir: string;
let server: ChildProcess;
let port: number;

beforeAll(async () => {
  checkpointDir = mkdtempSync(join(tmpdir(), "playground-"));
  execFileSync("python3", [FIXTURE, "checkpoints", checkpointDir]);
  server = spawn(
    "python3",
    ["-u", "-m", "policyfusion.cli", "serve", "--port", "0",
     "--checkpoints", checkpointDir],
    { stdio: ["ignore", "pipe", "inherit"] },
  );
  port = await new Promise<number>((resolve, reject) => {
    let banner = "";
    server.stdout!.on("data", (chunk: Buffer) => {
      banner += chunk.toString();
      const match = banner.match(/listening on [\d.]+:(\d+)/);
      if (match) resolve(Number(match[1]));
    });
    server.on("exit", (code) => reject(new Error(`server exited: ${code}`)));
    setTimeout(() => reject(new Error("server did not start")), 30_000);
  });
});

afterAll(() => {
  server?.kill();
  rmSync(checkpointDir, { recursive: true, force: true });
});

async function connect(): Promise<SessionClient> {
  const client = new SessionClient();
  await client.connect("127.0.0.1", port);
  return client;
}

function createMessage(seed: number) {
  return {
    type: "create-session" as const,
    env: "CollectWorld",
    seed,
    main: "main.json",
    subs: ["sub.json"],
  };
}

// ---- fusion oracle (tests only) --------------------------------------------

function normEntropy(p: number[]): number {
  let h = 0;
  for (const q of p) if (q > 0) h -= q * Math.log(q);
  return Math.min(1, Math.max(0, h / Math.log(p.length)));
}

function oracleFused(snap: Snapshot): number[] {
  const main = snap.distributions.main;
  const subs = snap.distributions.subs.filter((_, k) => snap.fusion.active[k]);
  if (subs.length === 0) return [...main];
  const members = [main, ...subs];
  const { method, epsilon } = snap.fusion;
  if (method === "MP") {
    return main.map(
      (_, a) => members.reduce((s, m) => s + m[a]!, 0) / members.length,
    );
  }
  if (method === "PP") {
    const prod = main.map((_, a) => members.reduce((s, m) => s * m[a]!, 1));
    const z = prod.reduce((s, v) => s + v, 0);
    return z === 0 ? [...main] : prod.map((v) => v / z);
  }
  const entropies = subs.map(normEntropy);
  let kStar = 0;
  for (let k = 1; k < subs.length; k += 1) {
    if (entropies[k]! < entropies[kStar]!) kStar = k;
  }
  const h = entropies[kStar]!;
  const pick = subs[kStar]!;
  if (method === "ET") {
    return h < normEntropy(main) + epsilon ? [...pick] : [...main];
  }
  return main.map((p, a) => h * p + (1 - h) * pick[a]!);
}

// ----------------------------------------------------------------------------

describe("playground server integration", () => {
  it("creates a session and returns a schema-valid snapshot", async () => {
    const client = await connect();
    try {
      const snap = await client.request(createMessage(3));
      expect(snap.step).toBe(0);
      expect(snap.done).toBe(false);
      expect(snap.distributions.subs).toHaveLength(1);
      expect(snap.grid.env).toBe("CollectWorld");
      expect(snap.grid.size).toBe(8);
    } finally {
      client.close();
    }
  });

  it("replays a full episode identically to the library rollout", async () => {
    const reference: RolloutEntry[] = JSON.parse(
      execFileSync("python3", [FIXTURE, "rollout", checkpointDir, "11"], {
        encoding: "utf-8",
      }),
    );
    const client = await connect();
    try {
      let snap = await client.request(createMessage(11));
      const session = snap.session;
      const actions: number[] = [];
      const tally: Record<string, number> = {};
      while (!snap.done) {
        snap = await client.request({ type: "step", session });
        actions.push(snap.action!);
        for (const [channel, value] of Object.entries(snap.rewards!)) {
          tally[channel] = (tally[channel] ?? 0) + value;
        }
      }
      expect(actions).toEqual(reference.map((e) => e.action));
      // displayed reward tally equals the sum of per-step channels
      const expected: Record<string, number> = {};
      for (const entry of reference) {
        for (const [channel, value] of Object.entries(entry.rewards)) {
          expected[channel] = (expected[channel] ?? 0) + value;
        }
      }
      expect(Object.keys(tally).sort()).toEqual(Object.keys(expected).sort());
      for (const channel of Object.keys(expected)) {
        expect(tally[channel]).toBeCloseTo(expected[channel]!, 9);
      }
    } finally {
      client.close();
    }
  });

  it("reports fused distributions matching each method's definition", async () => {
    const client = await connect();
    try {
      let snap = await client.request(createMessage(7));
      const session = snap.session;
      for (const method of ["MP", "PP", "ET", "EW"] as const) {
        snap = await client.request({
          type: "set-fusion",
          session,
          method,
          epsilon: 0.05,
        });
        expect(snap.fusion.method).toBe(method);
        const expected = oracleFused(snap);
        snap.distributions.fused.forEach((p, a) => {
          expect(Math.abs(p - expected[a]!)).toBeLessThan(1e-12);
        });
      }
    } finally {
      client.close();
    }
  });

  it("falls back to the main policy when every sub is deactivated", async () => {
    const client = await connect();
    try {
      let snap = await client.request(createMessage(5));
      snap = await client.request({
        type: "set-fusion",
        session: snap.session,
        active: [false],
      });
      expect(snap.distributions.fused).toEqual(snap.distributions.main);
      expect(snap.k_star).toBeNull();
    } finally {
      client.close();
    }
  });

  it("round-trips control changes into the echoed fusion state", async () => {
    const app = new PlaygroundApp({
      host: "127.0.0.1",
      port,
      create: { env: "CollectWorld", seed: 9, main: "main.json", subs: ["sub.json"] },
    });
    try {
      await app.start();
      const vm = await app.setFusion({ method: "PP", epsilon: 0.25, active: [true] });
      expect(vm.controls).toEqual({ method: "PP", epsilon: 0.25, active: [true] });
    } finally {
      app.stop();
    }
  });

  it("streams one snapshot per auto-run step and tallies rewards", async () => {
    const app = new PlaygroundApp({
      host: "127.0.0.1",
      port,
      create: { env: "CollectWorld", seed: 2, main: "main.json", subs: ["sub.json"] },
    });
    try {
      await app.start();
      const vms = await app.run(5);
      expect(vms.map((vm) => vm.step)).toEqual([1, 2, 3, 4, 5]);
      // collect-world pickups tally into the two object channels
      expect(app.rewardTally["R0_red"]).toBeDefined();
      expect(app.rewardTally["R1_green"]).toBeDefined();
    } finally {
      app.stop();
    }
  });

  it("surfaces server error codes as ProtocolError", async () => {
    const client = await connect();
    try {
      await expect(
        client.request({ type: "step", session: "nope" }),
      ).rejects.toMatchObject({
        name: "ProtocolError",
        code: "unknown-session",
      });
    } finally {
      client.close();
    }
  });

  it("revives a finished episode through reset with a fresh seed", async () => {
    const client = await connect();
    try {
      let snap = await client.request(createMessage(13));
      const session = snap.session;
      const firstGrid = JSON.stringify(snap.grid.objects);
      while (!snap.done) {
        snap = await client.request({ type: "step", session });
      }
      await expect(
        client.request({ type: "step", session }),
      ).rejects.toMatchObject({ code: "episode-finished" });
      snap = await client.request({ type: "reset", session, seed: 14 });
      expect(snap.step).toBe(0);
      expect(snap.done).toBe(false);
      expect(JSON.stringify(snap.grid.objects)).not.toBe(firstGrid);
    } finally {
      client.close();
    }
  });
});
