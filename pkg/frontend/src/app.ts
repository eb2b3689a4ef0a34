/**
 * Playground controller: wires the session client to the renderer and keeps
 * the per-episode reward tally. The transport is raw TCP, so the app runs in
 * a Node-backed shell (Electron, or a terminal preview via previewText).
 */

import { SessionClient } from "./client.js";
import { CreateSessionRequest, Snapshot } from "./protocol.js";
import { renderHtml } from "./render.js";
import {
  RewardTally,
  ViewModel,
  accumulateTally,
  emptyTally,
  renderState,
} from "./viewmodel.js";

export interface AppOptions {
  host: string;
  port: number;
  create: Omit<CreateSessionRequest, "type">;
  /** Receives fresh HTML after every snapshot; e.g. el => node.innerHTML = el. */
  onRender?: (html: string, vm: ViewModel) => void;
}

export class PlaygroundApp {
  readonly client = new SessionClient();
  private sessionId: string | null = null;
  private tally: RewardTally = emptyTally();
  private options: AppOptions;

  constructor(options: AppOptions) {
    this.options = options;
  }

  get rewardTally(): RewardTally {
    return { ...this.tally };
  }

  private apply(snap: Snapshot): ViewModel {
    this.tally = accumulateTally(this.tally, snap);
    const vm = renderState(snap);
    this.options.onRender?.(renderHtml(vm), vm);
    return vm;
  }

  async start(): Promise<ViewModel> {
    await this.client.connect(this.options.host, this.options.port);
    const snap = await this.client.request({
      type: "create-session",
      ...this.options.create,
    });
    this.sessionId = snap.session;
    this.tally = emptyTally();
    return this.apply(snap);
  }

  private get session(): string {
    if (this.sessionId === null) throw new Error("app not started");
    return this.sessionId;
  }

  async step(): Promise<ViewModel> {
    return this.apply(await this.client.request({ type: "step", session: this.session }));
  }

  async run(n: number, intervalMs = 0): Promise<ViewModel[]> {
    const snaps = await this.client.autoRun(this.session, n, intervalMs);
    return snaps.map((snap) => this.apply(snap));
  }

  async pause(): Promise<ViewModel> {
    return this.apply(await this.client.request({ type: "pause", session: this.session }));
  }

  async reset(seed?: number): Promise<ViewModel> {
    const snap = await this.client.request({
      type: "reset",
      session: this.session,
      ...(seed === undefined ? {} : { seed }),
    });
    this.tally = emptyTally();
    return this.apply(snap);
  }

  async setFusion(change: {
    method?: "MP" | "PP" | "ET" | "EW";
    epsilon?: number;
    active?: boolean[];
  }): Promise<ViewModel> {
    return this.apply(
      await this.client.request({ type: "set-fusion", session: this.session, ...change }),
    );
  }

  stop(): void {
    this.client.close();
  }
}

/** Plain-text grid preview for terminal use. */
export function previewText(vm: ViewModel): string {
  const glyph = { empty: ".", wall: "#", object: "o", agent: "A", opponent: "B" };
  const lines: string[] = [];
  for (let y = 0; y < vm.gridSize; y += 1) {
    let line = "";
    for (let x = 0; x < vm.gridSize; x += 1) {
      line += glyph[vm.tiles[y * vm.gridSize + x]!.kind];
    }
    lines.push(line);
  }
  lines.push(`step ${vm.step}${vm.done ? " done" : ""} method ${vm.controls.method}`);
  return lines.join("\n");
}
