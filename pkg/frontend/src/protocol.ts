/**
 * Wire protocol for the playground session server.
 *
 * Framing: a 4-byte big-endian payload length followed by UTF-8 JSON.
 * The server answers every client message with a snapshot (one per executed
 * step for auto-run) or an error object {code, detail}.
 */

import { z } from "zod";

export const MAX_FRAME = 16 * 1024 * 1024;

/** Encode one message as a length-prefixed frame. */
export function encodeFrame(message: unknown): Buffer {
  const payload = Buffer.from(JSON.stringify(message), "utf-8");
  const header = Buffer.alloc(4);
  header.writeUInt32BE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

/**
 * Incremental frame decoder for a byte stream. Frames may arrive split or
 * coalesced across socket chunks; push() returns every message completed by
 * the chunk, in order.
 */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): unknown[] {
    this.buffer = Buffer.concat([this.buffer, chunk]);
    const messages: unknown[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const length = this.buffer.readUInt32BE(0);
      if (length > MAX_FRAME) {
        throw new Error(`frame of ${length} bytes exceeds limit`);
      }
      if (this.buffer.length < 4 + length) break;
      const payload = this.buffer.subarray(4, 4 + length).toString("utf-8");
      this.buffer = this.buffer.subarray(4 + length);
      messages.push(JSON.parse(payload));
    }
    return messages;
  }
}

const probs = z.array(z.number());

export const FusionSettingsSchema = z.object({
  method: z.enum(["MP", "PP", "ET", "EW"]),
  epsilon: z.number(),
  active: z.array(z.boolean()),
});

export const GridSchema = z.object({
  env: z.string(),
  size: z.number().int(),
  objects: z.array(z.tuple([z.number().int(), z.number().int(), z.string()])),
  walls: z.array(z.tuple([z.number().int(), z.number().int()])),
  agent: z.object({
    pos: z.tuple([z.number().int(), z.number().int()]),
    hp: z.number(),
    orb: z.boolean(),
  }),
  opponent: z
    .object({
      pos: z.tuple([z.number().int(), z.number().int()]),
      hp: z.number(),
      orb: z.boolean(),
    })
    .optional(),
});

export const SnapshotSchema = z.object({
  type: z.literal("snapshot"),
  session: z.string(),
  step: z.number().int(),
  done: z.boolean(),
  grid: GridSchema,
  fusion: FusionSettingsSchema,
  distributions: z.object({
    main: probs,
    subs: z.array(probs),
    fused: probs,
  }),
  entropies: z.object({
    main: z.number(),
    subs: z.array(z.number()),
  }),
  k_star: z.number().int().nullable(),
  action: z.number().int().nullable(),
  rewards: z.record(z.number()).nullable(),
});

export const ErrorSchema = z.object({
  type: z.literal("error"),
  code: z.string(),
  detail: z.string(),
});

export const ServerMessageSchema = z.discriminatedUnion("type", [
  SnapshotSchema,
  ErrorSchema,
]);

export type FusionSettings = z.infer<typeof FusionSettingsSchema>;
export type Grid = z.infer<typeof GridSchema>;
export type Snapshot = z.infer<typeof SnapshotSchema>;
export type ServerError = z.infer<typeof ErrorSchema>;
export type ServerMessage = z.infer<typeof ServerMessageSchema>;

/** Validate a decoded frame as a server message; throws on schema mismatch. */
export function parseServerMessage(raw: unknown): ServerMessage {
  return ServerMessageSchema.parse(raw);
}

export interface CreateSessionRequest {
  type: "create-session";
  env: string;
  seed: number;
  main: string;
  subs?: string[];
  flags?: string[];
  method?: FusionSettings["method"];
  epsilon?: number;
}

export interface SetFusionRequest {
  type: "set-fusion";
  session: string;
  method?: FusionSettings["method"];
  epsilon?: number;
  active?: boolean[];
}

export interface StepRequest {
  type: "step";
  session: string;
}

export interface AutoRunRequest {
  type: "auto-run";
  session: string;
  n: number;
  "interval-ms"?: number;
}

export interface PauseRequest {
  type: "pause";
  session: string;
}

export interface ResetRequest {
  type: "reset";
  session: string;
  seed?: number;
}

export type ClientMessage =
  | CreateSessionRequest
  | SetFusionRequest
  | StepRequest
  | AutoRunRequest
  | PauseRequest
  | ResetRequest;
