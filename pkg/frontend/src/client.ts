/**
 * SessionClient: a thin, promise-based client for the playground server.
 *
 * Keeps at most one control request in flight; responses are consumed in
 * arrival order, which the server guarantees matches request order on a
 * single connection. auto-run yields one snapshot per executed step.
 */

import * as net from "node:net";

import {
  AutoRunRequest,
  ClientMessage,
  FrameDecoder,
  ServerMessage,
  Snapshot,
  encodeFrame,
  parseServerMessage,
} from "./protocol.js";

const DEFAULT_TIMEOUT_MS = 30_000;

export class ProtocolError extends Error {
  constructor(
    public readonly code: string,
    detail: string,
  ) {
    super(`${code}: ${detail}`);
    this.name = "ProtocolError";
  }
}

export class SessionClient {
  private socket: net.Socket | null = null;
  private readonly decoder = new FrameDecoder();
  private readonly inbox: ServerMessage[] = [];
  private waiter: (() => void) | null = null;
  private closed = false;
  private inFlight = false;

  /** Latest snapshot seen on this connection, if any. */
  latest: Snapshot | null = null;

  connect(host: string, port: number): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port }, () => resolve());
      socket.on("data", (chunk) => {
        for (const raw of this.decoder.push(chunk)) {
          const message = parseServerMessage(raw);
          if (message.type === "snapshot") this.latest = message;
          this.inbox.push(message);
          this.waiter?.();
        }
      });
      socket.on("error", (err) => {
        this.closed = true;
        this.waiter?.();
        reject(err);
      });
      socket.on("close", () => {
        this.closed = true;
        this.waiter?.();
      });
      this.socket = socket;
    });
  }

  close(): void {
    this.closed = true;
    this.socket?.end();
    this.socket = null;
  }

  private send(message: ClientMessage): void {
    if (!this.socket || this.closed) {
      throw new Error("client is not connected");
    }
    this.socket.write(encodeFrame(message));
  }

  private async nextMessage(timeoutMs: number): Promise<ServerMessage> {
    const deadline = Date.now() + timeoutMs;
    while (this.inbox.length === 0) {
      if (this.closed) throw new Error("connection closed by server");
      if (Date.now() > deadline) throw new Error("timed out waiting for server");
      await new Promise<void>((resolve) => {
        this.waiter = resolve;
        setTimeout(resolve, 50);
      });
      this.waiter = null;
    }
    return this.inbox.shift()!;
  }

  /**
   * Send one control message and await its single response. Errors from the
   * server surface as ProtocolError with the server's error code.
   */
  async request(
    message: Exclude<ClientMessage, AutoRunRequest>,
    timeoutMs: number = DEFAULT_TIMEOUT_MS,
  ): Promise<Snapshot> {
    if (this.inFlight) throw new Error("a control request is already in flight");
    this.inFlight = true;
    try {
      this.send(message);
      const reply = await this.nextMessage(timeoutMs);
      if (reply.type === "error") {
        throw new ProtocolError(reply.code, reply.detail);
      }
      return reply;
    } finally {
      this.inFlight = false;
    }
  }

  /**
   * Run up to n steps server-side, invoking onSnapshot per step. The server
   * sends one snapshot per executed step and stops early when the episode
   * ends, so the stream terminates on count or on a done snapshot.
   */
  async autoRun(
    session: string,
    n: number,
    intervalMs = 0,
    onSnapshot?: (snap: Snapshot) => void,
    timeoutMs: number = DEFAULT_TIMEOUT_MS,
  ): Promise<Snapshot[]> {
    if (this.inFlight) throw new Error("a control request is already in flight");
    if (this.latest?.done) {
      throw new Error("episode already finished; reset before auto-run");
    }
    this.inFlight = true;
    try {
      this.send({ type: "auto-run", session, n, "interval-ms": intervalMs });
      const snapshots: Snapshot[] = [];
      while (snapshots.length < n) {
        const reply = await this.nextMessage(timeoutMs);
        if (reply.type === "error") {
          throw new ProtocolError(reply.code, reply.detail);
        }
        snapshots.push(reply);
        onSnapshot?.(reply);
        if (reply.done) break;
      }
      return snapshots;
    } finally {
      this.inFlight = false;
    }
  }
}
