"""Playground wire protocol server.

Framing is a 4-byte big-endian payload length followed by UTF-8 JSON. Client
messages: create-session, set-fusion, step, auto-run {n, interval-ms}, pause,
reset {seed}. The server answers every message with a snapshot (one per step
for auto-run) or an error {code, detail}.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import struct
import threading
import time

from .artifacts import load_policy
from .errors import (EpisodeFinished, MalformedMessage, PolicyFusionError,
                     SessionBusy, UnknownSession)
from .policy import policy_handle
from .session import SessionState, create_session, session_step, snapshot

MAX_FRAME = 16 * 1024 * 1024


def encode_frame(obj: dict) -> bytes:
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    return struct.pack(">I", len(payload)) + payload


def read_exact(sock, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock) -> dict | None:
    """None on orderly shutdown; MalformedMessage on bad framing/JSON."""
    header = read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise MalformedMessage(f"frame of {length} bytes exceeds limit")
    payload = read_exact(sock, length)
    if payload is None:
        raise MalformedMessage("connection closed mid-frame")
    try:
        message = json.loads(payload.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedMessage(f"bad JSON payload: {exc}")
    if not isinstance(message, dict):
        raise MalformedMessage("payload must be a JSON object")
    return message


_ERROR_CODES = {
    MalformedMessage: "malformed-message",
    UnknownSession: "unknown-session",
    SessionBusy: "session-busy",
    EpisodeFinished: "episode-finished",
}


def error_frame(exc: Exception) -> dict:
    code = _ERROR_CODES.get(type(exc), "internal-error")
    return {"type": "error", "code": code, "detail": str(exc)}


class PlaygroundServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, checkpoint_dir=None):
        super().__init__(address, _Handler)
        self.checkpoint_dir = checkpoint_dir
        self.sessions: dict[str, SessionState] = {}
        self.registry_lock = threading.Lock()

    def resolve_handle(self, name):
        path = name
        if self.checkpoint_dir is not None and not os.path.isabs(name):
            path = os.path.join(self.checkpoint_dir, name)
        params, _ = load_policy(path)
        return policy_handle(params)

    def lookup(self, session_id) -> SessionState:
        with self.registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session


class _Handler(socketserver.BaseRequestHandler):
    def _send(self, obj: dict) -> None:
        with self.send_lock:
            self.request.sendall(encode_frame(obj))

    def _create(self, message: dict) -> dict:
        for key in ("env", "seed", "main"):
            if key not in message:
                raise MalformedMessage(f"create-session needs {key!r}")
        server: PlaygroundServer = self.server
        main = server.resolve_handle(message["main"])
        subs = [server.resolve_handle(s) for s in message.get("subs", [])]
        session = create_session(
            message["env"], frozenset(message.get("flags", [])),
            int(message["seed"]), main, subs,
            method=message.get("method", "EW"),
            epsilon=float(message.get("epsilon", 0.0)))
        with server.registry_lock:
            server.sessions[session.session_id] = session
        snap = snapshot(session)
        session.step_log.append(snap)
        return snap

    def _auto_run(self, session: SessionState, message: dict) -> None:
        n = message.get("n")
        interval = message.get("interval-ms", 0)
        if not isinstance(n, int) or n < 1:
            raise MalformedMessage("auto-run needs integer n >= 1")
        if not isinstance(interval, (int, float)) or interval < 0:
            raise MalformedMessage("interval-ms must be >= 0")
        session.auto_running = True

        def pace():
            for _ in range(n):
                if session.done or not session.auto_running:
                    break
                try:
                    self._send(session_step(session, {"type": "step"}))
                except PolicyFusionError as exc:
                    self._send(error_frame(exc))
                    break
                if interval:
                    time.sleep(interval / 1000.0)
            session.auto_running = False

        thread = threading.Thread(target=pace, daemon=True)
        thread.start()
        thread.join()  # keep per-connection message ordering deterministic

    def handle(self):
        self.send_lock = threading.Lock()
        server: PlaygroundServer = self.server
        while True:
            try:
                message = read_frame(self.request)
            except MalformedMessage as exc:
                self._send(error_frame(exc))
                return
            except (ConnectionError, OSError):
                return
            if message is None:
                return
            try:
                kind = message.get("type")
                if kind == "create-session":
                    self._send(self._create(message))
                elif kind == "auto-run":
                    session = server.lookup(message.get("session"))
                    self._auto_run(session, message)
                elif kind in ("set-fusion", "step", "pause", "reset"):
                    session = server.lookup(message.get("session"))
                    self._send(session_step(session, message))
                else:
                    raise MalformedMessage(f"unknown message type {kind!r}")
            except PolicyFusionError as exc:
                self._send(error_frame(exc))
            except (ConnectionError, OSError):
                return


def serve(host="127.0.0.1", port=7333, checkpoint_dir=None):
    """Blocking server entry point; prints the bound address."""
    server = PlaygroundServer((host, port), checkpoint_dir)
    bound = server.server_address
    print(f"playground server listening on {bound[0]}:{bound[1]}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
