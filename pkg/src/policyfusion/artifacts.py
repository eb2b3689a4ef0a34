"""Checkpoint and report persistence: versioned JSON with checksums and
atomic write-rename so a killed run never leaves a half-written artifact."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import CorruptFile, VersionMismatch
from .policy import PolicyParams, ValueParams

POLICY_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
SPEC_FORMAT_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-artifact-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _payload_checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_document(path, payload: dict, format_version: int) -> None:
    doc = {"format_version": format_version, "payload": payload,
           "checksum": _payload_checksum(payload)}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def read_document(path, format_version: int) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: unparseable ({exc})")
    if not isinstance(doc, dict) or "payload" not in doc:
        raise CorruptFile(f"{path}: missing payload")
    if doc.get("format_version") != format_version:
        raise VersionMismatch(
            f"{path}: format {doc.get('format_version')!r}, "
            f"expected {format_version}")
    if doc.get("checksum") != _payload_checksum(doc["payload"]):
        raise CorruptFile(f"{path}: checksum mismatch")
    return doc["payload"]


def save_policy(path, params: PolicyParams, vparams: ValueParams | None = None,
                config_echo=None, master_seed=None, env_fingerprint=None):
    payload = {
        "descriptor": params.descriptor,
        "n_actions": params.n_actions,
        "theta": params.theta.tolist(),
        "value_theta": vparams.theta.tolist() if vparams is not None else None,
        "config": config_echo or {},
        "master_seed": master_seed,
        "env_fingerprint": env_fingerprint,
    }
    write_document(path, payload, POLICY_FORMAT_VERSION)


def load_policy(path):
    """Returns (PolicyParams, ValueParams or None); round-trips bit-exactly."""
    payload = read_document(path, POLICY_FORMAT_VERSION)
    desc = payload["descriptor"]
    params = PolicyParams(desc, np.array(payload["theta"], dtype=np.float64))
    vparams = None
    if payload.get("value_theta") is not None:
        vparams = ValueParams(desc, np.array(payload["value_theta"],
                                             dtype=np.float64))
    return params, vparams


def checkpoint_roundtrip(params: PolicyParams, path) -> PolicyParams:
    """Save-then-load; the returned parameters are bit-identical."""
    save_policy(path, params)
    loaded, _ = load_policy(path)
    return loaded
