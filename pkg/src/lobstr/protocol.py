"""Little-endian binary frames for the streaming service.

Request (153 bytes)::

    b"LBST" | version u8 | frame id u32 | 36 x f32
    (per tracker position 3 + 6-DoF 6; head, left hand, right hand, pelvis)

Response (215 bytes)::

    frame id u32 | status u8 | 48 x f32 pose | 4 x f32 contact probs | 2 x u8 contacts
"""

from __future__ import annotations

import struct

import numpy as np

REQUEST_MAGIC = b"LBST"
PROTOCOL_VERSION = 1

STATUS_OK = 0
STATUS_WARMUP = 1
STATUS_HELD = 2
STATUS_ERROR = 255
STATUS_NAMES = {STATUS_OK: "ok", STATUS_WARMUP: "warm-up", STATUS_HELD: "held",
                STATUS_ERROR: "error"}
STATUS_CODES = {v: k for k, v in STATUS_NAMES.items()}

REQUEST = struct.Struct("<4sBI36f")
RESPONSE = struct.Struct("<IB48f4f2B")


class ProtocolError(ValueError):
    pass


def encode_request(frame_id: int, vector, version=PROTOCOL_VERSION, magic=REQUEST_MAGIC) -> bytes:
    v = np.asarray(vector, dtype=np.float32).reshape(36)
    return REQUEST.pack(magic, version, frame_id, *v.tolist())


def decode_request(buf: bytes):
    """Returns ``(frame_id, float32 vector)``; raises :class:`ProtocolError`."""
    if len(buf) != REQUEST.size:
        raise ProtocolError(f"request must be {REQUEST.size} bytes, got {len(buf)}")
    magic, version, frame_id, *vals = REQUEST.unpack(buf)
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    return frame_id, np.array(vals, dtype=np.float32)


def encode_response(frame_id: int, status: str, pose=None, probs=None, contacts=(False, False)) -> bytes:
    pose = np.zeros(48, np.float32) if pose is None else np.asarray(pose, np.float32).reshape(48)
    probs = np.zeros(4, np.float32) if probs is None else np.asarray(probs, np.float32).reshape(4)
    return RESPONSE.pack(frame_id, STATUS_CODES[status], *pose.tolist(), *probs.tolist(),
                         *(int(bool(c)) for c in contacts))


def decode_response(buf: bytes) -> dict:
    if len(buf) != RESPONSE.size:
        raise ProtocolError(f"response must be {RESPONSE.size} bytes, got {len(buf)}")
    vals = RESPONSE.unpack(buf)
    return {
        "frame": vals[0],
        "status": STATUS_NAMES.get(vals[1], str(vals[1])),
        "pose": np.array(vals[2:50], dtype=np.float32),
        "contact_prob": np.array(vals[50:54], dtype=np.float32),
        "contact": (bool(vals[54]), bool(vals[55])),
    }


def read_exact(sock, n: int) -> bytes:
    """Read ``n`` bytes; returns fewer only if the peer closed the connection."""
    chunks, got = [], 0
    while got < n:
        b = sock.recv(n - got)
        if not b:
            break
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)
