"""Canonical byte and JSON encodings shared across the package.

Everything that gets hashed or signed goes through these helpers so that
two implementations of the same structure always produce identical bytes.
"""
from __future__ import annotations

import json
import struct

DIGEST_LEN = 32


def lp(data: bytes) -> bytes:
    """Length-prefix a byte string with a 4-byte big-endian length."""
    if len(data) > 0xFFFFFFFF:
        raise ValueError("field too long for 32-bit length prefix")
    return struct.pack(">I", len(data)) + data


def read_lp(buf: bytes, offset: int) -> tuple[bytes, int]:
    """Read one length-prefixed field, returning (data, next_offset)."""
    if offset + 4 > len(buf):
        raise ValueError("truncated length prefix")
    (n,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    if offset + n > len(buf):
        raise ValueError("truncated field body")
    return buf[offset:offset + n], offset + n


def u64(value: int) -> bytes:
    """Fixed-width 8-byte big-endian unsigned integer."""
    if value < 0 or value > 0xFFFFFFFFFFFFFFFF:
        raise ValueError("value out of range for u64")
    return struct.pack(">Q", value)


def read_u64(buf: bytes, offset: int) -> tuple[int, int]:
    if offset + 8 > len(buf):
        raise ValueError("truncated u64")
    (v,) = struct.unpack_from(">Q", buf, offset)
    return v, offset + 8


def to_hex(data: bytes) -> str:
    return data.hex()


def from_hex(text: str) -> bytes:
    return bytes.fromhex(text)


def check_digest(value: bytes, name: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_LEN:
        raise ValueError(f"{name} must be {DIGEST_LEN} bytes")
    return bytes(value)


def canonical_json(obj) -> bytes:
    """Deterministic JSON bytes: sorted keys, no whitespace, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")
