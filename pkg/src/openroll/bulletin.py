"""Signed per-epoch commitments and the append-only bulletin journal.

The journal is one JSON object per line, epoch 0 upward with no gaps.
Every entry pairs the epoch's signed snapshot commitment with the proof
that the mutation log only grew since the previous epoch.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .crypto import MasterKeys, sign_bytes, verify_signature
from .merkle import ConsistencyProof
from .wire import from_hex, lp, to_hex, u64


class GapDetected(ValueError):
    """Bulletin journal is not a gap-free epoch sequence from zero."""


@dataclass(frozen=True)
class SnapshotCommitment:
    epoch: int
    map_root: bytes
    log_root: bytes
    log_size: int
    signature: bytes

    def signing_bytes(self) -> bytes:
        return (b"snapshot-commitment" + u64(self.epoch) + lp(self.map_root) +
                lp(self.log_root) + u64(self.log_size))

    def verify(self, public_key: bytes) -> bool:
        return verify_signature(public_key, self.signing_bytes(),
                                self.signature)

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "map_root": to_hex(self.map_root),
            "log_root": to_hex(self.log_root),
            "log_size": self.log_size,
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SnapshotCommitment":
        return cls(int(obj["epoch"]), from_hex(obj["map_root"]),
                   from_hex(obj["log_root"]), int(obj["log_size"]),
                   from_hex(obj["signature"]))


def make_commitment(master: MasterKeys, epoch: int, map_root: bytes,
                    log_root: bytes, log_size: int) -> SnapshotCommitment:
    unsigned = SnapshotCommitment(epoch, map_root, log_root, log_size, b"")
    signature = sign_bytes(master, unsigned.signing_bytes())
    return SnapshotCommitment(epoch, map_root, log_root, log_size, signature)


@dataclass(frozen=True)
class BulletinEntry:
    commitment: SnapshotCommitment
    update_proof: ConsistencyProof | None  # None only at the genesis epoch

    def to_json(self) -> dict:
        return {
            "commitment": self.commitment.to_json(),
            "update_proof": (self.update_proof.to_json()
                             if self.update_proof is not None else None),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BulletinEntry":
        proof = obj.get("update_proof")
        return cls(SnapshotCommitment.from_json(obj["commitment"]),
                   ConsistencyProof.from_json(proof) if proof else None)


class Bulletin:
    """Append-only journal of bulletin entries backed by one JSONL file."""

    def __init__(self, path: str):
        self.path = path

    def read_all(self) -> list[BulletinEntry]:
        if not os.path.exists(self.path):
            return []
        entries: list[BulletinEntry] = []
        with open(self.path) as fh:
            for line_no, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = BulletinEntry.from_json(json.loads(line))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise GapDetected(
                        f"malformed journal line {line_no}") from exc
                if entry.commitment.epoch != len(entries):
                    raise GapDetected(
                        f"journal line {line_no} has epoch "
                        f"{entry.commitment.epoch}, expected {len(entries)}")
                entries.append(entry)
        return entries

    def last(self) -> BulletinEntry | None:
        entries = self.read_all()
        return entries[-1] if entries else None

    def append(self, entry: BulletinEntry) -> None:
        existing = self.read_all()
        if entry.commitment.epoch != len(existing):
            raise GapDetected(
                f"cannot publish epoch {entry.commitment.epoch} after "
                f"epoch {len(existing) - 1}")
        with open(self.path, "a") as fh:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def load_bulletin_file(path: str) -> list[BulletinEntry]:
    """Read and gap-check a bulletin journal copy (e.g. a voter's)."""
    return Bulletin(path).read_all()


def verify_bulletin(entries: list[BulletinEntry],
                    public_key: bytes) -> tuple[bool, str | None]:
    """Every commitment signed and epochs contiguous from zero."""
    for i, entry in enumerate(entries):
        if entry.commitment.epoch != i:
            return False, f"epoch {entry.commitment.epoch} at position {i}"
        if not entry.commitment.verify(public_key):
            return False, f"commitment for epoch {i} has a bad signature"
    return True, None
