"""Per-voter update records: the unit stored in the log and the map.

A record carries one slot per schema column (plaintext for publicly
readable cells, padded committing ciphertext otherwise, optionally
paired with a linkage encoding), plus metadata: timestamp, target epoch,
a per-voter sequence number, the operation kind, and the handling
official's signature.  The canonical byte form is what gets hashed,
signed, and stored; JSON is a rendering of the same content.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

from .crypto import (
    FieldCiphertext,
    MasterKeys,
    decrypt_field,
    derive_field_key,
    encrypt_field,
    sign_bytes,
    verify_signature,
)
from .schema import ColumnSchema, PublicPredicate, SchemaMismatch
from .wire import from_hex, lp, read_lp, read_u64, to_hex, u64

RECORD_VERSION = 1
OPCODES = ("add", "update", "deregister")

_SLOT_PLAIN = 0
_SLOT_SEALED = 1
_SLOT_SEALED_ENCODED = 2


@dataclass(frozen=True)
class RecordMeta:
    timestamp: int
    epoch: int
    sequence: int
    opcode: str
    signer_id: str
    signature: bytes
    jurisdiction: bytes = b""

    def __post_init__(self):
        if self.opcode not in OPCODES:
            raise ValueError(f"unknown opcode {self.opcode!r}")


@dataclass(frozen=True)
class FieldSlot:
    plaintext: bytes | None = None
    box: FieldCiphertext | None = None
    encoding: bytes | None = None

    def __post_init__(self):
        if (self.plaintext is None) == (self.box is None):
            raise ValueError("slot must be exactly one of plaintext or sealed")

    @property
    def sealed(self) -> bool:
        return self.box is not None


@dataclass(frozen=True)
class UpdateRecord:
    meta: RecordMeta
    slots: tuple[FieldSlot, ...]

    def _body(self, signature: bytes) -> bytes:
        out = bytes([RECORD_VERSION])
        out += u64(self.meta.timestamp) + u64(self.meta.epoch)
        out += u64(self.meta.sequence)
        out += lp(self.meta.opcode.encode()) + lp(self.meta.signer_id.encode())
        out += lp(self.meta.jurisdiction) + lp(signature)
        out += u64(len(self.slots))
        for slot in self.slots:
            if not slot.sealed:
                out += bytes([_SLOT_PLAIN]) + lp(slot.plaintext)
            elif slot.encoding is None:
                out += bytes([_SLOT_SEALED]) + lp(slot.box.to_bytes())
            else:
                out += bytes([_SLOT_SEALED_ENCODED]) + lp(slot.box.to_bytes())
                out += lp(slot.encoding)
        return out

    def to_bytes(self) -> bytes:
        return self._body(self.meta.signature)

    def signing_bytes(self, voter_id: bytes) -> bytes:
        return lp(voter_id) + self._body(b"")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "UpdateRecord":
        if not buf or buf[0] != RECORD_VERSION:
            raise ValueError("unsupported record version")
        off = 1
        timestamp, off = read_u64(buf, off)
        epoch, off = read_u64(buf, off)
        sequence, off = read_u64(buf, off)
        opcode, off = read_lp(buf, off)
        signer_id, off = read_lp(buf, off)
        jurisdiction, off = read_lp(buf, off)
        signature, off = read_lp(buf, off)
        n_slots, off = read_u64(buf, off)
        slots = []
        for _ in range(n_slots):
            if off >= len(buf):
                raise ValueError("truncated slot list")
            tag = buf[off]
            off += 1
            if tag == _SLOT_PLAIN:
                plaintext, off = read_lp(buf, off)
                slots.append(FieldSlot(plaintext=plaintext))
            elif tag in (_SLOT_SEALED, _SLOT_SEALED_ENCODED):
                box_bytes, off = read_lp(buf, off)
                encoding = None
                if tag == _SLOT_SEALED_ENCODED:
                    encoding, off = read_lp(buf, off)
                slots.append(FieldSlot(box=FieldCiphertext.from_bytes(box_bytes),
                                       encoding=encoding))
            else:
                raise ValueError(f"unknown slot tag {tag}")
        if off != len(buf):
            raise ValueError("trailing bytes after record")
        meta = RecordMeta(timestamp, epoch, sequence, opcode.decode(),
                          signer_id.decode(), signature, jurisdiction)
        return cls(meta, tuple(slots))

    def to_json(self) -> dict:
        slots = []
        for slot in self.slots:
            if not slot.sealed:
                slots.append({"kind": "plaintext",
                              "value": to_hex(slot.plaintext)})
            else:
                entry = {"kind": "sealed", "box": slot.box.to_json()}
                if slot.encoding is not None:
                    entry["encoding"] = to_hex(slot.encoding)
                slots.append(entry)
        return {
            "timestamp": self.meta.timestamp,
            "epoch": self.meta.epoch,
            "sequence": self.meta.sequence,
            "opcode": self.meta.opcode,
            "signer_id": self.meta.signer_id,
            "signature": to_hex(self.meta.signature),
            "jurisdiction": to_hex(self.meta.jurisdiction),
            "slots": slots,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UpdateRecord":
        slots = []
        for entry in obj["slots"]:
            if entry["kind"] == "plaintext":
                slots.append(FieldSlot(plaintext=from_hex(entry["value"])))
            else:
                encoding = (from_hex(entry["encoding"])
                            if "encoding" in entry else None)
                slots.append(FieldSlot(box=FieldCiphertext.from_json(entry["box"]),
                                       encoding=encoding))
        meta = RecordMeta(int(obj["timestamp"]), int(obj["epoch"]),
                          int(obj["sequence"]), obj["opcode"],
                          obj["signer_id"], from_hex(obj["signature"]),
                          from_hex(obj["jurisdiction"]))
        return cls(meta, tuple(slots))


def build_record(master: MasterKeys, voter_id: bytes, values,
                 epoch: int, sequence: int, opcode: str,
                 schema: ColumnSchema, predicate: PublicPredicate,
                 signer_id: str = "official", jurisdiction: bytes = b"",
                 encoder=None, timestamp: int | None = None) -> UpdateRecord:
    """Assemble and sign a record from plaintext column values.

    values is either a column-ordered list or a label-keyed mapping.
    encoder, when given, is a callable (label, value) -> packed bit
    vector attached alongside each sealed slot for cross-registry
    linkage.
    """
    if isinstance(values, dict):
        values = schema.row_from_mapping(values)
    schema.check_row(values)
    if timestamp is None:
        timestamp = int(time.time())
    voter_hex = to_hex(voter_id)
    slots = []
    for spec, value in zip(schema.columns, values):
        raw = value.encode("utf-8")
        if predicate.is_public(voter_hex, spec.label):
            slots.append(FieldSlot(plaintext=raw))
            continue
        key = derive_field_key(master, voter_id, spec.label, epoch)
        box = encrypt_field(key, raw, spec.pad_len)
        encoding = encoder(spec.label, value) if encoder is not None else None
        slots.append(FieldSlot(box=box, encoding=encoding))
    meta = RecordMeta(timestamp, epoch, sequence, opcode, signer_id, b"",
                      jurisdiction)
    unsigned = UpdateRecord(meta, tuple(slots))
    signature = sign_bytes(master, unsigned.signing_bytes(voter_id))
    return UpdateRecord(RecordMeta(timestamp, epoch, sequence, opcode,
                                   signer_id, signature, jurisdiction),
                        tuple(slots))


def verify_record_signature(public_key: bytes, voter_id: bytes,
                            record: UpdateRecord) -> bool:
    return verify_signature(public_key, record.signing_bytes(voter_id),
                            record.meta.signature)


def open_slot(record: UpdateRecord, column_index: int,
              key: bytes | None) -> bytes:
    """Plaintext of one slot; sealed slots need the matching field key."""
    slot = record.slots[column_index]
    if not slot.sealed:
        return slot.plaintext
    if key is None:
        raise ValueError("sealed slot needs a field key")
    return decrypt_field(key, slot.box)


def open_record(master: MasterKeys, voter_id: bytes, record: UpdateRecord,
                schema: ColumnSchema) -> dict[str, str]:
    """Official-side decryption of a full record back to column values."""
    if len(record.slots) != schema.n_columns:
        raise SchemaMismatch("record shape does not match schema")
    values = {}
    for i, spec in enumerate(schema.columns):
        slot = record.slots[i]
        if slot.sealed:
            key = derive_field_key(master, voter_id, spec.label,
                                   record.meta.epoch)
            values[spec.label] = open_slot(record, i, key).decode("utf-8")
        else:
            values[spec.label] = slot.plaintext.decode("utf-8")
    return values


def mutation_leaf(voter_id: bytes, record: UpdateRecord) -> bytes:
    """Canonical log-leaf bytes for one (voter, record) mutation."""
    return lp(voter_id) + lp(record.to_bytes())


def parse_mutation(leaf: bytes) -> tuple[bytes, UpdateRecord]:
    voter_id, off = read_lp(leaf, 0)
    record_bytes, off = read_lp(leaf, off)
    if off != len(leaf):
        raise ValueError("trailing bytes after mutation")
    return voter_id, UpdateRecord.from_bytes(record_bytes)
