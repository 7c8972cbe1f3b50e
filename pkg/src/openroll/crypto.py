"""Key hierarchy, field encryption, and signing for registry records.

Voter identifiers are pseudorandom values derived from the official's
identity key, per-field keys hang off a key-derivation key with an
unambiguous (voter, column, epoch) context, and field encryption is
key-committing: a ciphertext opens under exactly one key, so handing a
verifier the wrong key is always detectable rather than silently
yielding garbage.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import os
import stat
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric import ed25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .wire import from_hex, lp, read_lp, to_hex, u64

KEY_LEN = 32
NONCE_LEN = 12
GCM_TAG_LEN = 16
COMMIT_PREFIX = b"\x02"


class EmptyBaseId(ValueError):
    """Base-system identifier must be non-empty."""


class UnknownColumn(ValueError):
    """Column label is not part of the active schema."""


class PlaintextTooLong(ValueError):
    """Plaintext exceeds the column's pad length."""


class KeyMismatch(ValueError):
    """Ciphertext commits to a different key than the one supplied."""


class Corrupt(ValueError):
    """Ciphertext failed authentication or carried malformed padding."""


@dataclass
class MasterKeys:
    """Official-side secrets; never serialized into public artifacts."""
    k_id: bytes
    k_kdf: bytes
    signing_key: ed25519.Ed25519PrivateKey

    @classmethod
    def generate(cls) -> "MasterKeys":
        return cls(k_id=os.urandom(KEY_LEN), k_kdf=os.urandom(KEY_LEN),
                   signing_key=ed25519.Ed25519PrivateKey.generate())

    @property
    def public_key(self) -> bytes:
        return self.signing_key.public_key().public_bytes_raw()

    def save(self, path: str) -> None:
        payload = {
            "k_id": to_hex(self.k_id),
            "k_kdf": to_hex(self.k_kdf),
            "signing_key": to_hex(self.signing_key.private_bytes_raw()),
            "public_key": to_hex(self.public_key),
        }
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC,
                     stat.S_IRUSR | stat.S_IWUSR)
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "MasterKeys":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            k_id=from_hex(payload["k_id"]),
            k_kdf=from_hex(payload["k_kdf"]),
            signing_key=ed25519.Ed25519PrivateKey.from_private_bytes(
                from_hex(payload["signing_key"])),
        )


def derive_voter_id(master: MasterKeys, base_id: str) -> bytes:
    """Pseudorandom 32-byte registry identifier for a base-system id."""
    if not base_id:
        raise EmptyBaseId("base-system identifier is empty")
    return hmac.new(master.k_id, base_id.encode("utf-8"),
                    hashlib.sha256).digest()


def derive_field_key(master: MasterKeys, voter_id: bytes, column_label: str,
                     epoch: int, schema=None) -> bytes:
    """Per-(voter, column, epoch) encryption key.

    The context is length-prefixed so no two distinct (voter, column)
    pairs can collide by concatenation, and the epoch is a fixed-width
    field so it can never bleed into the column label.
    """
    if schema is not None and not schema.has_column(column_label):
        raise UnknownColumn(f"column {column_label!r} not in schema")
    context = lp(voter_id) + lp(column_label.encode("utf-8")) + u64(epoch)
    return hmac.new(master.k_kdf, context, hashlib.sha256).digest()


@dataclass(frozen=True)
class FieldCiphertext:
    """Padded, authenticated, key-committing field encryption."""
    nonce: bytes
    ciphertext: bytes
    commit: bytes

    def to_bytes(self) -> bytes:
        return lp(self.nonce) + lp(self.ciphertext) + lp(self.commit)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FieldCiphertext":
        nonce, off = read_lp(buf, 0)
        ciphertext, off = read_lp(buf, off)
        commit, off = read_lp(buf, off)
        return cls(nonce, ciphertext, commit)

    def to_json(self) -> dict:
        return {"nonce": to_hex(self.nonce), "ct": to_hex(self.ciphertext),
                "commit": to_hex(self.commit)}

    @classmethod
    def from_json(cls, obj: dict) -> "FieldCiphertext":
        return cls(from_hex(obj["nonce"]), from_hex(obj["ct"]),
                   from_hex(obj["commit"]))


def _key_commitment(key: bytes, nonce: bytes) -> bytes:
    return hashlib.sha256(COMMIT_PREFIX + key + nonce).digest()


def encrypt_field(key: bytes, plaintext: bytes, pad_len: int) -> FieldCiphertext:
    """Encrypt one field, padded so ciphertext length depends only on
    pad_len, with a tag committing the ciphertext to this key."""
    if len(key) != KEY_LEN:
        raise ValueError("field key must be 32 bytes")
    if len(plaintext) > pad_len:
        raise PlaintextTooLong(
            f"plaintext of {len(plaintext)} bytes exceeds pad length {pad_len}")
    # 0x80 then zeros; the block is one byte past pad_len so a plaintext
    # of exactly pad_len bytes still fits
    padded = plaintext + b"\x80" + b"\x00" * (pad_len - len(plaintext))
    nonce = os.urandom(NONCE_LEN)
    ciphertext = AESGCM(key).encrypt(nonce, padded, None)
    return FieldCiphertext(nonce, ciphertext, _key_commitment(key, nonce))


def decrypt_field(key: bytes, box: FieldCiphertext) -> bytes:
    """Invert encrypt_field; distinguishes wrong key from tampering."""
    if len(key) != KEY_LEN:
        raise ValueError("field key must be 32 bytes")
    if not hmac.compare_digest(_key_commitment(key, box.nonce), box.commit):
        raise KeyMismatch("ciphertext does not commit to this key")
    try:
        padded = AESGCM(key).decrypt(box.nonce, box.ciphertext, None)
    except InvalidTag as exc:
        raise Corrupt("authentication tag rejected") from exc
    trimmed = padded.rstrip(b"\x00")
    if not trimmed or trimmed[-1] != 0x80:
        raise Corrupt("padding marker missing")
    return trimmed[:-1]


def ciphertext_len(pad_len: int) -> int:
    """Serialized ciphertext body length for a column's pad setting."""
    return pad_len + 1 + GCM_TAG_LEN


def sign_bytes(master: MasterKeys, data: bytes) -> bytes:
    return master.signing_key.sign(data)


def verify_signature(public_key: bytes, data: bytes, signature: bytes) -> bool:
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(
            signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False
