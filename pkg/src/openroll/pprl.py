"""Privacy-preserving record linkage over keyed Bloom-filter encodings.

Field values normalize to uppercase alphanumerics, split into q-grams,
and each gram sets k keyed-hash positions in an m-bit vector.  Two
encodings compare by Dice similarity, and a pair of registries match by
exhaustive pairwise comparison with a mean over the linkage fields.
The encodings are deterministic under a shared seed, so a registry that
stores them beside its ciphertexts lets anyone with the field keys check
that the stored encoding really is the encoding of the stored value.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

import numpy as np

from .wire import from_hex, to_hex

DEFAULT_M = 1024
DEFAULT_K = 2
DEFAULT_Q = 2
DEFAULT_THRESHOLD = 0.8
DEFAULT_LINKAGE_FIELDS = ("name", "dob", "address")


class ParamMismatch(ValueError):
    """Encodings built under different parameters cannot be compared."""


@dataclass(frozen=True)
class EncodingParams:
    m: int = DEFAULT_M
    k: int = DEFAULT_K
    q: int = DEFAULT_Q
    seed: bytes = b""
    linkage_fields: tuple[str, ...] = DEFAULT_LINKAGE_FIELDS

    def __post_init__(self):
        if self.m <= 0 or self.m % 8 != 0:
            raise ValueError("m must be a positive multiple of 8")
        if self.k <= 0 or self.q <= 0:
            raise ValueError("k and q must be positive")
        if not self.seed:
            raise ValueError("a shared keyed-hash seed is required")

    def to_json(self) -> dict:
        return {"m": self.m, "k": self.k, "q": self.q,
                "seed": to_hex(self.seed),
                "linkage_fields": list(self.linkage_fields)}

    @classmethod
    def from_json(cls, obj: dict) -> "EncodingParams":
        return cls(int(obj["m"]), int(obj["k"]), int(obj["q"]),
                   from_hex(obj["seed"]),
                   tuple(obj.get("linkage_fields", DEFAULT_LINKAGE_FIELDS)))


def normalize(text: str) -> str:
    """Uppercase and strip everything except letters and digits."""
    return "".join(ch for ch in text.upper() if ch.isalnum())


def qgrams(normalized: str, q: int) -> set[str]:
    if not normalized:
        return set()
    if len(normalized) < q:
        return {normalized}
    return {normalized[i:i + q] for i in range(len(normalized) - q + 1)}


def encode_value(value: str, params: EncodingParams) -> bytes:
    """m-bit keyed Bloom encoding of one field value, packed little-endian
    per byte.  An empty normalized value encodes to the all-zero vector."""
    bits = bytearray(params.m // 8)
    for gram in qgrams(normalize(value), params.q):
        data = gram.encode("utf-8")
        for i in range(params.k):
            digest = hmac.new(params.seed, data + bytes([i]),
                              hashlib.sha256).digest()
            # reduce the whole digest so non-power-of-two m stays unbiased
            pos = int.from_bytes(digest, "big") % params.m
            bits[pos // 8] |= 1 << (pos % 8)
    return bytes(bits)


def is_blank(encoding: bytes) -> bool:
    return not any(encoding)


def popcount(encoding: bytes) -> int:
    return int.from_bytes(encoding, "big").bit_count()


def dice_similarity(a: bytes, b: bytes, params: EncodingParams) -> float:
    """Dice coefficient over set bits; two blank encodings count as equal."""
    if len(a) != params.m // 8 or len(b) != params.m // 8:
        raise ParamMismatch("encoding length does not match parameters")
    pa, pb = popcount(a), popcount(b)
    if pa + pb == 0:
        return 1.0
    inter = (int.from_bytes(a, "big") & int.from_bytes(b, "big")).bit_count()
    return 2.0 * inter / (pa + pb)


def verify_encoding(value: str, encoding: bytes,
                    params: EncodingParams) -> bool:
    """Re-encode the plaintext and require bitwise equality."""
    return encode_value(value, params) == encoding


def make_encoder(params: EncodingParams):
    """Column encoder attached to sealed record slots at build time."""
    def encoder(label: str, value: str) -> bytes:
        return encode_value(value, params)
    return encoder


@dataclass(frozen=True)
class MatchCandidate:
    left_id: str
    right_id: str
    score: float
    field_scores: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"left_id": self.left_id, "right_id": self.right_id,
                "score": self.score, "field_scores": self.field_scores}


def _field_matrix(rows: list[dict], label: str, width: int) -> np.ndarray:
    """(n, width/8) uint64 matrix of one column's encodings."""
    blank = b"\x00" * width
    out = np.zeros((len(rows), width), dtype=np.uint8)
    for i, encodings in enumerate(rows):
        enc = encodings.get(label, blank)
        if len(enc) != width:
            raise ParamMismatch(
                f"encoding for {label!r} has {len(enc)} bytes, expected {width}")
        out[i] = np.frombuffer(enc, dtype=np.uint8)
    return out.view(np.uint64)


def score_pairs(left: list[tuple[str, dict]], right: list[tuple[str, dict]],
                params: EncodingParams, chunk: int = 64) -> np.ndarray:
    """Mean per-field Dice score for every (left, right) pair."""
    width = params.m // 8
    left_rows = [enc for _, enc in left]
    right_rows = [enc for _, enc in right]
    total = np.zeros((len(left), len(right)), dtype=np.float32)
    for label in params.linkage_fields:
        a = _field_matrix(left_rows, label, width)
        b = _field_matrix(right_rows, label, width)
        pa = np.bitwise_count(a).sum(axis=1, dtype=np.int32)
        pb = np.bitwise_count(b).sum(axis=1, dtype=np.int32)
        denom = pa[:, None] + pb[None, :]
        # chunk the left side so the (chunk, n_right, words) AND stays small
        for start in range(0, len(left), chunk):
            stop = min(start + chunk, len(left))
            inter = np.bitwise_count(a[start:stop, None, :] & b[None, :, :]) \
                .sum(axis=2, dtype=np.int32)
            block = np.where(denom[start:stop] == 0, 1.0,
                             2.0 * inter / np.maximum(denom[start:stop], 1))
            total[start:stop] += block.astype(np.float32)
    return total / len(params.linkage_fields)


def match_registries(left: list[tuple[str, dict]],
                     right: list[tuple[str, dict]],
                     params: EncodingParams,
                     threshold: float = DEFAULT_THRESHOLD
                     ) -> list[MatchCandidate]:
    """Exhaustive pairwise linkage between two encoded registries.

    left/right rows are (voter_id, {column: encoding bytes}).  Returns
    every pair whose mean linkage-field Dice score clears the threshold,
    best first.
    """
    if not left or not right:
        return []
    scores = score_pairs(left, right, params)
    hits = np.argwhere(scores >= threshold)
    candidates = []
    for i, j in hits:
        left_id, left_enc = left[i]
        right_id, right_enc = right[j]
        field_scores = {}
        for label in params.linkage_fields:
            blank = b"\x00" * (params.m // 8)
            field_scores[label] = dice_similarity(
                left_enc.get(label, blank), right_enc.get(label, blank),
                params)
        candidates.append(MatchCandidate(left_id, right_id,
                                         float(scores[i, j]), field_scores))
    candidates.sort(key=lambda c: (-c.score, c.left_id, c.right_id))
    return candidates


def record_encodings(record, schema, params: EncodingParams) -> dict:
    """Linkage-field encodings for one committed record.

    Sealed slots carry their encoding in the record itself; public slots
    encode the stored plaintext on the fly.  A slot without an encoding
    falls back to the blank vector, same as an empty value.
    """
    out = {}
    for idx, spec in enumerate(schema.columns):
        if spec.label not in params.linkage_fields:
            continue
        slot = record.slots[idx]
        if slot.sealed:
            out[spec.label] = (slot.encoding if slot.encoding is not None
                               else b"\x00" * (params.m // 8))
        else:
            out[spec.label] = encode_value(slot.plaintext.decode("utf-8"),
                                           params)
    return out


def encode_registry(registry, params: EncodingParams) -> list[tuple[str, dict]]:
    """Latest-record encodings for every voter with a committed record.

    The registry must have been built with the same linkage parameters;
    a registry that never stored encodings cannot be linked after the
    fact without re-encrypting every record.
    """
    from .records import UpdateRecord
    if registry.encoding_params is None:
        raise ParamMismatch("registry stores no similarity encodings")
    if EncodingParams.from_json(registry.encoding_params) != params:
        raise ParamMismatch("registry was encoded under different "
                            "parameters")
    rows = []
    for voter_id in sorted(registry.map.keys()):
        record_bytes = registry.map.get(voter_id)
        if record_bytes is None:
            continue
        record = UpdateRecord.from_bytes(record_bytes)
        if record.meta.opcode == "deregister":
            continue
        rows.append((to_hex(voter_id),
                     record_encodings(record, registry.schema, params)))
    return rows
