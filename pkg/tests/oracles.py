"""Independent reference implementations used to check the real ones.

Everything here is written the slow, obvious way and deliberately shares
no code with the package: recursive tree hashing straight from the
convention's definition, a plain dictionary standing in for the map, and
q-gram sets compared exactly.  Tests treat these as ground truth.
"""
from __future__ import annotations

import hashlib


def naive_leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def naive_node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def naive_log_root(leaves: list[bytes]) -> bytes:
    """Recursive Merkle tree head, splitting at the largest power of two
    below the leaf count."""
    n = len(leaves)
    if n == 0:
        return hashlib.sha256(b"").digest()
    if n == 1:
        return naive_leaf_hash(leaves[0])
    k = 1
    while k * 2 < n:
        k *= 2
    return naive_node_hash(naive_log_root(leaves[:k]), naive_log_root(leaves[k:]))


def naive_inclusion_path(leaves: list[bytes], index: int) -> list[bytes]:
    n = len(leaves)
    if n == 1:
        return []
    k = 1
    while k * 2 < n:
        k *= 2
    if index < k:
        return naive_inclusion_path(leaves[:k], index) + [naive_log_root(leaves[k:])]
    return naive_inclusion_path(leaves[k:], index - k) + [naive_log_root(leaves[:k])]


def naive_consistency_path(leaves: list[bytes], old_size: int) -> list[bytes]:
    def subproof(m: int, chunk: list[bytes], complete: bool) -> list[bytes]:
        n = len(chunk)
        if m == n:
            if complete:
                return []
            return [naive_log_root(chunk)]
        k = 1
        while k * 2 < n:
            k *= 2
        if m <= k:
            return subproof(m, chunk[:k], complete) + [naive_log_root(chunk[k:])]
        return subproof(m - k, chunk[k:], False) + [naive_log_root(chunk[:k])]

    return subproof(old_size, leaves, True)


def naive_map_root(entries: dict[bytes, bytes], depth: int = 256) -> bytes:
    """Recursive sparse-map head over a plain dict, one bit at a time."""
    defaults = [b"\x00" * 32]
    for _ in range(depth):
        defaults.append(naive_node_hash(defaults[-1], defaults[-1]))

    def leaf(key: bytes, value: bytes) -> bytes:
        inner = hashlib.sha256(value).digest()
        return hashlib.sha256(b"\x00" + key + inner).digest()

    def subtree(items: list[tuple[int, bytes]], level: int, prefix: int) -> bytes:
        if not items:
            return defaults[level]
        if level == 0:
            assert len(items) == 1
            path, base = items[0]
            return base
        bit_index = level - 1
        left = [(p, b) for p, b in items if not (p >> bit_index) & 1]
        right = [(p, b) for p, b in items if (p >> bit_index) & 1]
        return naive_node_hash(subtree(left, level - 1, prefix << 1),
                               subtree(right, level - 1, (prefix << 1) | 1))

    paths = [(int.from_bytes(k, "big"), leaf(k, v)) for k, v in entries.items()]
    return subtree(paths, depth, 0)


def qgram_set(text: str, q: int) -> set[str]:
    """Exact q-gram set of an already-normalized string; short strings
    collapse to a single gram."""
    if not text:
        return set()
    if len(text) < q:
        return {text}
    return {text[i:i + q] for i in range(len(text) - q + 1)}


def set_dice(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return 2.0 * len(a & b) / (len(a) + len(b))
