"""Append-only Merkle log with inclusion and consistency proofs.

Hashing follows the RFC 6962 convention: leaves are hashed with a 0x00
prefix, interior nodes with 0x01, and trees of non-power-of-two size
split at the largest power of two below the size.  This keeps roots and
proofs cross-checkable against public test vectors.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from ..wire import from_hex, lp, read_lp, read_u64, to_hex, u64

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# Root of the empty log, per the convention that MTH({}) = SHA-256 of the
# empty string.
EMPTY_ROOT = hashlib.sha256(b"").digest()


class IndexOutOfRange(ValueError):
    """Leaf index outside the tree size it was asked against."""


class SizeOutOfRange(ValueError):
    """Tree size outside the range the log can prove."""


def hash_leaf(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def hash_children(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _largest_pow2_below(n: int) -> int:
    # largest power of two strictly less than n, n >= 2
    return 1 << ((n - 1).bit_length() - 1)


@dataclass(frozen=True)
class LogInclusionProof:
    leaf_index: int
    tree_size: int
    path: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        out = u64(self.leaf_index) + u64(self.tree_size) + u64(len(self.path))
        for node in self.path:
            out += lp(node)
        return out

    @classmethod
    def from_bytes(cls, buf: bytes) -> "LogInclusionProof":
        leaf_index, off = read_u64(buf, 0)
        tree_size, off = read_u64(buf, off)
        count, off = read_u64(buf, off)
        path = []
        for _ in range(count):
            node, off = read_lp(buf, off)
            path.append(node)
        return cls(leaf_index, tree_size, tuple(path))

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "tree_size": self.tree_size,
            "path": [to_hex(p) for p in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LogInclusionProof":
        return cls(int(obj["leaf_index"]), int(obj["tree_size"]),
                   tuple(from_hex(p) for p in obj["path"]))


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        out = u64(self.old_size) + u64(self.new_size) + u64(len(self.path))
        for node in self.path:
            out += lp(node)
        return out

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ConsistencyProof":
        old_size, off = read_u64(buf, 0)
        new_size, off = read_u64(buf, off)
        count, off = read_u64(buf, off)
        path = []
        for _ in range(count):
            node, off = read_lp(buf, off)
            path.append(node)
        return cls(old_size, new_size, tuple(path))

    def to_json(self) -> dict:
        return {
            "old_size": self.old_size,
            "new_size": self.new_size,
            "path": [to_hex(p) for p in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConsistencyProof":
        return cls(int(obj["old_size"]), int(obj["new_size"]),
                   tuple(from_hex(p) for p in obj["path"]))


class MerkleLog:
    """In-memory Merkle log over an append-only sequence of leaves.

    Complete subtree hashes are cached per level, so appends cost an
    amortized O(1) hashes and proofs at any historical size cost
    O(log^2 n) without re-hashing the whole tree.
    """

    def __init__(self, retain_leaves: bool = True):
        self._levels: list[list[bytes]] = [[]]
        self._leaves: list[bytes] | None = [] if retain_leaves else None

    @property
    def size(self) -> int:
        return len(self._levels[0])

    def append(self, entries: list[bytes]) -> bytes:
        """Append a non-empty batch of leaves and return the new root."""
        if not entries:
            raise ValueError("append requires at least one entry")
        for entry in entries:
            self.append_leaf_hash(hash_leaf(entry))
            if self._leaves is not None:
                self._leaves.append(bytes(entry))
        return self.root()

    def append_leaf_hash(self, leaf_hash: bytes) -> None:
        """Append a pre-hashed leaf (used when raw leaves live elsewhere)."""
        self._levels[0].append(leaf_hash)
        height = 0
        # fold completed pairs upward
        while len(self._levels[height]) % 2 == 0:
            level = self._levels[height]
            parent = hash_children(level[-2], level[-1])
            if len(self._levels) == height + 1:
                self._levels.append([])
            self._levels[height + 1].append(parent)
            height += 1

    def leaf(self, index: int) -> bytes:
        if self._leaves is None:
            raise ValueError("log was built without retained leaves")
        if not 0 <= index < self.size:
            raise IndexOutOfRange(f"leaf {index} outside log of size {self.size}")
        return self._leaves[index]

    def leaf_hash_at(self, index: int) -> bytes:
        if not 0 <= index < self.size:
            raise IndexOutOfRange(f"leaf {index} outside log of size {self.size}")
        return self._levels[0][index]

    def root(self) -> bytes:
        return self.root_at(self.size)

    def root_at(self, tree_size: int) -> bytes:
        if not 0 <= tree_size <= self.size:
            raise SizeOutOfRange(f"size {tree_size} outside log of size {self.size}")
        if tree_size == 0:
            return EMPTY_ROOT
        return self._range_root(0, tree_size)

    def _range_root(self, lo: int, hi: int) -> bytes:
        n = hi - lo
        if n == 1:
            return self._levels[0][lo]
        # complete aligned subtrees are cached at their level
        if n & (n - 1) == 0 and lo % n == 0:
            height = n.bit_length() - 1
            if height < len(self._levels):
                return self._levels[height][lo >> height]
        k = _largest_pow2_below(n)
        return hash_children(self._range_root(lo, lo + k),
                             self._range_root(lo + k, hi))

    def prove_inclusion(self, leaf_index: int,
                        tree_size: int | None = None) -> LogInclusionProof:
        if tree_size is None:
            tree_size = self.size
        if not 0 < tree_size <= self.size:
            raise SizeOutOfRange(f"size {tree_size} outside log of size {self.size}")
        if not 0 <= leaf_index < tree_size:
            raise IndexOutOfRange(f"leaf {leaf_index} outside tree of size {tree_size}")
        path = self._inclusion_path(leaf_index, 0, tree_size)
        return LogInclusionProof(leaf_index, tree_size, tuple(path))

    def _inclusion_path(self, m: int, lo: int, hi: int) -> list[bytes]:
        if hi - lo == 1:
            return []
        k = _largest_pow2_below(hi - lo)
        if m < lo + k:
            return self._inclusion_path(m, lo, lo + k) + [self._range_root(lo + k, hi)]
        return self._inclusion_path(m, lo + k, hi) + [self._range_root(lo, lo + k)]

    def prove_consistency(self, old_size: int,
                          new_size: int | None = None) -> ConsistencyProof:
        if new_size is None:
            new_size = self.size
        if not 0 < old_size <= new_size <= self.size:
            raise SizeOutOfRange(
                f"sizes ({old_size}, {new_size}) outside log of size {self.size}")
        if old_size == new_size:
            return ConsistencyProof(old_size, new_size, ())
        path = self._subproof(old_size, 0, new_size, True)
        return ConsistencyProof(old_size, new_size, tuple(path))

    def _subproof(self, m: int, lo: int, hi: int, complete: bool) -> list[bytes]:
        if m == hi:
            if complete:
                return []
            return [self._range_root(lo, hi)]
        k = _largest_pow2_below(hi - lo)
        if m <= lo + k:
            return self._subproof(m, lo, lo + k, complete) + \
                [self._range_root(lo + k, hi)]
        return self._subproof(m, lo + k, hi, False) + \
            [self._range_root(lo, lo + k)]


def verify_inclusion(root: bytes, leaf_hash: bytes,
                     proof: LogInclusionProof) -> bool:
    """Check that leaf_hash sits at proof.leaf_index in the tree behind root."""
    fn, sn = proof.leaf_index, proof.tree_size - 1
    if fn < 0 or fn > sn:
        return False
    node = leaf_hash
    for sibling in proof.path:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            node = hash_children(sibling, node)
            if not fn & 1:
                while fn != 0 and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            node = hash_children(node, sibling)
        fn >>= 1
        sn >>= 1
    return sn == 0 and node == root


def verify_consistency(old_root: bytes, new_root: bytes,
                       proof: ConsistencyProof) -> bool:
    """Check that the tree behind new_root extends the tree behind old_root."""
    old_size, new_size = proof.old_size, proof.new_size
    if old_size < 0 or old_size > new_size:
        return False
    if old_size == new_size:
        return not proof.path and old_root == new_root
    if old_size == 0:
        # the empty log is a prefix of every log
        return not proof.path and old_root == EMPTY_ROOT
    path = list(proof.path)
    if old_size & (old_size - 1) == 0:
        # old tree is a complete subtree of the new one; its root is implied
        path = [old_root] + path
    if not path:
        return False
    fn, sn = old_size - 1, new_size - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    old_node = new_node = path[0]
    for sibling in path[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            old_node = hash_children(sibling, old_node)
            new_node = hash_children(sibling, new_node)
            if not fn & 1:
                while fn != 0 and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            new_node = hash_children(new_node, sibling)
        fn >>= 1
        sn >>= 1
    return sn == 0 and old_node == old_root and new_node == new_root
