"""Sparse Merkle map over the full 256-bit key space.

Keys are 32-byte digests; the tree has depth 256 with every absent
subtree collapsing to a precomputed per-level default hash.  Subtrees
holding a single key are kept as one node and expanded arithmetically,
so memory stays proportional to the number of live keys rather than to
the tree depth.  Nodes are immutable and share structure, which makes a
snapshot of the map at an epoch boundary a single root reference.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .log import LEAF_PREFIX, hash_children
from ..wire import from_hex, lp, read_lp, read_u64, to_hex, u64

DEPTH = 256

# Default hash of an empty subtree, indexed by height.  Height 0 is the
# distinguished empty-leaf constant, height DEPTH the empty-map root.
DEFAULTS: list[bytes] = [b"\x00" * 32]
for _height in range(DEPTH):
    DEFAULTS.append(hash_children(DEFAULTS[-1], DEFAULTS[-1]))

EMPTY_MAP_ROOT = DEFAULTS[DEPTH]


class DuplicateKeyInBatch(ValueError):
    """The same key appeared twice in one batch of updates."""


def map_leaf_hash(key: bytes, value: bytes) -> bytes:
    inner = hashlib.sha256(value).digest()
    return hashlib.sha256(LEAF_PREFIX + key + inner).digest()


def _path_of(key: bytes) -> int:
    return int.from_bytes(key, "big")


class _Leaf:
    """A subtree containing exactly one key, stored unexpanded."""

    __slots__ = ("path", "base", "_memo_level", "_memo_hash")

    def __init__(self, path: int, base: bytes):
        self.path = path
        self.base = base
        self._memo_level = -1
        self._memo_hash = b""

    def chain_hash(self, level: int) -> bytes:
        """Hash of this subtree expanded to the given height."""
        node = self.base
        for lvl in range(level):
            if (self.path >> lvl) & 1:
                node = hash_children(DEFAULTS[lvl], node)
            else:
                node = hash_children(node, DEFAULTS[lvl])
        return node

    def hash_at(self, level: int) -> bytes:
        if self._memo_level != level:
            self._memo_hash = self.chain_hash(level)
            self._memo_level = level
        return self._memo_hash


class _Branch:
    __slots__ = ("left", "right", "_memo")

    def __init__(self, left, right):
        self.left = left
        self.right = right
        self._memo = b""

    def hash_at(self, level: int) -> bytes:
        if not self._memo:
            self._memo = hash_children(_child_hash(self.left, level - 1),
                                       _child_hash(self.right, level - 1))
        return self._memo


def _child_hash(node, level: int) -> bytes:
    if node is None:
        return DEFAULTS[level]
    return node.hash_at(level)


def _insert(node, level: int, path: int, base: bytes):
    """Return the root of the subtree with (path -> base) set, sharing
    untouched children with the old subtree."""
    if node is None:
        return _Leaf(path, base)
    if isinstance(node, _Leaf):
        if node.path == path:
            return _Leaf(path, base)
        return _split(node, level, path, base)
    bit = (path >> (level - 1)) & 1
    if bit:
        return _Branch(node.left, _insert(node.right, level - 1, path, base))
    return _Branch(_insert(node.left, level - 1, path, base), node.right)


def _split(old: _Leaf, level: int, path: int, base: bytes):
    old_bit = (old.path >> (level - 1)) & 1
    new_bit = (path >> (level - 1)) & 1
    if old_bit != new_bit:
        # fresh leaf objects so each sits at a single fixed height
        old_leaf = _Leaf(old.path, old.base)
        new_leaf = _Leaf(path, base)
        if new_bit:
            return _Branch(old_leaf, new_leaf)
        return _Branch(new_leaf, old_leaf)
    child = _split(old, level - 1, path, base)
    if new_bit:
        return _Branch(None, child)
    return _Branch(child, None)


@dataclass(frozen=True)
class MapSnapshot:
    """Immutable view of the map at one revision."""
    revision: int
    root: bytes
    _node: object = None


@dataclass(frozen=True)
class MapInclusionProof:
    """Sibling path for one key; doubles as a non-inclusion proof when
    the key is absent (the leaf position then holds the empty default)."""
    key: bytes
    revision: int
    siblings: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        out = lp(self.key) + u64(self.revision) + u64(len(self.siblings))
        for node in self.siblings:
            out += lp(node)
        return out

    @classmethod
    def from_bytes(cls, buf: bytes) -> "MapInclusionProof":
        key, off = read_lp(buf, 0)
        revision, off = read_u64(buf, off)
        count, off = read_u64(buf, off)
        siblings = []
        for _ in range(count):
            node, off = read_lp(buf, off)
            siblings.append(node)
        return cls(key, revision, tuple(siblings))

    def to_json(self) -> dict:
        return {
            "key": to_hex(self.key),
            "revision": self.revision,
            "siblings": [to_hex(s) for s in self.siblings],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MapInclusionProof":
        return cls(from_hex(obj["key"]), int(obj["revision"]),
                   tuple(from_hex(s) for s in obj["siblings"]))


class SparseMerkleMap:
    """Mutable key/value map committed to by a sparse Merkle root."""

    def __init__(self):
        self._node = None
        self._revision = 0
        self._entries: dict[bytes, bytes] = {}

    @property
    def revision(self) -> int:
        return self._revision

    def __len__(self) -> int:
        return len(self._entries)

    def root(self) -> bytes:
        return _child_hash(self._node, DEPTH)

    def get(self, key: bytes) -> bytes | None:
        return self._entries.get(key)

    def keys(self):
        return self._entries.keys()

    def snapshot(self) -> MapSnapshot:
        return MapSnapshot(self._revision, self.root(), self._node)

    def apply_batch(self, pairs: list[tuple[bytes, bytes]]) -> bytes:
        """Apply a batch of (key, value) writes and bump the revision.

        An empty batch is a no-op that still advances the revision, so
        epochs without traffic keep their own revision number.
        """
        seen = set()
        for key, value in pairs:
            if len(key) != 32:
                raise ValueError("map keys must be 32-byte digests")
            if not value:
                raise ValueError("map values must be non-empty")
            if key in seen:
                raise DuplicateKeyInBatch(f"key {key.hex()} repeated in batch")
            seen.add(key)
        for key, value in pairs:
            base = map_leaf_hash(key, value)
            self._node = _insert(self._node, DEPTH, _path_of(key), base)
            self._entries[key] = value
        self._revision += 1
        return self.root()

    def prove(self, key: bytes, snapshot: MapSnapshot | None = None) -> MapInclusionProof:
        """Sibling path for key against the current state or a snapshot."""
        if len(key) != 32:
            raise ValueError("map keys must be 32-byte digests")
        if snapshot is None:
            node, revision = self._node, self._revision
        else:
            node, revision = snapshot._node, snapshot.revision
        path = _path_of(key)
        siblings: list[bytes] = [b""] * DEPTH
        level = DEPTH
        while True:
            if node is None:
                for lvl in range(level):
                    siblings[lvl] = DEFAULTS[lvl]
                break
            if isinstance(node, _Leaf):
                for lvl in range(level):
                    siblings[lvl] = DEFAULTS[lvl]
                if node.path != path:
                    # the resident key diverges somewhere below this level
                    diverge = (node.path ^ path).bit_length() - 1
                    siblings[diverge] = node.chain_hash(diverge)
                break
            bit = (path >> (level - 1)) & 1
            sibling = node.left if bit else node.right
            siblings[level - 1] = _child_hash(sibling, level - 1)
            node = node.right if bit else node.left
            level -= 1
        return MapInclusionProof(key, revision, tuple(siblings))


def verify_map_proof(root: bytes, key: bytes, value: bytes | None,
                     proof: MapInclusionProof) -> bool:
    """Check a (non-)inclusion proof: value None asserts absence."""
    if len(proof.siblings) != DEPTH or len(key) != 32:
        return False
    node = DEFAULTS[0] if value is None else map_leaf_hash(key, value)
    path = _path_of(key)
    for lvl in range(DEPTH):
        sibling = proof.siblings[lvl]
        if (path >> lvl) & 1:
            node = hash_children(sibling, node)
        else:
            node = hash_children(node, sibling)
    return node == root
