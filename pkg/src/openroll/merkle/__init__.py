"""Merkle structures: the append-only log and the sparse key/value map."""
from .log import (
    EMPTY_ROOT,
    ConsistencyProof,
    IndexOutOfRange,
    LogInclusionProof,
    MerkleLog,
    SizeOutOfRange,
    hash_children,
    hash_leaf,
    verify_consistency,
    verify_inclusion,
)
from .smt import (
    DEPTH,
    EMPTY_MAP_ROOT,
    DuplicateKeyInBatch,
    MapInclusionProof,
    MapSnapshot,
    SparseMerkleMap,
    map_leaf_hash,
    verify_map_proof,
)

__all__ = [
    "EMPTY_ROOT",
    "EMPTY_MAP_ROOT",
    "DEPTH",
    "ConsistencyProof",
    "DuplicateKeyInBatch",
    "IndexOutOfRange",
    "LogInclusionProof",
    "MapInclusionProof",
    "MapSnapshot",
    "MerkleLog",
    "SizeOutOfRange",
    "SparseMerkleMap",
    "hash_children",
    "hash_leaf",
    "map_leaf_hash",
    "verify_consistency",
    "verify_inclusion",
    "verify_map_proof",
]
