"""Epoch-batched verifiable registry: queue, push, lookup, history.

The registry pairs an append-only mutation log with a sparse Merkle map
of each voter's latest record.  Updates queue between epochs; a push
drains the queue in one atomic batch, appends mutations to the log,
applies last-write-wins values to the map, and publishes a signed
commitment (with an append-only proof) to the bulletin journal.

Durability model: mutation leaves land on disk before the bulletin entry
that covers them, and the bulletin append is the commit point.  On open,
the full state is replayed from the mutation log and cross-checked
against every bulletin root; log bytes past the committed prefix are
rolled back if they match the still-pending queue and rejected as
corruption otherwise.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .bulletin import (
    Bulletin,
    BulletinEntry,
    GapDetected,
    SnapshotCommitment,
    make_commitment,
)
from .crypto import MasterKeys, derive_voter_id as _derive_voter_id
from .merkle import (
    EMPTY_MAP_ROOT,
    EMPTY_ROOT,
    ConsistencyProof,
    LogInclusionProof,
    MapInclusionProof,
    MapSnapshot,
    MerkleLog,
    SparseMerkleMap,
    hash_leaf,
    verify_inclusion,
    verify_map_proof,
)
from .records import UpdateRecord, mutation_leaf, parse_mutation
from .schema import (
    AccessPolicy,
    ColumnSchema,
    PublicPredicate,
    load_policy,
    save_policy,
)
from .wire import from_hex, lp, read_lp, to_hex


class StorageFailure(RuntimeError):
    """Durable storage misbehaved mid-operation."""


class CorruptState(RuntimeError):
    """On-disk state fails its own cross-checks; refusing to serve."""


class RangeOutOfBounds(ValueError):
    """Requested epoch range extends past the committed history."""


@dataclass
class RosterEntry:
    """Official-side mirror of one base-system row."""
    base_id: str
    voter_id_hex: str
    active: bool
    values: list[str]


class Roster:
    """Plaintext stand-in for the jurisdiction's existing voter database.

    The real base system is outside this package; officials still need a
    local source of current values for deregistrations and CSV tooling,
    so the registry keeps this append-only mirror beside its own state.
    """

    def __init__(self, path: str):
        self.path = path
        self.entries: dict[str, RosterEntry] = {}
        self._by_voter: dict[str, str] = {}
        if os.path.exists(path):
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    self._apply(RosterEntry(obj["base_id"], obj["voter_id"],
                                            obj["active"], obj["values"]))

    def _apply(self, entry: RosterEntry) -> None:
        self.entries[entry.base_id] = entry
        self._by_voter[entry.voter_id_hex] = entry.base_id

    def upsert(self, entry: RosterEntry) -> None:
        self._apply(entry)
        with open(self.path, "a") as fh:
            fh.write(json.dumps({
                "base_id": entry.base_id, "voter_id": entry.voter_id_hex,
                "active": entry.active, "values": entry.values,
            }) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def get(self, base_id: str) -> RosterEntry | None:
        return self.entries.get(base_id)

    def by_voter(self, voter_id_hex: str) -> RosterEntry | None:
        base_id = self._by_voter.get(voter_id_hex)
        return self.entries.get(base_id) if base_id else None


@dataclass(frozen=True)
class HistoryUpdate:
    epoch: int
    log_index: int
    record: UpdateRecord
    log_proof: LogInclusionProof

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "log_index": self.log_index,
                "record": self.record.to_json(),
                "log_proof": self.log_proof.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "HistoryUpdate":
        return cls(int(obj["epoch"]), int(obj["log_index"]),
                   UpdateRecord.from_json(obj["record"]),
                   LogInclusionProof.from_json(obj["log_proof"]))


@dataclass(frozen=True)
class HistoryBundle:
    """A voter's updates over an epoch range plus completeness proofs.

    carry_record anchors the state entering the range (map proof at the
    epoch just before it), each update carries a log inclusion proof
    inside its epoch's segment, and the endpoint map proof pins the
    state at the end of the range.  Per-voter sequence numbers make any
    omission inside the range show up as a gap.
    """
    voter_id: bytes
    epoch_lo: int
    epoch_hi: int
    anchor_epoch: int
    carry_record: UpdateRecord | None
    carry_proof: MapInclusionProof
    updates: tuple[HistoryUpdate, ...]
    endpoint_proof: MapInclusionProof

    def to_json(self) -> dict:
        return {
            "voter_id": to_hex(self.voter_id),
            "epoch_lo": self.epoch_lo,
            "epoch_hi": self.epoch_hi,
            "anchor_epoch": self.anchor_epoch,
            "carry_record": (self.carry_record.to_json()
                             if self.carry_record else None),
            "carry_proof": self.carry_proof.to_json(),
            "updates": [u.to_json() for u in self.updates],
            "endpoint_proof": self.endpoint_proof.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HistoryBundle":
        carry = obj.get("carry_record")
        return cls(
            voter_id=from_hex(obj["voter_id"]),
            epoch_lo=int(obj["epoch_lo"]),
            epoch_hi=int(obj["epoch_hi"]),
            anchor_epoch=int(obj["anchor_epoch"]),
            carry_record=UpdateRecord.from_json(carry) if carry else None,
            carry_proof=MapInclusionProof.from_json(obj["carry_proof"]),
            updates=tuple(HistoryUpdate.from_json(u) for u in obj["updates"]),
            endpoint_proof=MapInclusionProof.from_json(obj["endpoint_proof"]),
        )


@dataclass(frozen=True)
class LookupResult:
    record: UpdateRecord | None
    proof: MapInclusionProof
    commitment: SnapshotCommitment

    def to_json(self) -> dict:
        return {"record": self.record.to_json() if self.record else None,
                "proof": self.proof.to_json(),
                "commitment": self.commitment.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "LookupResult":
        record = obj.get("record")
        return cls(UpdateRecord.from_json(record) if record else None,
                   MapInclusionProof.from_json(obj["proof"]),
                   SnapshotCommitment.from_json(obj["commitment"]))


class Registry:
    """Single-writer registry over one data directory."""

    def __init__(self, data_dir: str, master: MasterKeys,
                 create: bool = False,
                 schema: ColumnSchema | None = None,
                 predicate: PublicPredicate | None = None,
                 access: AccessPolicy | None = None,
                 encoder=None, encoding_params: dict | None = None):
        self.data_dir = data_dir
        self.master = master
        self.encoder = encoder
        self.encoding_params = encoding_params
        self._crash_hook = None  # test injection point inside push
        self._mutations_path = os.path.join(data_dir, "log", "mutations.bin")
        self._map_trace_path = os.path.join(data_dir, "map", "roots.jsonl")
        self._queue_path = os.path.join(data_dir, "queue.jsonl")
        self.bulletin = Bulletin(os.path.join(data_dir, "bulletin.jsonl"))

        self.log = MerkleLog(retain_leaves=False)
        self.map = SparseMerkleMap()
        self.queue: list[tuple[bytes, UpdateRecord]] = []
        self.snapshots: dict[int, MapSnapshot] = {}
        self.entries: list[BulletinEntry] = []
        self._leaf_offsets: list[int] = []
        self._history_index: dict[bytes, list[tuple[int, int]]] = {}
        self._next_seq: dict[bytes, int] = {}
        self._read_handle = None

        if create:
            self._create(schema, predicate, access)
        else:
            self._open()

    # ------------------------------------------------------------------
    # setup and replay

    def _create(self, schema, predicate, access) -> None:
        if os.path.exists(self.bulletin.path):
            raise StorageFailure(f"{self.data_dir} already holds a registry")
        os.makedirs(os.path.join(self.data_dir, "log"), exist_ok=True)
        os.makedirs(os.path.join(self.data_dir, "map"), exist_ok=True)
        self.schema = schema if schema is not None else _default_schema()
        self.predicate = predicate if predicate is not None else \
            PublicPredicate(self.schema)
        self.access = access if access is not None else AccessPolicy()
        self.schema.save(os.path.join(self.data_dir, "schema.json"))
        save_policy(os.path.join(self.data_dir, "policy.json"),
                    self.predicate, self.access)
        open(self._mutations_path, "ab").close()
        if self.encoding_params is not None:
            with open(os.path.join(self.data_dir, "linkage.json"), "w") as fh:
                json.dump(self.encoding_params, fh, indent=2)
                fh.write("\n")
        self.roster = Roster(os.path.join(self.data_dir, "roster.jsonl"))
        # genesis: empty roots at epoch 0 so epoch 1 has a predecessor
        commitment = make_commitment(self.master, 0, EMPTY_MAP_ROOT,
                                     EMPTY_ROOT, 0)
        entry = BulletinEntry(commitment, None)
        self.bulletin.append(entry)
        self.entries = [entry]
        self.epoch = 0
        self.snapshots[0] = self.map.snapshot()
        self._append_map_trace(0)

    def _open(self) -> None:
        schema_path = os.path.join(self.data_dir, "schema.json")
        if not os.path.exists(schema_path):
            raise CorruptState(f"{self.data_dir} has no registry schema")
        self.schema = ColumnSchema.load(schema_path)
        self.predicate, self.access = load_policy(
            os.path.join(self.data_dir, "policy.json"), self.schema)
        linkage_path = os.path.join(self.data_dir, "linkage.json")
        if os.path.exists(linkage_path):
            # stored parameters win over whatever the caller passed
            with open(linkage_path) as fh:
                self.encoding_params = json.load(fh)
            from .pprl import EncodingParams, make_encoder
            self.encoder = make_encoder(
                EncodingParams.from_json(self.encoding_params))
        self.roster = Roster(os.path.join(self.data_dir, "roster.jsonl"))
        try:
            self.entries = self.bulletin.read_all()
        except GapDetected as exc:
            raise CorruptState(f"bulletin journal unusable: {exc}") from exc
        if not self.entries:
            raise CorruptState("bulletin journal is empty")
        genesis = self.entries[0].commitment
        if genesis.log_root != EMPTY_ROOT or genesis.map_root != EMPTY_MAP_ROOT:
            raise CorruptState("genesis commitment does not describe an "
                               "empty registry")

        leaves, offsets, clean_end = self._read_mutations_file()
        committed = self.entries[-1].commitment.log_size
        if len(leaves) < committed:
            raise CorruptState(
                f"mutation log holds {len(leaves)} entries, bulletin "
                f"covers {committed}")

        pending = self._read_queue_file()
        overhang = leaves[committed:]
        if overhang:
            pending_leaves = [mutation_leaf(vid, rec) for vid, rec in pending]
            if overhang != pending_leaves[:len(overhang)]:
                raise CorruptState(
                    "mutation log extends past the bulletin with entries "
                    "that are not pending queue items")
            # crash before the bulletin commit point: roll the file back
            self._truncate_mutations(offsets[committed])
            leaves = leaves[:committed]
            offsets = offsets[:committed]
        elif not clean_end:
            self._truncate_mutations(offsets[len(leaves)]
                                     if len(leaves) < len(offsets)
                                     else os.path.getsize(self._mutations_path))

        self._leaf_offsets = offsets[:len(leaves)]
        self._replay(leaves)

        # queued items for already-committed epochs were committed in a
        # push whose queue truncation did not land; drop them
        self.queue = [(vid, rec) for vid, rec in pending
                      if rec.meta.epoch > self.epoch]
        for vid, rec in self.queue:
            self._next_seq[vid] = max(self._next_seq.get(vid, 0),
                                      rec.meta.sequence + 1)
        self._rewrite_queue_file()
        self._rewrite_map_trace()

    def _read_mutations_file(self) -> tuple[list[bytes], list[int], bool]:
        leaves: list[bytes] = []
        offsets: list[int] = []
        clean = True
        if not os.path.exists(self._mutations_path):
            open(self._mutations_path, "ab").close()
            return leaves, offsets, clean
        with open(self._mutations_path, "rb") as fh:
            blob = fh.read()
        off = 0
        while off < len(blob):
            try:
                leaf, next_off = read_lp(blob, off)
            except ValueError:
                clean = False  # partial trailing write
                break
            offsets.append(off)
            leaves.append(leaf)
            off = next_off
        offsets.append(off)  # end sentinel for truncation
        return leaves, offsets, clean

    def _truncate_mutations(self, size: int) -> None:
        with open(self._mutations_path, "r+b") as fh:
            fh.truncate(size)

    def _replay(self, leaves: list[bytes]) -> None:
        for leaf in leaves:
            self.log.append_leaf_hash(hash_leaf(leaf))
        try:
            parsed = [parse_mutation(leaf) for leaf in leaves]
        except ValueError as exc:
            raise CorruptState(f"mutation log entry unreadable: {exc}") from exc
        self.snapshots[0] = self.map.snapshot()
        for entry in self.entries[1:]:
            com = entry.commitment
            prev_size = self.entries[com.epoch - 1].commitment.log_size
            if com.log_size < prev_size or com.log_size > len(leaves):
                raise CorruptState(f"epoch {com.epoch} log size regresses")
            segment = parsed[prev_size:com.log_size]
            last_write: dict[bytes, bytes] = {}
            for vid, record in segment:
                if record.meta.epoch != com.epoch:
                    raise CorruptState(
                        f"mutation in epoch {com.epoch} segment claims "
                        f"epoch {record.meta.epoch}")
                last_write[vid] = record.to_bytes()
            self.map.apply_batch(list(last_write.items()))
            if self.map.root() != com.map_root:
                raise CorruptState(f"map root mismatch at epoch {com.epoch}")
            if self.log.root_at(com.log_size) != com.log_root:
                raise CorruptState(f"log root mismatch at epoch {com.epoch}")
            self.snapshots[com.epoch] = self.map.snapshot()
            for idx in range(prev_size, com.log_size):
                vid, record = parsed[idx]
                self._history_index.setdefault(vid, []).append((com.epoch, idx))
                self._next_seq[vid] = record.meta.sequence + 1
        self.epoch = self.entries[-1].commitment.epoch

    # ------------------------------------------------------------------
    # queue and push

    @property
    def target_epoch(self) -> int:
        """Epoch the next push will commit; queued records must name it."""
        return self.epoch + 1

    def derive_voter_id(self, base_id: str) -> bytes:
        return _derive_voter_id(self.master, base_id)

    def next_sequence(self, voter_id: bytes) -> int:
        return self._next_seq.get(voter_id, 0)

    def enqueue(self, voter_id: bytes, record: UpdateRecord) -> None:
        if record.meta.epoch != self.target_epoch:
            raise ValueError(
                f"record targets epoch {record.meta.epoch}, queue is for "
                f"epoch {self.target_epoch}")
        if record.meta.sequence != self.next_sequence(voter_id):
            raise ValueError("record sequence out of order for voter")
        self.queue.append((voter_id, record))
        self._next_seq[voter_id] = record.meta.sequence + 1
        with open(self._queue_path, "a") as fh:
            fh.write(json.dumps({"voter_id": to_hex(voter_id),
                                 "record": to_hex(record.to_bytes())}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def push_epoch(self) -> BulletinEntry:
        """Commit all queued mutations as the next epoch."""
        batch = list(self.queue)
        new_epoch = self.target_epoch
        prev = self.entries[-1].commitment
        leaves = [mutation_leaf(vid, rec) for vid, rec in batch]
        try:
            append_offsets = self._append_mutations(leaves)
        except OSError as exc:
            raise StorageFailure("mutation log append failed") from exc

        if self._crash_hook is not None:
            self._crash_hook()

        for leaf in leaves:
            self.log.append_leaf_hash(hash_leaf(leaf))
        last_write: dict[bytes, bytes] = {}
        for vid, rec in batch:
            last_write[vid] = rec.to_bytes()
        self.map.apply_batch(list(last_write.items()))

        log_size = self.log.size
        commitment = make_commitment(self.master, new_epoch, self.map.root(),
                                     self.log.root(), log_size)
        if prev.log_size > 0:
            proof = self.log.prove_consistency(prev.log_size, log_size)
        else:
            proof = ConsistencyProof(0, log_size, ())
        entry = BulletinEntry(commitment, proof)
        try:
            self.bulletin.append(entry)  # commit point
        except OSError as exc:
            raise StorageFailure("bulletin append failed") from exc

        self.entries.append(entry)
        self.epoch = new_epoch
        self.snapshots[new_epoch] = self.map.snapshot()
        self._leaf_offsets.extend(append_offsets)
        base_index = log_size - len(batch)
        for i, (vid, rec) in enumerate(batch):
            self._history_index.setdefault(vid, []).append(
                (new_epoch, base_index + i))
        self.queue.clear()
        self._rewrite_queue_file()
        self._append_map_trace(new_epoch)
        return entry

    def _append_mutations(self, leaves: list[bytes]) -> list[int]:
        offsets = []
        with open(self._mutations_path, "ab") as fh:
            pos = fh.tell()
            for leaf in leaves:
                offsets.append(pos)
                data = lp(leaf)
                fh.write(data)
                pos += len(data)
            fh.flush()
            os.fsync(fh.fileno())
        return offsets

    def _read_queue_file(self) -> list[tuple[bytes, UpdateRecord]]:
        pending = []
        if os.path.exists(self._queue_path):
            with open(self._queue_path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    pending.append((from_hex(obj["voter_id"]),
                                    UpdateRecord.from_bytes(
                                        from_hex(obj["record"]))))
        return pending

    def _rewrite_queue_file(self) -> None:
        tmp = self._queue_path + ".tmp"
        with open(tmp, "w") as fh:
            for vid, rec in self.queue:
                fh.write(json.dumps({"voter_id": to_hex(vid),
                                     "record": to_hex(rec.to_bytes())}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._queue_path)

    def _append_map_trace(self, epoch: int) -> None:
        with open(self._map_trace_path, "a") as fh:
            fh.write(json.dumps({"epoch": epoch,
                                 "revision": self.map.revision,
                                 "map_root": to_hex(self.map.root())}) + "\n")

    def _rewrite_map_trace(self) -> None:
        tmp = self._map_trace_path + ".tmp"
        with open(tmp, "w") as fh:
            for entry in self.entries:
                fh.write(json.dumps({
                    "epoch": entry.commitment.epoch,
                    "revision": self.snapshots[entry.commitment.epoch].revision,
                    "map_root": to_hex(entry.commitment.map_root)}) + "\n")
        os.replace(tmp, self._map_trace_path)

    # ------------------------------------------------------------------
    # reads

    def latest_commitment(self) -> SnapshotCommitment:
        return self.entries[-1].commitment

    def read_mutation(self, log_index: int) -> tuple[bytes, UpdateRecord]:
        if not 0 <= log_index < self.log.size:
            raise RangeOutOfBounds(f"no mutation at index {log_index}")
        if self._read_handle is None:
            self._read_handle = open(self._mutations_path, "rb")
        self._read_handle.seek(self._leaf_offsets[log_index])
        header = self._read_handle.read(4)
        length = int.from_bytes(header, "big")
        leaf = self._read_handle.read(length)
        return parse_mutation(leaf)

    def lookup(self, voter_id: bytes) -> LookupResult:
        """Latest committed record (or proven absence) for a voter."""
        proof = self.map.prove(voter_id)
        value = self.map.get(voter_id)
        record = UpdateRecord.from_bytes(value) if value is not None else None
        return LookupResult(record, proof, self.latest_commitment())

    def voter_updates(self, voter_id: bytes) -> list[tuple[int, int]]:
        return list(self._history_index.get(voter_id, []))

    def history(self, voter_id: bytes, epoch_lo: int,
                epoch_hi: int) -> HistoryBundle:
        """Every committed update for a voter in [epoch_lo, epoch_hi]."""
        if not 0 <= epoch_lo <= epoch_hi <= self.epoch:
            raise RangeOutOfBounds(
                f"range [{epoch_lo}, {epoch_hi}] outside committed epochs "
                f"[0, {self.epoch}]")
        anchor = max(epoch_lo - 1, 0)
        index = self._history_index.get(voter_id, [])

        carry_record = None
        for epoch, idx in reversed(index):
            if epoch <= anchor:
                _, carry_record = self.read_mutation(idx)
                break
        carry_proof = self.map.prove(voter_id, snapshot=self.snapshots[anchor])

        updates = []
        for epoch, idx in index:
            if epoch_lo <= epoch <= epoch_hi:
                _, record = self.read_mutation(idx)
                size = self.entries[epoch].commitment.log_size
                proof = self.log.prove_inclusion(idx, tree_size=size)
                updates.append(HistoryUpdate(epoch, idx, record, proof))

        endpoint_proof = self.map.prove(voter_id,
                                        snapshot=self.snapshots[epoch_hi])
        return HistoryBundle(voter_id, epoch_lo, epoch_hi, anchor,
                             carry_record, carry_proof, tuple(updates),
                             endpoint_proof)

    def close(self) -> None:
        if self._read_handle is not None:
            self._read_handle.close()
            self._read_handle = None


def _default_schema() -> ColumnSchema:
    from .schema import default_schema
    return default_schema()


def verify_history(voter_id: bytes, bundle: HistoryBundle,
                   entries: list[BulletinEntry]) -> tuple[bool, str | None]:
    """Check a history bundle against a trusted bulletin.

    Returns (True, None) when the bundle proves the complete, unaltered
    update history for the voter over its range, else (False, reason).
    The reasons are stable strings so callers can surface them.
    """
    lo, hi = bundle.epoch_lo, bundle.epoch_hi
    if bundle.voter_id != voter_id:
        return False, "bundle names a different voter"
    if not 0 <= lo <= hi < len(entries):
        return False, "epoch range not covered by bulletin"
    if bundle.anchor_epoch != max(lo - 1, 0):
        return False, "anchor epoch does not match range"

    anchor_com = entries[bundle.anchor_epoch].commitment
    carry_value = (bundle.carry_record.to_bytes()
                   if bundle.carry_record is not None else None)
    if not verify_map_proof(anchor_com.map_root, voter_id, carry_value,
                            bundle.carry_proof):
        return False, "carry-in state fails its map proof"
    if bundle.carry_record is not None:
        if bundle.carry_record.meta.epoch > bundle.anchor_epoch:
            return False, "carry-in record claims a later epoch"

    expected_seq = (bundle.carry_record.meta.sequence + 1
                    if bundle.carry_record is not None else 0)
    prev_index = -1
    prev_epoch = 0
    for update in bundle.updates:
        record = update.record
        if not lo <= update.epoch <= hi:
            return False, "update outside the requested range"
        if update.epoch == 0:
            return False, "genesis epoch cannot hold updates"
        if record.meta.epoch != update.epoch:
            return False, "record metadata epoch differs from claimed epoch"
        if record.meta.sequence != expected_seq:
            return False, "gap in the voter's update sequence"
        if update.epoch < prev_epoch or update.log_index <= prev_index:
            return False, "updates out of order"
        seg_lo = entries[update.epoch - 1].commitment.log_size
        seg_hi = entries[update.epoch].commitment.log_size
        if not seg_lo <= update.log_index < seg_hi:
            return False, "update index outside its epoch's log segment"
        proof = update.log_proof
        if proof.leaf_index != update.log_index or proof.tree_size != seg_hi:
            return False, "log proof bound to the wrong position"
        leaf = hash_leaf(mutation_leaf(voter_id, record))
        if not verify_inclusion(entries[update.epoch].commitment.log_root,
                                leaf, proof):
            return False, "update fails its log inclusion proof"
        expected_seq += 1
        prev_index = update.log_index
        prev_epoch = update.epoch

    if bundle.updates:
        final_value = bundle.updates[-1].record.to_bytes()
    else:
        final_value = carry_value
    if not verify_map_proof(entries[hi].commitment.map_root, voter_id,
                            final_value, bundle.endpoint_proof):
        return False, "endpoint state fails its map proof"
    return True, None


def verify_lookup(voter_id: bytes, result: LookupResult,
                  public_key) -> tuple[bool, str | None]:
    """Check a lookup response: commitment signature, then map proof."""
    if not result.commitment.verify(public_key):
        return False, "commitment signature invalid"
    value = result.record.to_bytes() if result.record is not None else None
    if not verify_map_proof(result.commitment.map_root, voter_id, value,
                            result.proof):
        return False, "record fails its map proof"
    return True, None
