"""Role workflows over the registry: register, update, disclose, query,
audit, and dispute checking.

Officials mutate state through register/update and prepare signed
packages for third parties and voters.  Receivers verify those packages
against the public bulletin with pure functions that raise a typed
`VerificationFailure` naming the failing check; the same checks rerun
inside `check_dispute_evidence` to decide whether a complaint proves
official misbehavior or is unfounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .bulletin import BulletinEntry, SnapshotCommitment
from .crypto import Corrupt, MasterKeys, derive_field_key, sign_bytes, \
    verify_signature
from .crypto import KeyMismatch as CipherKeyMismatch
from .merkle import MapInclusionProof, verify_consistency, verify_map_proof
from .records import UpdateRecord, build_record, open_record, open_slot, \
    verify_record_signature
from .registry import HistoryBundle, Registry, RosterEntry, verify_history
from .schema import UnknownThirdParty
from .wire import canonical_json, from_hex, to_hex

_DISCLOSURE_TAG = b"disclosure-package"
_QUERY_TAG = b"query-package"


class BaseSystemReject(ValueError):
    """The jurisdiction's base system refused the registration."""


class AlreadyRegistered(ValueError):
    """An active registration already exists for this voter."""


class UnknownVoter(ValueError):
    """No registration, committed or queued, for this voter."""


class AlreadyDeregistered(ValueError):
    """The voter's latest record is a tombstone."""


class VerificationFailure(Exception):
    """A package failed verification.

    `check` is a stable identifier for the failing check; `at` localizes
    it, usually to (epoch, column) or a voter id.
    """
    check = "verification_failure"

    def __init__(self, detail: str = "", at=None):
        super().__init__(detail or self.check)
        self.detail = detail or self.check
        self.at = at


class BadSignature(VerificationFailure):
    check = "bad_signature"


class StaleCommitment(VerificationFailure):
    check = "stale_commitment"


class ProofMismatch(VerificationFailure):
    check = "proof_mismatch"


class KeyMismatch(VerificationFailure):
    check = "key_mismatch"


class HistoryMismatch(VerificationFailure):
    check = "history_mismatch"


class DataMismatch(VerificationFailure):
    check = "data_mismatch"


class EncodingMismatch(VerificationFailure):
    check = "encoding_mismatch"


# ----------------------------------------------------------------------
# registration lifecycle


def _voter_state(reg: Registry, voter_id: bytes) -> str:
    """absent | active | deregistered, counting queued mutations."""
    latest = None
    for vid, rec in reg.queue:
        if vid == voter_id:
            latest = rec
    if latest is None:
        value = reg.map.get(voter_id)
        if value is None:
            return "absent"
        latest = UpdateRecord.from_bytes(value)
    return "deregistered" if latest.meta.opcode == "deregister" else "active"


def register_voter(reg: Registry, base_id: str, values: dict,
                   eligibility=None, signer_id: str = "official",
                   jurisdiction: bytes = b"") -> bytes:
    """Derive the voter's id, enqueue an opcode-add record, and mirror
    the base-system row in the roster.

    eligibility is the black-box hook into the jurisdiction's existing
    system: a callable (base_id, values) -> bool, accept-all when absent.
    """
    if eligibility is not None and not eligibility(base_id, values):
        raise BaseSystemReject(f"base system rejected {base_id!r}")
    voter_id = reg.derive_voter_id(base_id)
    if _voter_state(reg, voter_id) == "active":
        raise AlreadyRegistered(f"{base_id!r} already has an active record")
    record = build_record(reg.master, voter_id, values,
                          epoch=reg.target_epoch,
                          sequence=reg.next_sequence(voter_id),
                          opcode="add", schema=reg.schema,
                          predicate=reg.predicate, signer_id=signer_id,
                          jurisdiction=jurisdiction, encoder=reg.encoder)
    reg.enqueue(voter_id, record)
    row = reg.schema.row_from_mapping(values) if isinstance(values, dict) \
        else list(values)
    reg.roster.upsert(RosterEntry(base_id, to_hex(voter_id), True, row))
    return voter_id


def update_registration(reg: Registry, voter_id: bytes, values: dict,
                        opcode: str = "update", signer_id: str = "official",
                        jurisdiction: bytes = b"") -> UpdateRecord:
    """Enqueue a full re-encrypted record for an active voter."""
    if opcode not in ("update", "deregister"):
        raise ValueError(f"opcode {opcode!r} is not an update operation")
    state = _voter_state(reg, voter_id)
    if state == "absent":
        raise UnknownVoter(f"no registration for {to_hex(voter_id)}")
    if state == "deregistered":
        raise AlreadyDeregistered(f"{to_hex(voter_id)} already left the roll")
    record = build_record(reg.master, voter_id, values,
                          epoch=reg.target_epoch,
                          sequence=reg.next_sequence(voter_id),
                          opcode=opcode, schema=reg.schema,
                          predicate=reg.predicate, signer_id=signer_id,
                          jurisdiction=jurisdiction, encoder=reg.encoder)
    reg.enqueue(voter_id, record)
    entry = reg.roster.by_voter(to_hex(voter_id))
    if entry is not None:
        row = reg.schema.row_from_mapping(values) if isinstance(values, dict) \
            else list(values)
        reg.roster.upsert(RosterEntry(entry.base_id, entry.voter_id_hex,
                                      opcode != "deregister", row))
    return record


def deregister_voter(reg: Registry, voter_id: bytes, values=None,
                     signer_id: str = "official") -> UpdateRecord:
    """Tombstone a voter; reuses their current values when none given."""
    if values is None:
        current = reg.map.get(voter_id)
        for vid, rec in reg.queue:
            if vid == voter_id:
                current = rec.to_bytes()
        if current is None:
            raise UnknownVoter(f"no registration for {to_hex(voter_id)}")
        record = UpdateRecord.from_bytes(current)
        values = open_record(reg.master, voter_id, record, reg.schema)
    return update_registration(reg, voter_id, values, opcode="deregister",
                               signer_id=signer_id)


# ----------------------------------------------------------------------
# maintenance: disclosure to third parties


@dataclass(frozen=True)
class DisclosurePackage:
    """Signed disclosure for one third party at one committed epoch.

    Parallel, voter-major lists: voters[i] is a voter id hex or None,
    proofs[i] the matching (record, map proof) or None, and keys holds
    one entry per (voter, column) cell, None wherever the policy or the
    public predicate says no key is due.
    """
    third_party: str
    epoch: int
    voters: tuple
    proofs: tuple
    keys: tuple
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "third_party": self.third_party,
            "epoch": self.epoch,
            "voters": list(self.voters),
            "proofs": [p if p is None else
                       {"record": p[0].to_json(), "proof": p[1].to_json()}
                       for p in self.proofs],
            "keys": list(self.keys),
        }

    def signing_bytes(self) -> bytes:
        return _DISCLOSURE_TAG + canonical_json(self.body())

    def to_json(self) -> dict:
        out = self.body()
        out["signature"] = to_hex(self.signature)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DisclosurePackage":
        proofs = []
        for p in obj["proofs"]:
            if p is None:
                proofs.append(None)
            else:
                proofs.append((UpdateRecord.from_json(p["record"]),
                               MapInclusionProof.from_json(p["proof"])))
        return cls(obj["third_party"], int(obj["epoch"]),
                   tuple(obj["voters"]), tuple(proofs), tuple(obj["keys"]),
                   from_hex(obj["signature"]))


def maintenance_disclose(reg: Registry, third_party: str,
                         voter_ids: list[bytes]) -> DisclosurePackage:
    """Records, proofs, and field keys the policy grants this party.

    Voters with no approved columns (or no committed record) appear as
    None placeholders so the package shape always matches the request.
    """
    reg.access.require_party(third_party)
    n = reg.schema.n_columns
    voters, proofs, keys = [], [], []
    for voter_id in voter_ids:
        voter_hex = to_hex(voter_id)
        value = reg.map.get(voter_id)
        approved = [
            spec.label for spec in reg.schema.columns
            if reg.access.allows(third_party, voter_hex, spec.label)
            and not reg.predicate.is_public(voter_hex, spec.label)]
        if value is None or not approved:
            voters.append(None)
            proofs.append(None)
            keys.extend([None] * n)
            continue
        record = UpdateRecord.from_bytes(value)
        proof = reg.map.prove(voter_id)
        voters.append(voter_hex)
        proofs.append((record, proof))
        for spec in reg.schema.columns:
            if spec.label in approved:
                key = derive_field_key(reg.master, voter_id, spec.label,
                                       record.meta.epoch)
                keys.append(to_hex(key))
            else:
                keys.append(None)
    package = DisclosurePackage(third_party, reg.epoch, tuple(voters),
                                tuple(proofs), tuple(keys))
    signature = sign_bytes(reg.master, package.signing_bytes())
    return DisclosurePackage(third_party, reg.epoch, tuple(voters),
                             tuple(proofs), tuple(keys), signature)


def maintenance_receive(package: DisclosurePackage,
                        commitment: SnapshotCommitment,
                        public_key: bytes, schema) -> dict:
    """Third-party side: verify the package, decrypt what it unlocks.

    Returns {voter id hex: {column: plaintext}} covering approved sealed
    columns plus any public columns of included records.  Raises a
    VerificationFailure naming the first failing check; the package and
    commitment are the dispute evidence.
    """
    if not verify_signature(public_key, package.signing_bytes(),
                            package.signature):
        raise BadSignature("package signature does not verify")
    if package.epoch != commitment.epoch:
        raise StaleCommitment(
            f"package built at epoch {package.epoch}, commitment is for "
            f"epoch {commitment.epoch}")
    n = schema.n_columns
    if len(package.keys) != len(package.voters) * n or \
            len(package.proofs) != len(package.voters):
        raise ProofMismatch("package lists have inconsistent shapes")

    table: dict[str, dict[str, str]] = {}
    for i, voter_hex in enumerate(package.voters):
        cell_keys = package.keys[i * n:(i + 1) * n]
        if voter_hex is None:
            if package.proofs[i] is not None or any(
                    k is not None for k in cell_keys):
                raise ProofMismatch("placeholder entry carries data")
            continue
        if package.proofs[i] is None:
            raise ProofMismatch(f"no proof for included voter {voter_hex}")
        record, proof = package.proofs[i]
        voter_id = from_hex(voter_hex)
        if not verify_record_signature(public_key, voter_id, record):
            raise BadSignature("included record signature does not verify",
                               at=voter_hex)
        if not verify_map_proof(commitment.map_root, voter_id,
                                record.to_bytes(), proof):
            raise ProofMismatch("record fails its map inclusion proof",
                                at=voter_hex)
        row: dict[str, str] = {}
        for j, spec in enumerate(schema.columns):
            slot = record.slots[j]
            key_hex = cell_keys[j]
            if not slot.sealed:
                row[spec.label] = slot.plaintext.decode("utf-8")
                continue
            if key_hex is None:
                continue
            try:
                plaintext = open_slot(record, j, from_hex(key_hex))
            except (CipherKeyMismatch, Corrupt) as exc:
                raise KeyMismatch(
                    f"disclosed key fails to open {spec.label!r}: {exc}",
                    at=(voter_hex, spec.label)) from exc
            row[spec.label] = plaintext.decode("utf-8")
        table[voter_hex] = row
    return table


# ----------------------------------------------------------------------
# query: voter-side history verification


@dataclass(frozen=True)
class QueryPackage:
    """Signed history for one voter: records, proofs, and the field keys
    to open every sealed slot of every included record version."""
    voter_id: bytes
    epoch_lo: int
    epoch_hi: int
    bundle: HistoryBundle
    keys: dict = field(default_factory=dict)  # {epoch: {column: hex | None}}
    encoding_params: dict | None = None
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "voter_id": to_hex(self.voter_id),
            "epoch_lo": self.epoch_lo,
            "epoch_hi": self.epoch_hi,
            "bundle": self.bundle.to_json(),
            "keys": {str(epoch): grid for epoch, grid in
                     sorted(self.keys.items())},
            "encoding_params": self.encoding_params,
        }

    def signing_bytes(self) -> bytes:
        return _QUERY_TAG + canonical_json(self.body())

    def to_json(self) -> dict:
        out = self.body()
        out["signature"] = to_hex(self.signature)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "QueryPackage":
        return cls(from_hex(obj["voter_id"]), int(obj["epoch_lo"]),
                   int(obj["epoch_hi"]),
                   HistoryBundle.from_json(obj["bundle"]),
                   {int(e): grid for e, grid in obj["keys"].items()},
                   obj.get("encoding_params"),
                   from_hex(obj["signature"]))


def _bundle_records(bundle: HistoryBundle):
    """Included record versions, carry-in first."""
    out = []
    if bundle.carry_record is not None:
        out.append(bundle.carry_record)
    out.extend(update.record for update in bundle.updates)
    return out


def query_prepare(reg: Registry, voter_id: bytes, epoch_lo: int,
                  epoch_hi: int) -> QueryPackage:
    """History bundle plus recomputed field keys, signed as one package."""
    if not reg.voter_updates(voter_id) and reg.map.get(voter_id) is None:
        raise UnknownVoter(f"no registration for {to_hex(voter_id)}")
    bundle = reg.history(voter_id, epoch_lo, epoch_hi)
    keys: dict[int, dict[str, str | None]] = {}
    for record in _bundle_records(bundle):
        epoch = record.meta.epoch
        grid: dict[str, str | None] = {}
        for spec, slot in zip(reg.schema.columns, record.slots):
            if slot.sealed:
                grid[spec.label] = to_hex(derive_field_key(
                    reg.master, voter_id, spec.label, epoch))
            else:
                grid[spec.label] = None
        keys[epoch] = grid
    package = QueryPackage(voter_id, epoch_lo, epoch_hi, bundle, keys,
                           reg.encoding_params)
    signature = sign_bytes(reg.master, package.signing_bytes())
    return QueryPackage(voter_id, epoch_lo, epoch_hi, bundle, keys,
                        reg.encoding_params, signature)


def query_verify(package: QueryPackage, entries: list[BulletinEntry],
                 public_key: bytes, schema,
                 expected_data: dict | None = None) -> dict:
    """Voter-side check of a queried history against the bulletin.

    Verifies the package signature, the history bundle (completeness and
    ordering), each record's signature, then decrypts every sealed slot
    of every version.  When the registry links across jurisdictions, the
    stored similarity encodings must match the decrypted plaintexts.
    expected_data ({epoch: {column: value}}) pins decrypted values to
    what the voter originally submitted.

    Returns {epoch: {column: plaintext}} for all included versions.
    Raises VerificationFailure subclasses, localized via `.at`.
    """
    if not verify_signature(public_key, package.signing_bytes(),
                            package.signature):
        raise BadSignature("package signature does not verify")
    bundle = package.bundle
    if (package.voter_id != bundle.voter_id
            or package.epoch_lo != bundle.epoch_lo
            or package.epoch_hi != bundle.epoch_hi):
        raise HistoryMismatch("package and bundle disagree on the range")
    ok, why = verify_history(package.voter_id, bundle, entries)
    if not ok:
        raise HistoryMismatch(why)

    params = None
    if package.encoding_params is not None:
        from .pprl import EncodingParams
        params = EncodingParams.from_json(package.encoding_params)

    history: dict[int, dict[str, str]] = {}
    for record in _bundle_records(bundle):
        epoch = record.meta.epoch
        if not verify_record_signature(public_key, package.voter_id, record):
            raise BadSignature("record signature does not verify",
                               at=(epoch, None))
        grid = package.keys.get(epoch)
        if grid is None:
            raise KeyMismatch("no keys for an included epoch",
                              at=(epoch, None))
        row: dict[str, str] = {}
        for j, spec in enumerate(schema.columns):
            slot = record.slots[j]
            if not slot.sealed:
                row[spec.label] = slot.plaintext.decode("utf-8")
                continue
            key_hex = grid.get(spec.label)
            if key_hex is None:
                raise KeyMismatch("missing key for a sealed column",
                                  at=(epoch, spec.label))
            try:
                plaintext = open_slot(record, j, from_hex(key_hex))
            except (CipherKeyMismatch, Corrupt) as exc:
                raise KeyMismatch(
                    f"key fails to open {spec.label!r}: {exc}",
                    at=(epoch, spec.label)) from exc
            value = plaintext.decode("utf-8")
            if params is not None and spec.label in params.linkage_fields:
                from .pprl import verify_encoding
                if slot.encoding is None or not verify_encoding(
                        value, slot.encoding, params):
                    raise EncodingMismatch(
                        "stored encoding does not match the plaintext",
                        at=(epoch, spec.label))
            row[spec.label] = value
        history[epoch] = row

    if expected_data is not None:
        for epoch in sorted(expected_data):
            expected_row = expected_data[epoch]
            if epoch not in history:
                raise DataMismatch("expected an update at this epoch",
                                   at=(epoch, None))
            for label, want in expected_row.items():
                got = history[epoch].get(label)
                if got != want:
                    raise DataMismatch(
                        f"value for {label!r} differs from submission",
                        at=(epoch, label))
    return history


# ----------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class AuditVerdict:
    epoch_pair: tuple[int, int]
    ok: bool
    check: str | None = None
    detail: str | None = None

    def to_json(self) -> dict:
        return {"epoch_pair": list(self.epoch_pair), "ok": self.ok,
                "check": self.check, "detail": self.detail}


def audit_pair(old: SnapshotCommitment, new: SnapshotCommitment,
               update_proof, public_key: bytes) -> AuditVerdict:
    """One epoch transition: signatures, adjacency, append-only proof."""
    pair = (old.epoch, new.epoch)
    for com in (old, new):
        if not com.verify(public_key):
            return AuditVerdict(pair, False, "bad_signature",
                                f"epoch {com.epoch} commitment unsigned "
                                "or tampered")
    if new.epoch != old.epoch + 1:
        return AuditVerdict(pair, False, "non_consecutive",
                            "commitments are not for adjacent epochs")
    if update_proof is None:
        return AuditVerdict(pair, False, "consistency_fail",
                            "no append-only proof supplied")
    if update_proof.old_size != old.log_size or \
            update_proof.new_size != new.log_size:
        return AuditVerdict(pair, False, "consistency_fail",
                            "proof bound to different tree sizes")
    if not verify_consistency(old.log_root, new.log_root, update_proof):
        return AuditVerdict(pair, False, "consistency_fail",
                            "log transition is not append-only")
    return AuditVerdict(pair, True)


def audit_chain(entries: list[BulletinEntry],
                public_key: bytes) -> list[AuditVerdict]:
    """Audit every adjacent epoch pair in a bulletin prefix."""
    verdicts = []
    for prev, cur in zip(entries, entries[1:]):
        verdicts.append(audit_pair(prev.commitment, cur.commitment,
                                   cur.update_proof, public_key))
    return verdicts


# ----------------------------------------------------------------------
# disputes


def check_dispute_evidence(artifact, entries: list[BulletinEntry],
                           public_key: bytes, schema) -> tuple[str, str]:
    """Adjudicate a complaint backed by a signed package.

    Packages are verified against the bulletin entry for the epoch they
    themselves name, so an honestly stale package never convicts.
    Returns (verdict, detail) with verdict official_misbehavior when a
    validly signed package fails verification, else claim_unfounded.
    """
    if isinstance(artifact, DisclosurePackage):
        if not verify_signature(public_key, artifact.signing_bytes(),
                                artifact.signature):
            return "claim_unfounded", "package signature invalid"
        if not 0 <= artifact.epoch < len(entries):
            return "claim_unfounded", "package names an unknown epoch"
        try:
            maintenance_receive(artifact,
                                entries[artifact.epoch].commitment,
                                public_key, schema)
        except VerificationFailure as exc:
            return "official_misbehavior", f"{exc.check}: {exc.detail}"
        return "claim_unfounded", "package verifies"
    if isinstance(artifact, QueryPackage):
        if not verify_signature(public_key, artifact.signing_bytes(),
                                artifact.signature):
            return "claim_unfounded", "package signature invalid"
        if artifact.epoch_hi >= len(entries):
            return "claim_unfounded", "package names an unknown epoch"
        try:
            query_verify(artifact, entries, public_key, schema)
        except VerificationFailure as exc:
            return "official_misbehavior", f"{exc.check}: {exc.detail}"
        return "claim_unfounded", "package verifies"
    raise TypeError(f"cannot adjudicate {type(artifact).__name__}")
