"""Column schema, public-visibility predicate, and third-party access policy.

All three are plain JSON files in the registry data directory so a
deployment can be inspected and versioned without any tooling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field


class SchemaMismatch(ValueError):
    """Offered voter data does not line up with the active schema."""


@dataclass(frozen=True)
class ColumnSpec:
    label: str
    pad_len: int
    public_default: bool = False


@dataclass(frozen=True)
class ColumnSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        labels = [c.label for c in self.columns]
        if not labels:
            raise ValueError("schema needs at least one column")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate column labels")
        for col in self.columns:
            if not col.label:
                raise ValueError("column labels must be non-empty")
            if col.pad_len <= 0:
                raise ValueError("pad lengths must be positive")

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.columns]

    def has_column(self, label: str) -> bool:
        return any(c.label == label for c in self.columns)

    def spec(self, label: str) -> ColumnSpec:
        for col in self.columns:
            if col.label == label:
                return col
        raise SchemaMismatch(f"unknown column {label!r}")

    def check_row(self, values: list[str]) -> None:
        if len(values) != self.n_columns:
            raise SchemaMismatch(
                f"row has {len(values)} fields, schema has {self.n_columns}")
        for col, value in zip(self.columns, values):
            if len(value.encode("utf-8")) > col.pad_len:
                raise SchemaMismatch(
                    f"value for {col.label!r} exceeds pad length {col.pad_len}")

    def row_from_mapping(self, values: dict) -> list[str]:
        """Column-ordered row from a label-keyed mapping; all columns
        must be present and no extras allowed."""
        extra = set(values) - set(self.labels)
        if extra:
            raise SchemaMismatch(f"unknown columns: {sorted(extra)}")
        missing = [label for label in self.labels if label not in values]
        if missing:
            raise SchemaMismatch(f"missing columns: {missing}")
        return [values[label] for label in self.labels]

    def to_json(self) -> dict:
        return {"columns": [{"label": c.label, "pad_len": c.pad_len,
                             "public_default": c.public_default}
                            for c in self.columns]}

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnSchema":
        return cls(tuple(ColumnSpec(c["label"], int(c["pad_len"]),
                                    bool(c.get("public_default", False)))
                         for c in obj["columns"]))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ColumnSchema":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def default_schema() -> ColumnSchema:
    return ColumnSchema((
        ColumnSpec("name", 64),
        ColumnSpec("dob", 16),
        ColumnSpec("address", 128),
        ColumnSpec("status", 16, public_default=True),
    ))


@dataclass
class PublicPredicate:
    """Total predicate: is a (voter, column) cell publicly readable?

    Column defaults come from the schema; per-voter overrides win.
    """
    schema: ColumnSchema
    overrides: dict[str, dict[str, bool]] = field(default_factory=dict)

    def is_public(self, voter_id_hex: str, label: str) -> bool:
        per_voter = self.overrides.get(voter_id_hex, {})
        if label in per_voter:
            return per_voter[label]
        return self.schema.spec(label).public_default

    def set_override(self, voter_id_hex: str, label: str, public: bool) -> None:
        self.schema.spec(label)
        self.overrides.setdefault(voter_id_hex, {})[label] = public


class UnknownThirdParty(ValueError):
    """Access policy has no entry for this party."""


@dataclass
class AccessPolicy:
    """Deny-by-default grants: party -> (voter pattern, column pattern).

    A pattern of "*" matches everything; anything else matches exactly.
    """
    grants: dict[str, list[dict]] = field(default_factory=dict)

    def parties(self) -> list[str]:
        return sorted(self.grants)

    def require_party(self, party: str) -> None:
        if party not in self.grants:
            raise UnknownThirdParty(f"no policy entry for {party!r}")

    def allows(self, party: str, voter_id_hex: str, label: str) -> bool:
        for rule in self.grants.get(party, []):
            voter_ok = rule.get("voter", "*") in ("*", voter_id_hex)
            column_ok = rule.get("column", "*") in ("*", label)
            if voter_ok and column_ok:
                return True
        return False

    def grant(self, party: str, voter: str = "*", column: str = "*") -> None:
        self.grants.setdefault(party, []).append(
            {"voter": voter, "column": column})


def save_policy(path: str, predicate: PublicPredicate,
                access: AccessPolicy) -> None:
    payload = {"public_overrides": predicate.overrides,
               "access": access.grants}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_policy(path: str, schema: ColumnSchema) -> tuple[PublicPredicate, AccessPolicy]:
    with open(path) as fh:
        payload = json.load(fh)
    predicate = PublicPredicate(schema, payload.get("public_overrides", {}))
    access = AccessPolicy(payload.get("access", {}))
    return predicate, access
