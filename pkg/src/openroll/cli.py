"""Role-oriented command line: official, voter, auditor, dedup, serve.

Every verification path works offline from exported files.  Successful
commands print JSON on stdout; failures print one JSON error object on
stderr and exit 1 (operational) or 2 (verification rejected).
"""
from __future__ import annotations

import csv
import functools
import json
import sys
import time
import urllib.request

import click

from .bulletin import verify_bulletin
from .crypto import MasterKeys
from .pprl import EncodingParams, ParamMismatch, encode_registry, \
    match_registries
from .registry import BulletinEntry, Registry
from .schema import AccessPolicy, ColumnSchema
from .service import ServiceConfig, run_service
from .wire import from_hex, to_hex
from .workflows import VerificationFailure, audit_pair, deregister_voter, \
    maintenance_disclose, query_verify, register_voter, update_registration
from . import workflows as wf


def _fail(code: int, error: str, **extra) -> None:
    payload = {"error": error}
    payload.update({k: v for k, v in extra.items() if v is not None})
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def _jsonable(at):
    if isinstance(at, tuple):
        return list(at)
    return at


def guarded(fn):
    """Map exceptions onto the exit-code contract."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VerificationFailure as exc:
            where = f" at {exc.at}" if exc.at is not None else ""
            click.echo(f"FAILED {exc.check}{where}")
            _fail(2, exc.check, detail=str(exc), at=_jsonable(exc.at))
        except (ValueError, RuntimeError, OSError, KeyError) as exc:
            _fail(1, type(exc).__name__, detail=str(exc))
    return wrapper


def _echo(obj) -> None:
    click.echo(json.dumps(obj, indent=2))


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _open_registry(data: str, keys: str) -> Registry:
    return Registry(data, MasterKeys.load(keys))


def _parse_fields(pairs: tuple) -> dict:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--field wants label=value, got {pair!r}")
        label, _, value = pair.partition("=")
        values[label] = value
    return values


@click.group()
def main() -> None:
    """Verifiable voter-registration registry tools."""


# ----------------------------------------------------------------------
# official

@main.group()
def official() -> None:
    """Registrar-side operations (need the master keystore)."""


@official.command("init-keys")
@click.option("--out", required=True, type=click.Path())
@click.option("--force", is_flag=True, default=False)
@guarded
def init_keys(out: str, force: bool) -> None:
    import os
    if os.path.exists(out) and not force:
        _fail(1, "KeystoreExists",
              detail=f"{out} already exists; pass --force to overwrite")
    master = MasterKeys.generate()
    master.save(out)
    _echo({"keystore": out, "public_key": to_hex(master.public_key)})


@official.command("init")
@click.option("--data", required=True, type=click.Path())
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", type=click.Path(exists=True))
@click.option("--linkage", "linkage_path", type=click.Path(exists=True))
@click.option("--grant", "grants", multiple=True,
              help="third party allowed to receive disclosures")
@guarded
def init(data: str, keys: str, schema_path: str | None,
         linkage_path: str | None, grants: tuple) -> None:
    master = MasterKeys.load(keys)
    schema = ColumnSchema.load(schema_path) if schema_path else None
    encoder = encoding_params = None
    if linkage_path:
        from .pprl import make_encoder
        params = EncodingParams.from_json(_load_json(linkage_path))
        encoder = make_encoder(params)
        encoding_params = params.to_json()
    access = AccessPolicy()
    for party in grants:
        access.grant(party)
    reg = Registry(data, master, create=True, schema=schema, access=access,
                   encoder=encoder, encoding_params=encoding_params)
    reg.close()
    _echo({"data": data, "epoch": 0, "linkage": linkage_path is not None})


@official.command("register")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--base-id")
@click.option("--field", "fields", multiple=True, help="label=value")
@click.option("--csv", "csv_path", type=click.Path(exists=True),
              help="bulk ingest; header = base_id plus schema labels")
@guarded
def register(data: str, keys: str, base_id: str | None, fields: tuple,
             csv_path: str | None) -> None:
    if (base_id is None) == (csv_path is None):
        raise click.UsageError("pass either --base-id/--field or --csv")
    reg = _open_registry(data, keys)
    try:
        voters = {}
        if base_id is not None:
            voters[base_id] = to_hex(
                register_voter(reg, base_id, _parse_fields(fields)))
        else:
            with open(csv_path, newline="") as fh:
                reader = csv.DictReader(fh)
                for line, row in enumerate(reader, start=2):
                    if None in row or None in row.values():
                        _fail(1, "SchemaMismatch", row=line,
                              detail="row width does not match header")
                    rid = row.pop("base_id", None)
                    if rid is None:
                        _fail(1, "SchemaMismatch", row=line,
                              detail="no base_id column")
                    try:
                        voters[rid] = to_hex(register_voter(reg, rid, row))
                    except Exception as exc:
                        _fail(1, type(exc).__name__, row=line,
                              detail=str(exc))
        _echo({"registered": len(voters), "epoch": reg.target_epoch,
               "voters": voters})
    finally:
        reg.close()


@official.command("update")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--voter-id", required=True)
@click.option("--field", "fields", multiple=True, required=True)
@guarded
def update(data: str, keys: str, voter_id: str, fields: tuple) -> None:
    reg = _open_registry(data, keys)
    try:
        record = update_registration(reg, from_hex(voter_id),
                                     _parse_fields(fields))
        _echo({"voter_id": voter_id, "epoch": record.meta.epoch,
               "sequence": record.meta.sequence})
    finally:
        reg.close()


@official.command("deregister")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--voter-id", required=True)
@guarded
def deregister(data: str, keys: str, voter_id: str) -> None:
    reg = _open_registry(data, keys)
    try:
        record = deregister_voter(reg, from_hex(voter_id))
        _echo({"voter_id": voter_id, "epoch": record.meta.epoch,
               "sequence": record.meta.sequence, "opcode": "deregister"})
    finally:
        reg.close()


@official.command("push-epoch")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@guarded
def push_epoch(data: str, keys: str) -> None:
    reg = _open_registry(data, keys)
    try:
        entry = reg.push_epoch()
        _echo(entry.to_json())
    finally:
        reg.close()


@official.command("disclose")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--party", required=True)
@click.option("--voter-id", "voter_ids", multiple=True, required=True)
@click.option("--out", required=True, type=click.Path())
@guarded
def disclose(data: str, keys: str, party: str, voter_ids: tuple,
             out: str) -> None:
    reg = _open_registry(data, keys)
    try:
        package = maintenance_disclose(reg, party,
                                       [from_hex(v) for v in voter_ids])
        with open(out, "w") as fh:
            json.dump(package.to_json(), fh, indent=2)
            fh.write("\n")
        _echo({"written": out, "epoch": package.epoch,
               "voters": len(package.voters)})
    finally:
        reg.close()


# ----------------------------------------------------------------------
# voter

def _http_json(url: str, token: str | None = None):
    request = urllib.request.Request(url)
    if token:
        request.add_header("Authorization", f"Bearer {token}")
    with urllib.request.urlopen(request) as resp:
        return json.loads(resp.read())


@main.group()
def voter() -> None:
    """Query a registry over HTTP and verify the answer offline."""


@voter.command("query")
@click.option("--url", required=True, help="service base URL")
@click.option("--voter-id", required=True)
@click.option("--token", required=True,
              help="grants the field keys in the reply")
@click.option("--from", "epoch_lo", type=int, default=None)
@click.option("--to", "epoch_hi", type=int, default=None)
@click.option("--out", required=True, type=click.Path(),
              help="directory for package.json, bulletin.json, info.json")
@guarded
def voter_query(url: str, voter_id: str, token: str, epoch_lo: int | None,
                epoch_hi: int | None, out: str) -> None:
    import os
    base = url.rstrip("/")
    query = []
    if epoch_lo is not None:
        query.append(f"from={epoch_lo}")
    if epoch_hi is not None:
        query.append(f"to={epoch_hi}")
    suffix = "?" + "&".join(query) if query else ""
    package = _http_json(f"{base}/v1/voters/{voter_id}/history{suffix}",
                         token)
    bulletin = _http_json(f"{base}/v1/bulletin")
    info = _http_json(f"{base}/v1/info")
    os.makedirs(out, exist_ok=True)
    for name, obj in (("package", package), ("bulletin", bulletin),
                      ("info", info)):
        with open(os.path.join(out, f"{name}.json"), "w") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
    _echo({"saved": out, "epoch_lo": package["epoch_lo"],
           "epoch_hi": package["epoch_hi"]})


@voter.command("verify")
@click.option("--dir", "in_dir", type=click.Path(exists=True),
              help="directory written by voter query")
@click.option("--package", "package_path", type=click.Path(exists=True))
@click.option("--bulletin", "bulletin_path", type=click.Path(exists=True))
@click.option("--info", "info_path", type=click.Path(exists=True))
@click.option("--expected", "expected_path", type=click.Path(exists=True),
              help="pin decrypted values: {epoch: {label: value}}")
@guarded
def voter_verify(in_dir: str | None, package_path: str | None,
                 bulletin_path: str | None, info_path: str | None,
                 expected_path: str | None) -> None:
    import os
    if in_dir:
        package_path = package_path or os.path.join(in_dir, "package.json")
        bulletin_path = bulletin_path or os.path.join(in_dir,
                                                      "bulletin.json")
        info_path = info_path or os.path.join(in_dir, "info.json")
    if not (package_path and bulletin_path and info_path):
        raise click.UsageError("need --dir or all of --package/--bulletin/"
                               "--info")
    package = wf.QueryPackage.from_json(_load_json(package_path))
    entries = [BulletinEntry.from_json(e)
               for e in _load_json(bulletin_path)["entries"]]
    info = _load_json(info_path)
    public_key = from_hex(info["public_key"])
    schema = ColumnSchema.from_json({"columns": info["columns"]})

    if len(entries) <= package.epoch_hi:
        click.echo("FAILED missing_commitment")
        _fail(2, "MissingCommitment",
              detail=f"bulletin ends at epoch {len(entries) - 1}, package "
                     f"needs epoch {package.epoch_hi}")
    ok, why = verify_bulletin(entries, public_key)
    if not ok:
        click.echo("FAILED bad_bulletin")
        _fail(2, "BadBulletin", detail=why)
    expected = None
    if expected_path:
        raw = _load_json(expected_path)
        expected = {int(epoch): row for epoch, row in raw.items()}
    history = query_verify(package, entries, public_key, schema,
                           expected_data=expected)
    click.echo(f"VERIFIED epochs {package.epoch_lo}..{package.epoch_hi}")
    _echo({"verified": True, "epoch_lo": package.epoch_lo,
           "epoch_hi": package.epoch_hi,
           "history": {str(e): row for e, row in sorted(history.items())}})


# ----------------------------------------------------------------------
# auditor

@main.group()
def auditor() -> None:
    """Check that published commitments extend one another."""


def _public_key_from(info_path: str | None, public_key: str | None) -> bytes:
    if public_key:
        return from_hex(public_key)
    if info_path:
        return from_hex(_load_json(info_path)["public_key"])
    raise click.UsageError("need --public-key or --info")


@auditor.command("audit")
@click.option("--bulletin", "bulletin_path", required=True,
              type=click.Path(exists=True))
@click.option("--public-key")
@click.option("--info", "info_path", type=click.Path(exists=True))
@click.option("--old", required=True, type=int)
@click.option("--new", required=True, type=int)
@guarded
def audit(bulletin_path: str, public_key: str | None,
          info_path: str | None, old: int, new: int) -> None:
    if new != old + 1:
        raise click.UsageError(
            f"audit covers one adjacent pair; {old} and {new} are not")
    key = _public_key_from(info_path, public_key)
    entries = [BulletinEntry.from_json(e)
               for e in _load_json(bulletin_path)["entries"]]
    if new >= len(entries) or old < 0:
        _fail(1, "RangeOutOfBounds",
              detail=f"bulletin holds epochs 0..{len(entries) - 1}")
    verdict = audit_pair(entries[old].commitment, entries[new].commitment,
                         entries[new].update_proof, key)
    _echo(verdict.to_json())
    if not verdict.ok:
        sys.exit(2)


@auditor.command("watch")
@click.option("--url", required=True)
@click.option("--once", is_flag=True, default=False)
@click.option("--interval", type=float, default=10.0)
@click.option("--evidence", "evidence_path", type=click.Path(),
              help="where to save failing verdicts and their entries")
@guarded
def watch(url: str, once: bool, interval: float,
          evidence_path: str | None) -> None:
    base = url.rstrip("/")
    checked = 0
    while True:
        info = _http_json(f"{base}/v1/info")
        key = from_hex(info["public_key"])
        entries = [BulletinEntry.from_json(e)
                   for e in _http_json(f"{base}/v1/bulletin")["entries"]]
        while checked + 1 < len(entries):
            old, new = entries[checked], entries[checked + 1]
            verdict = audit_pair(old.commitment, new.commitment,
                                 new.update_proof, key)
            if not verdict.ok:
                if evidence_path:
                    with open(evidence_path, "w") as fh:
                        json.dump({"verdict": verdict.to_json(),
                                   "old": old.to_json(),
                                   "new": new.to_json()}, fh, indent=2)
                        fh.write("\n")
                _echo(verdict.to_json())
                sys.exit(2)
            checked += 1
        if once:
            _echo({"accepted_pairs": checked, "epoch": len(entries) - 1})
            return
        time.sleep(interval)


# ----------------------------------------------------------------------
# dedup

@main.group()
def dedup() -> None:
    """Cross-registry linkage on similarity encodings, never plaintext."""


@dedup.command("encode-registry")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@guarded
def encode_registry_cmd(data: str, keys: str, params_path: str,
                        out: str) -> None:
    params = EncodingParams.from_json(_load_json(params_path))
    reg = _open_registry(data, keys)
    try:
        rows = encode_registry(reg, params)
    finally:
        reg.close()
    manifest = {"params": params.to_json(),
                "rows": {rid: {label: to_hex(bits)
                               for label, bits in encs.items()}
                         for rid, encs in rows}}
    with open(out, "w") as fh:
        json.dump(manifest, fh)
        fh.write("\n")
    _echo({"written": out, "rows": len(rows)})


def _load_manifest(path: str) -> tuple[EncodingParams, list]:
    manifest = _load_json(path)
    params = EncodingParams.from_json(manifest["params"])
    rows = [(rid, {label: from_hex(bits)
                   for label, bits in encs.items()})
            for rid, encs in manifest["rows"].items()]
    return params, rows


@dedup.command("match")
@click.option("--left", "left_path", required=True,
              type=click.Path(exists=True))
@click.option("--right", "right_path", required=True,
              type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.8)
@click.option("--out", required=True, type=click.Path())
@guarded
def match(left_path: str, right_path: str, threshold: float,
          out: str) -> None:
    left_params, left_rows = _load_manifest(left_path)
    right_params, right_rows = _load_manifest(right_path)
    if left_params != right_params:
        raise ParamMismatch("the two registries were encoded under "
                            "different parameters")
    candidates = match_registries(left_rows, right_rows, left_params,
                                  threshold=threshold)
    fields = list(left_params.linkage_fields)
    with open(out, "w") as fh:
        fh.write("left_id,right_id,score," + ",".join(fields) + "\n")
        for cand in candidates:
            per_field = ",".join(f"{cand.field_scores[f]:.4f}"
                                 for f in fields)
            fh.write(f"{cand.left_id},{cand.right_id},{cand.score:.4f},"
                     f"{per_field}\n")
    _echo({"written": out, "candidates": len(candidates),
           "threshold": threshold})


# ----------------------------------------------------------------------
# service and bench

@main.command("serve")
@click.option("--data", required=True, type=click.Path())
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--token", "tokens", multiple=True, required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.option("--epoch-interval", type=float, default=None,
              help="seconds between automatic epoch pushes")
@click.option("--linkage", "linkage_path", type=click.Path(exists=True))
@guarded
def serve(data: str, keys: str, tokens: tuple, host: str, port: int,
          epoch_interval: float | None, linkage_path: str | None) -> None:
    """Run the HTTP registry service."""
    run_service(ServiceConfig(data_dir=data, keystore_path=keys,
                              tokens=tuple(tokens), host=host, port=port,
                              epoch_interval=epoch_interval,
                              encoding_params_path=linkage_path))


@main.group()
def bench() -> None:
    """Latency and storage measurements on synthetic workloads."""


@bench.command("run")
@click.option("--sizes", required=True,
              help="comma-separated record counts, e.g. 1000,10000")
@click.option("--record-size", type=int, default=1024)
@click.option("--samples", type=int, default=32)
@click.option("--seed", type=int, default=7)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--epoch-batch", type=int, default=10_000)
@guarded
def bench_run(sizes: str, record_size: int, samples: int, seed: int,
              out_dir: str, epoch_batch: int) -> None:
    from .bench import run_bench
    parsed = [int(s) for s in sizes.split(",") if s]
    report = run_bench(parsed, record_size=record_size, samples=samples,
                       seed=seed, out_dir=out_dir, epoch_batch=epoch_batch)
    _echo(report.to_json())


if __name__ == "__main__":
    main()
