"""HTTP front end: authenticated writes for officials, public reads.

The app wraps one Registry instance.  All mutations serialize through a
non-blocking writer lock (a second concurrent write gets 503); reads
take a short state lock around proof generation, so they only ever see
committed epochs.  Responses are the same canonical JSON structures the
CLI verifies offline, digests hex-encoded.
"""
from __future__ import annotations

import hmac
import json
import os
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

from . import workflows as wf
from .crypto import MasterKeys
from .registry import CorruptState, RangeOutOfBounds, Registry
from .schema import SchemaMismatch, UnknownThirdParty
from .wire import from_hex, to_hex


@dataclass
class ServiceConfig:
    data_dir: str
    keystore_path: str
    tokens: tuple[str, ...] = ()
    host: str = "127.0.0.1"
    port: int = 8080
    epoch_interval: float | None = None  # seconds; None disables the timer
    encoding_params_path: str | None = None

    @classmethod
    def from_sources(cls, env=None, config_path: str | None = None,
                     **overrides) -> "ServiceConfig":
        """Environment first, config file second, keyword overrides last."""
        env = os.environ if env is None else env
        values: dict = {}
        if env.get("OPENROLL_DATA"):
            values["data_dir"] = env["OPENROLL_DATA"]
        if env.get("OPENROLL_KEYS"):
            values["keystore_path"] = env["OPENROLL_KEYS"]
        if env.get("OPENROLL_TOKEN"):
            values["tokens"] = (env["OPENROLL_TOKEN"],)
        if config_path:
            with open(config_path) as fh:
                loaded = json.load(fh)
            if "tokens" in loaded:
                loaded["tokens"] = tuple(loaded["tokens"])
            values.update(loaded)
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "data_dir" not in values or "keystore_path" not in values:
            raise ValueError("data_dir and keystore_path are required")
        return cls(**values)


class ApiError(Exception):
    def __init__(self, status: int, detail: str, body: dict | None = None):
        super().__init__(detail)
        self.status = status
        self.detail = detail
        self.body = body


class EpochTimer(threading.Thread):
    """Pushes an epoch every interval until stopped."""

    def __init__(self, push, interval: float):
        super().__init__(daemon=True)
        self.push = push
        self.interval = interval
        self.stopped = threading.Event()

    def run(self):
        while not self.stopped.wait(self.interval):
            try:
                self.push()
            except Exception:
                pass  # a busy writer just means the next tick retries

    def stop(self):
        self.stopped.set()
        self.join(timeout=2.0)


def _parse_voter_id(text: str) -> bytes:
    try:
        voter_id = from_hex(text)
    except ValueError:
        raise ApiError(422, "voter id must be hex")
    if len(voter_id) != 32:
        raise ApiError(422, "voter id must be 32 bytes of hex")
    return voter_id


def _require_values(payload: dict) -> dict:
    values = payload.get("values")
    if not isinstance(values, dict) or \
            not all(isinstance(v, str) for v in values.values()):
        raise ApiError(422, "values must be a string-to-string object")
    return values


def create_app(config: ServiceConfig) -> FastAPI:
    master = MasterKeys.load(config.keystore_path)
    encoding_params = None
    encoder = None
    if config.encoding_params_path:
        from .pprl import EncodingParams, make_encoder
        with open(config.encoding_params_path) as fh:
            encoding_params = json.load(fh)
        encoder = make_encoder(EncodingParams.from_json(encoding_params))

    fresh = not os.path.exists(os.path.join(config.data_dir,
                                            "bulletin.jsonl"))
    registry = Registry(config.data_dir, master, create=fresh,
                        encoder=encoder, encoding_params=encoding_params)

    state_lock = threading.RLock()
    writer_lock = threading.Lock()
    timer: EpochTimer | None = None

    def timed_push():
        if not writer_lock.acquire(blocking=False):
            raise RuntimeError("writer busy")
        try:
            with state_lock:
                registry.push_epoch()
        finally:
            writer_lock.release()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        nonlocal timer
        if config.epoch_interval:
            timer = EpochTimer(timed_push, config.epoch_interval)
            timer.start()
        yield
        if timer is not None:
            timer.stop()
        with state_lock:
            registry.close()

    app = FastAPI(title="openroll", lifespan=lifespan)

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        body = exc.body if exc.body is not None else {"detail": exc.detail}
        return JSONResponse(status_code=exc.status, content=body)

    def check_token(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header.startswith("Bearer "):
            presented = header[len("Bearer "):]
            for token in config.tokens:
                if hmac.compare_digest(presented, token):
                    return
        raise ApiError(401, "missing or invalid bearer token")

    def authorized(request: Request) -> bool:
        try:
            check_token(request)
            return True
        except ApiError:
            return False

    def run_write(fn):
        """Serialize a mutation; a concurrently held writer means 503."""
        if not writer_lock.acquire(blocking=False):
            raise ApiError(503, "another write is in progress")
        try:
            with state_lock:
                return fn()
        except wf.AlreadyRegistered as exc:
            raise ApiError(409, str(exc))
        except wf.AlreadyDeregistered as exc:
            raise ApiError(409, str(exc))
        except wf.UnknownVoter as exc:
            raise ApiError(404, str(exc))
        except wf.BaseSystemReject as exc:
            raise ApiError(403, str(exc))
        except SchemaMismatch as exc:
            raise ApiError(422, str(exc))
        finally:
            writer_lock.release()

    # ------------------------------------------------------------------
    # writes

    @app.post("/v1/voters", status_code=201)
    async def register(payload: dict, request: Request):
        check_token(request)
        base_id = payload.get("base_id")
        if not isinstance(base_id, str) or not base_id:
            raise ApiError(422, "base_id must be a non-empty string")
        values = _require_values(payload)

        def op():
            voter_id = wf.register_voter(registry, base_id, values)
            return {"voter_id": to_hex(voter_id),
                    "epoch": registry.target_epoch}
        return run_write(op)

    @app.put("/v1/voters/{voter_id_hex}")
    async def update(voter_id_hex: str, payload: dict, request: Request):
        check_token(request)
        voter_id = _parse_voter_id(voter_id_hex)
        values = _require_values(payload)

        def op():
            record = wf.update_registration(registry, voter_id, values)
            return {"voter_id": voter_id_hex, "epoch": record.meta.epoch,
                    "sequence": record.meta.sequence}
        return run_write(op)

    @app.delete("/v1/voters/{voter_id_hex}")
    async def deregister(voter_id_hex: str, request: Request,
                         payload: dict | None = None):
        check_token(request)
        voter_id = _parse_voter_id(voter_id_hex)
        values = None
        if payload and "values" in payload:
            values = _require_values(payload)

        def op():
            record = wf.deregister_voter(registry, voter_id, values)
            return {"voter_id": voter_id_hex, "epoch": record.meta.epoch,
                    "sequence": record.meta.sequence,
                    "opcode": record.meta.opcode}
        return run_write(op)

    @app.post("/v1/epochs/push")
    async def push_epoch(request: Request):
        check_token(request)

        def op():
            return registry.push_epoch().to_json()
        return run_write(op)

    @app.post("/v1/disclosures")
    async def disclose(payload: dict, request: Request):
        check_token(request)
        party = payload.get("third_party")
        ids = payload.get("voter_ids")
        if not isinstance(party, str) or not isinstance(ids, list):
            raise ApiError(422, "need third_party and voter_ids")
        voter_ids = [_parse_voter_id(v) for v in ids]
        try:
            with state_lock:
                package = wf.maintenance_disclose(registry, party, voter_ids)
        except UnknownThirdParty as exc:
            raise ApiError(404, str(exc))
        return package.to_json()

    # ------------------------------------------------------------------
    # reads

    @app.get("/v1/voters/{voter_id_hex}")
    async def lookup(voter_id_hex: str):
        voter_id = _parse_voter_id(voter_id_hex)
        with state_lock:
            result = registry.lookup(voter_id)
        body = result.to_json()
        body["voter_id"] = voter_id_hex
        if result.record is None:
            # absence is a claim too: the 404 body carries its proof
            raise ApiError(404, "voter not in the committed map", body=body)
        return body

    @app.get("/v1/voters/{voter_id_hex}/history")
    async def history(voter_id_hex: str, request: Request,
                      frm: int | None = Query(None, alias="from"),
                      to: int | None = None):
        voter_id = _parse_voter_id(voter_id_hex)
        lo = 1 if frm is None else frm
        with state_lock:
            hi = registry.epoch if to is None else to
            try:
                if authorized(request):
                    return wf.query_prepare(registry, voter_id, lo,
                                            hi).to_json()
                if not registry.voter_updates(voter_id) and \
                        registry.map.get(voter_id) is None:
                    raise wf.UnknownVoter(
                        f"no registration for {voter_id_hex}")
                bundle = registry.history(voter_id, lo, hi)
            except RangeOutOfBounds as exc:
                raise ApiError(422, str(exc))
            except wf.UnknownVoter as exc:
                raise ApiError(404, str(exc))
        return {"voter_id": voter_id_hex, "epoch_lo": lo, "epoch_hi": hi,
                "bundle": bundle.to_json()}

    @app.get("/v1/bulletin")
    async def bulletin():
        with state_lock:
            entries = list(registry.entries)
        return {"entries": [e.to_json() for e in entries]}

    @app.get("/v1/bulletin/{epoch}")
    async def bulletin_epoch(epoch: int):
        with state_lock:
            if not 0 <= epoch <= registry.epoch:
                raise ApiError(404, f"no commitment for epoch {epoch}")
            entry = registry.entries[epoch]
        return entry.to_json()

    @app.get("/v1/info")
    async def info():
        with state_lock:
            return {
                "epoch": registry.epoch,
                "log_size": registry.log.size,
                "public_key": to_hex(master.public_key),
                "columns": registry.schema.to_json()["columns"],
                "linkage": registry.encoding_params is not None,
            }

    app.state.registry = registry
    app.state.config = config
    app.state.writer_lock = writer_lock
    return app


def run_service(config: ServiceConfig) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
