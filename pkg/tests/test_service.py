"""HTTP layer: auth, error mapping, proofs in responses, restart."""
import json
import os
import threading

import pytest
from fastapi.testclient import TestClient

from openroll.crypto import MasterKeys, verify_signature
from openroll.registry import (CorruptState, LookupResult, Registry,
                               verify_lookup)
from openroll.schema import AccessPolicy
from openroll.service import ServiceConfig, create_app
from openroll.wire import from_hex, to_hex
from openroll.workflows import (DisclosurePackage, QueryPackage,
                                maintenance_receive, query_verify)

TOKEN = "test-write-token"
AUTH = {"Authorization": f"Bearer {TOKEN}"}

ROW = {"name": "Ada Quill", "dob": "1969-07-20",
       "address": "4 Loop Road, Milltown", "status": "active"}


@pytest.fixture()
def config(tmp_path):
    keys_path = str(tmp_path / "keys.json")
    MasterKeys.generate().save(keys_path)
    return ServiceConfig(data_dir=str(tmp_path / "data"),
                         keystore_path=keys_path, tokens=(TOKEN,))


@pytest.fixture()
def client(config):
    os.makedirs(config.data_dir, exist_ok=True)
    app = create_app(config)
    with TestClient(app) as client:
        client.app = app
        yield client


def _register(client, base_id="base-001", row=ROW):
    resp = client.post("/v1/voters", headers=AUTH,
                       json={"base_id": base_id, "values": row})
    assert resp.status_code == 201, resp.text
    return resp.json()["voter_id"]


def _push(client):
    resp = client.post("/v1/epochs/push", headers=AUTH)
    assert resp.status_code == 200, resp.text
    return resp.json()


class TestAuth:
    def test_write_without_token_rejected(self, client):
        resp = client.post("/v1/voters",
                           json={"base_id": "x", "values": ROW})
        assert resp.status_code == 401

    def test_wrong_token_rejected(self, client):
        resp = client.post("/v1/epochs/push",
                           headers={"Authorization": "Bearer nope"})
        assert resp.status_code == 401

    def test_malformed_header_rejected(self, client):
        resp = client.post("/v1/epochs/push",
                           headers={"Authorization": TOKEN})
        assert resp.status_code == 401

    def test_reads_need_no_token(self, client):
        assert client.get("/v1/bulletin").status_code == 200
        assert client.get("/v1/info").status_code == 200

    def test_all_mutating_routes_guarded(self, client):
        vid = "00" * 32
        checks = [
            client.post("/v1/voters", json={"base_id": "x", "values": ROW}),
            client.put(f"/v1/voters/{vid}", json={"values": ROW}),
            client.delete(f"/v1/voters/{vid}"),
            client.post("/v1/epochs/push"),
            client.post("/v1/disclosures",
                        json={"third_party": "p", "voter_ids": []}),
        ]
        assert [r.status_code for r in checks] == [401] * 5


class TestLifecycle:
    def test_register_returns_id_and_epoch(self, client):
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "base-001", "values": ROW})
        assert resp.status_code == 201
        body = resp.json()
        assert len(from_hex(body["voter_id"])) == 32
        assert body["epoch"] == 1

    def test_lookup_after_push_carries_verifying_proof(self, client):
        vid = _register(client)
        _push(client)
        resp = client.get(f"/v1/voters/{vid}")
        assert resp.status_code == 200
        result = LookupResult.from_json(resp.json())
        info = client.get("/v1/info").json()
        ok, why = verify_lookup(from_hex(vid), result,
                                from_hex(info["public_key"]))
        assert ok, why
        assert result.record.meta.opcode == "add"

    def test_absent_voter_404_body_proves_absence(self, client):
        _register(client)
        _push(client)
        ghost = "ab" * 32
        resp = client.get(f"/v1/voters/{ghost}")
        assert resp.status_code == 404
        result = LookupResult.from_json(resp.json())
        assert result.record is None
        info = client.get("/v1/info").json()
        ok, why = verify_lookup(from_hex(ghost), result,
                                from_hex(info["public_key"]))
        assert ok, why

    def test_update_then_deregister(self, client):
        vid = _register(client)
        _push(client)
        new_row = dict(ROW, address="9 Back Lane, Milltown")
        resp = client.put(f"/v1/voters/{vid}", headers=AUTH,
                          json={"values": new_row})
        assert resp.status_code == 200
        assert resp.json()["sequence"] == 1
        resp = client.delete(f"/v1/voters/{vid}", headers=AUTH)
        assert resp.status_code == 200
        assert resp.json()["opcode"] == "deregister"
        _push(client)
        looked = client.get(f"/v1/voters/{vid}")
        assert looked.status_code == 200
        assert looked.json()["record"]["opcode"] == "deregister"

    def test_double_register_conflicts(self, client):
        _register(client)
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "base-001", "values": ROW})
        assert resp.status_code == 409

    def test_update_unknown_voter_404(self, client):
        resp = client.put(f"/v1/voters/{'cd' * 32}", headers=AUTH,
                          json={"values": ROW})
        assert resp.status_code == 404

    def test_deregister_twice_conflicts(self, client):
        vid = _register(client)
        client.delete(f"/v1/voters/{vid}", headers=AUTH)
        resp = client.delete(f"/v1/voters/{vid}", headers=AUTH)
        assert resp.status_code == 409

    def test_bad_hex_id_422(self, client):
        assert client.get("/v1/voters/zz").status_code == 422

    def test_short_hex_id_422(self, client):
        assert client.get("/v1/voters/abcd").status_code == 422

    def test_unknown_column_422(self, client):
        bad = dict(ROW, shoe_size="44")
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "b", "values": bad})
        assert resp.status_code == 422

    def test_oversize_value_422(self, client):
        bad = dict(ROW, dob="x" * 200)
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "b", "values": bad})
        assert resp.status_code == 422

    def test_non_string_values_422(self, client):
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "b", "values": {"name": 3}})
        assert resp.status_code == 422


class TestEpochsAndBulletin:
    def test_push_returns_signed_entry(self, client):
        _register(client)
        entry = _push(client)
        assert entry["commitment"]["epoch"] == 1
        info = client.get("/v1/info").json()
        from openroll.registry import BulletinEntry
        parsed = BulletinEntry.from_json(entry)
        assert parsed.commitment.verify(from_hex(info["public_key"]))

    def test_bulletin_lists_all_epochs(self, client):
        _register(client)
        _push(client)
        _push(client)
        entries = client.get("/v1/bulletin").json()["entries"]
        assert [e["commitment"]["epoch"] for e in entries] == [0, 1, 2]

    def test_bulletin_single_epoch(self, client):
        _register(client)
        _push(client)
        entry = client.get("/v1/bulletin/1").json()
        assert entry["commitment"]["epoch"] == 1
        assert client.get("/v1/bulletin/9").status_code == 404

    def test_info_reports_epoch_and_columns(self, client):
        info = client.get("/v1/info").json()
        assert info["epoch"] == 0
        labels = [c["label"] for c in info["columns"]]
        assert labels == ["name", "dob", "address", "status"]
        assert info["linkage"] is False


class TestHistoryRoutes:
    def _fill(self, client):
        vid = _register(client)
        _push(client)
        client.put(f"/v1/voters/{vid}", headers=AUTH,
                   json={"values": dict(ROW, status="moved")})
        _push(client)
        _push(client)
        return vid

    def test_public_history_has_bundle_no_keys(self, client):
        vid = self._fill(client)
        resp = client.get(f"/v1/voters/{vid}/history")
        assert resp.status_code == 200
        body = resp.json()
        assert body["epoch_lo"] == 1 and body["epoch_hi"] == 3
        assert "bundle" in body and "keys" not in body

    def test_tokened_history_is_full_query_package(self, client):
        vid = self._fill(client)
        resp = client.get(f"/v1/voters/{vid}/history?from=1&to=3",
                          headers=AUTH)
        assert resp.status_code == 200
        package = QueryPackage.from_json(resp.json())
        info = client.get("/v1/info").json()
        entries = {e["commitment"]["epoch"]: e for e in
                   client.get("/v1/bulletin").json()["entries"]}
        from openroll.registry import BulletinEntry
        parsed = {k: BulletinEntry.from_json(v) for k, v in entries.items()}
        table = query_verify(package, parsed,
                             from_hex(info["public_key"]),
                             client.app.state.registry.schema)
        assert table[1]["name"] == ROW["name"]
        assert table[2]["status"] == "moved"

    def test_history_range_bounds_422(self, client):
        vid = self._fill(client)
        resp = client.get(f"/v1/voters/{vid}/history?from=2&to=99")
        assert resp.status_code == 422

    def test_history_unknown_voter_404(self, client):
        self._fill(client)
        resp = client.get(f"/v1/voters/{'ee' * 32}/history")
        assert resp.status_code == 404


class TestDisclosures:
    def test_disclosure_round_trip(self, config):
        os.makedirs(config.data_dir, exist_ok=True)
        master = MasterKeys.load(config.keystore_path)
        access = AccessPolicy()
        access.grant("jury-commission")
        Registry(config.data_dir, master, create=True, access=access).close()
        app = create_app(config)
        with TestClient(app) as client:
            client.app = app
            vid = _register(client)
            _push(client)
            resp = client.post("/v1/disclosures", headers=AUTH,
                               json={"third_party": "jury-commission",
                                     "voter_ids": [vid]})
            assert resp.status_code == 200, resp.text
            package = DisclosurePackage.from_json(resp.json())
            info = client.get("/v1/info").json()
            from openroll.registry import BulletinEntry
            entry = BulletinEntry.from_json(
                client.get(f"/v1/bulletin/{package.epoch}").json())
            table = maintenance_receive(package, entry.commitment,
                                        from_hex(info["public_key"]),
                                        client.app.state.registry.schema)
            assert table[vid]["name"] == ROW["name"]

    def test_unknown_party_404(self, client):
        resp = client.post("/v1/disclosures", headers=AUTH,
                           json={"third_party": "nosy-neighbor",
                                 "voter_ids": []})
        assert resp.status_code == 404


class TestConcurrency:
    def test_second_writer_gets_503(self, client):
        client.app.state.writer_lock.acquire()
        try:
            resp = client.post("/v1/voters", headers=AUTH,
                               json={"base_id": "b2", "values": ROW})
            assert resp.status_code == 503
        finally:
            client.app.state.writer_lock.release()
        resp = client.post("/v1/voters", headers=AUTH,
                           json={"base_id": "b2", "values": ROW})
        assert resp.status_code == 201

    def test_reads_fine_while_writer_held(self, client):
        vid = _register(client)
        _push(client)
        client.app.state.writer_lock.acquire()
        try:
            assert client.get(f"/v1/voters/{vid}").status_code == 200
            assert client.get("/v1/bulletin").status_code == 200
        finally:
            client.app.state.writer_lock.release()


class TestRestart:
    def test_state_survives_restart(self, config):
        os.makedirs(config.data_dir, exist_ok=True)
        with TestClient(create_app(config)) as client:
            ids = [_register(client, f"base-{i:03d}") for i in range(10)]
            _push(client)
        with TestClient(create_app(config)) as client:
            assert client.get("/v1/info").json()["epoch"] == 1
            for vid in ids:
                assert client.get(f"/v1/voters/{vid}").status_code == 200

    def test_truncated_bulletin_refuses_startup(self, config):
        os.makedirs(config.data_dir, exist_ok=True)
        with TestClient(create_app(config)) as client:
            _register(client)
            _push(client)
        bulletin = os.path.join(config.data_dir, "bulletin.jsonl")
        lines = open(bulletin).read().splitlines(keepends=True)
        with open(bulletin, "w") as fh:
            fh.writelines(lines[:-1])
        with pytest.raises(CorruptState):
            create_app(config)

    def test_epoch_timer_pushes(self, config):
        import time
        os.makedirs(config.data_dir, exist_ok=True)
        timed = ServiceConfig(data_dir=config.data_dir,
                              keystore_path=config.keystore_path,
                              tokens=config.tokens, epoch_interval=0.05)
        with TestClient(create_app(timed)) as client:
            deadline = time.monotonic() + 3.0
            while time.monotonic() < deadline:
                if client.get("/v1/info").json()["epoch"] >= 2:
                    break
                time.sleep(0.05)
            assert client.get("/v1/info").json()["epoch"] >= 2


class TestConfig:
    def test_env_and_overrides(self, tmp_path):
        env = {"OPENROLL_DATA": str(tmp_path / "d"),
               "OPENROLL_KEYS": str(tmp_path / "k"),
               "OPENROLL_TOKEN": "tok"}
        cfg = ServiceConfig.from_sources(env=env)
        assert cfg.data_dir == str(tmp_path / "d")
        assert cfg.tokens == ("tok",)

    def test_config_file_beats_env(self, tmp_path):
        path = tmp_path / "svc.json"
        path.write_text(json.dumps({"data_dir": "from-file",
                                    "tokens": ["a", "b"]}))
        env = {"OPENROLL_DATA": "from-env", "OPENROLL_KEYS": "k"}
        cfg = ServiceConfig.from_sources(env=env, config_path=str(path))
        assert cfg.data_dir == "from-file"
        assert cfg.tokens == ("a", "b")

    def test_missing_required_raises(self):
        with pytest.raises(ValueError):
            ServiceConfig.from_sources(env={})
