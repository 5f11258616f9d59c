import json
import threading
import urllib.error
import urllib.request

import pytest

from bdps.httpapi import AddressInUse, App, create_server
from bdps.storage import EMPTY_STATE_HASH

NID = "2615481234567"
ACCOUNTS = [("data_entry", "op-1", "op-secret"),
            ("corporate", "corp-1", "corp-secret")]


class Client:
    def __init__(self, port):
        self.base = f"http://127.0.0.1:{port}"

    def call(self, method, path, body=None, token=None, raw=False):
        req = urllib.request.Request(self.base + path, method=method)
        if token:
            req.add_header("Authorization", f"Bearer {token}")
        data = None
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, data) as resp:
                payload = resp.read()
                if raw:
                    return resp.status, payload.decode("utf-8"), dict(resp.headers)
                return resp.status, json.loads(payload)
        except urllib.error.HTTPError as err:
            return err.code, json.loads(err.read())

    def get(self, path, **kw):
        return self.call("GET", path, **kw)

    def post(self, path, body=None, **kw):
        return self.call("POST", path, body, **kw)


@pytest.fixture()
def stack(tmp_path):
    app = App(tmp_path / "data", accounts=ACCOUNTS)
    server = create_server(app, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    client = Client(server.server_address[1])
    yield app, client
    server.shutdown()
    server.server_close()
    app.close()


def login(client, kind, principal, secret):
    status, doc = client.post("/auth", {"kind": kind, "principal": principal,
                                        "secret": secret})
    assert status == 200, doc
    return doc["token"]


def seed_citizen(client, entry_token, nid=NID, password="hunter2", **extra):
    body = {"National_ID": nid, "Name": "অমিত", "Phone": "01711112222",
            "password": password, **extra}
    return client.post("/citizens", body, token=entry_token)


def test_health_reports_empty_primary(stack):
    _app, client = stack
    status, doc = client.get("/health")
    assert status == 200
    assert doc["role"] == "LocalPrimary"
    assert doc["state_hash"] == f"{EMPTY_STATE_HASH:016x}"
    assert doc["served_by"] == "local"
    assert doc["local_seq"] == 0


def test_health_answers_post_too(stack):
    _app, client = stack
    status, doc = client.post("/health", {})
    assert status == 200 and doc["role"] == "LocalPrimary"


def test_auth_failures_are_uniform(stack):
    _app, client = stack
    s1, wrong = client.post("/auth", {"kind": "data_entry", "principal": "op-1",
                                      "secret": "nope"})
    s2, unknown = client.post("/auth", {"kind": "data_entry", "principal": "ghost",
                                        "secret": "nope"})
    assert s1 == s2 == 401
    assert wrong == unknown  # no detail distinguishes the two causes


def test_insert_and_duplicate_and_bad_nid(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    status, doc = seed_citizen(client, entry)
    assert status == 201 and doc["did"] == 1 and doc["served_by"] == "local"
    status, doc = seed_citizen(client, entry)
    assert status == 409 and doc["error"] == "DuplicateId"
    status, doc = client.post("/citizens", {"National_ID": "12"}, token=entry)
    assert status == 400 and doc["error"] == "InvalidNid"
    status, doc = client.post("/citizens", {"National_ID": "9" * 13, "Nope": "x"},
                              token=entry)
    assert status == 400 and doc["error"] == "UnknownField"


def test_insert_requires_registration_role(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    corp = login(client, "corporate", "corp-1", "corp-secret")
    cit = login(client, "citizen", NID, "hunter2")
    for tok in (corp, cit, "garbage", ""):
        status, doc = client.post("/citizens", {"National_ID": "9" * 13}, token=tok)
        assert status == 401 and doc["error"] == "AuthFailure"


def test_verify_legacy_rows_and_privacy(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    corp = login(client, "corporate", "corp-1", "corp-secret")
    status, doc = client.post(f"/citizens/{NID}/verify",
                              {"claims": {"Name": "অমিত", "Phone": "wrong"}},
                              token=corp)
    assert status == 200
    assert doc["results"] == {"Name": "Match", "Phone": "Mismatch"}
    assert doc["legacy"] == ["Name .....OK", "Phone XXXXXXXXXXXX...Wrong"]
    assert doc["served_by"] == "local" and doc["staleness"] is False
    # stored values never ride along in any verify response
    assert "01711112222" not in json.dumps(doc)


def test_verify_needs_claims_and_token(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    corp = login(client, "corporate", "corp-1", "corp-secret")
    status, doc = client.post(f"/citizens/{NID}/verify", {}, token=corp)
    assert status == 400
    status, doc = client.post(f"/citizens/{NID}/verify",
                              {"claims": {"Name": "x"}}, token="")
    assert status == 401
    status, doc = client.post("/citizens/9999999999999/verify",
                              {"claims": {"Name": "x"}}, token=corp)
    assert status == 404 and doc["error"] == "NoSuchCitizen"


def test_owner_view_is_self_only(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    seed_citizen(client, entry, nid="5550000000001", password="other")
    cit = login(client, "citizen", NID, "hunter2")
    status, doc = client.get(f"/citizens/{NID}", token=cit)
    assert status == 200
    assert doc["fields"]["Name"] == "অমিত"
    assert doc["printout"].startswith("BDPS OFFICIAL RECORD")
    assert doc["version"] == 1 and doc["archived"] is False
    status, doc = client.get("/citizens/5550000000001", token=cit)
    assert status == 401 and doc["error"] == "AuthFailure"


def test_update_then_archive_lifecycle(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    status, doc = client.post(f"/citizens/{NID}/update",
                              {"deltas": {"Phone": "01899998888"}}, token=entry)
    assert status == 200 and doc["version"] == 2
    status, doc = client.post(f"/citizens/{NID}/update",
                              {"deltas": {"National_ID": "1" * 13}}, token=entry)
    assert status == 400 and doc["error"] == "ValidationError"
    status, doc = client.post(f"/citizens/{NID}/archive",
                              {"death_date": "2026-02-03"}, token=entry)
    assert status == 200 and doc["archive_entries"] == 1
    status, doc = client.post(f"/citizens/{NID}/archive",
                              {"death_date": "2026-02-03"}, token=entry)
    assert status == 409 and doc["error"] == "AlreadyArchived"
    # the owner can still see the archived record, death date included
    cit = login(client, "citizen", NID, "hunter2")
    status, doc = client.get(f"/citizens/{NID}", token=cit)
    assert status == 200 and doc["archived"] is True
    assert "Death_date: 2026-02-03" in doc["printout"]


def test_invoice_scoped_to_own_key(stack):
    _app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    corp = login(client, "corporate", "corp-1", "corp-secret")
    for _ in range(3):
        client.post(f"/citizens/{NID}/verify", {"claims": {"Name": "অমিত"}},
                    token=corp)
    status, doc = client.get("/invoice?key=corp-1", token=corp)
    assert status == 200
    assert doc["total_units"] == 6 and doc["line_count"] == 3  # verify fee 2
    status, doc = client.get("/invoice", token=corp)  # defaults to own key
    assert doc["line_count"] == 3
    status, doc = client.get("/invoice?key=corp-2", token=corp)
    assert status == 401
    status, doc = client.get("/invoice?key=corp-1", token=entry)
    assert status == 401  # invoicing is a corporate operation
    status, doc = client.get("/invoice?key=corp-1&from=abc", token=corp)
    assert status == 400


def test_promote_serves_from_remote_then_resync(stack):
    app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    assert app.pump_replication() == 1
    status, doc = client.post("/admin/promote", token=entry)
    assert status == 200
    assert doc == {"role": "RemotePromoted", "epoch": 2, "lost_writes": 0}
    corp = login(client, "corporate", "corp-1", "corp-secret")
    status, doc = client.post(f"/citizens/{NID}/verify",
                              {"claims": {"Name": "অমিত"}}, token=corp)
    assert status == 200 and doc["served_by"] == "remote"
    status, doc = client.post("/citizens",
                              {"National_ID": "5550000000002"}, token=entry)
    assert status == 201 and doc["served_by"] == "remote"
    status, doc = client.post("/admin/resync", token=entry)
    assert status == 200
    assert doc["role"] == "LocalPrimary" and doc["epoch"] == 3
    status, doc = client.get("/health")
    assert doc["local_seq"] == 2  # the write taken during promotion came back
    status, hc = client.get("/health")
    assert hc["state_hash"] == doc["state_hash"]


def test_promotion_counts_unshipped_writes_as_lost(stack):
    app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    seed_citizen(client, entry)
    app.pump_replication()
    seed_citizen(client, entry, nid="5550000000003", password="x")
    seed_citizen(client, entry, nid="5550000000004", password="x")
    status, doc = client.post("/admin/promote", token=entry)
    assert doc["lost_writes"] == 2
    corp = login(client, "corporate", "corp-1", "corp-secret")
    status, doc = client.post("/citizens/5550000000003/verify",
                              {"claims": {"Name": "x"}}, token=corp)
    assert status == 404  # the remote never saw it


def test_admin_needs_admin_role(stack):
    _app, client = stack
    corp = login(client, "corporate", "corp-1", "corp-secret")
    for path in ("/admin/scale", "/admin/promote", "/admin/resync"):
        status, doc = client.post(path, {"count": 2}, token=corp)
        assert status == 401, path


def test_admin_scale_clamps_to_policy(stack):
    app, client = stack
    entry = login(client, "data_entry", "op-1", "op-secret")
    status, doc = client.post("/admin/scale", {"count": 500}, token=entry)
    assert doc["active_workers"] == app.policy.max_local
    status, doc = client.post("/admin/scale", {"count": 0}, token=entry)
    assert doc["active_workers"] == app.policy.min_on
    status, doc = client.post("/admin/scale", {"count": "x"}, token=entry)
    assert status == 400


def test_metrics_csv_shape(stack):
    app, client = stack
    app.tick_once(app.clock())
    status, text, headers = client.get("/metrics", raw=True)
    assert status == 200
    assert headers["Content-Type"].startswith("text/csv")
    lines = text.strip().splitlines()
    assert lines[0] == "t,rate,active_workers,queue_depth"
    assert len(lines) == 2 and lines[1].endswith(",1,0")


def test_cors_preflight_and_headers(stack):
    _app, client = stack
    req = urllib.request.Request(client.base + "/citizens", method="OPTIONS")
    with urllib.request.urlopen(req) as resp:
        assert resp.status == 204
        assert resp.headers["Access-Control-Allow-Origin"] == "*"
        assert "Authorization" in resp.headers["Access-Control-Allow-Headers"]
    status, _text, headers = client.get("/health", raw=True)
    assert headers["Access-Control-Allow-Origin"] == "*"


def test_unknown_route_and_wrong_method(stack):
    _app, client = stack
    status, doc = client.get("/nope")
    assert status == 404 and doc["error"] == "NotFound"
    status, doc = client.get("/auth")
    assert status == 405 and doc["error"] == "MethodNotAllowed"


def test_malformed_json_body(stack):
    _app, client = stack
    req = urllib.request.Request(client.base + "/auth", method="POST",
                                 data=b"{not json",
                                 headers={"Content-Type": "application/json"})
    try:
        urllib.request.urlopen(req)
        raise AssertionError("expected 400")
    except urllib.error.HTTPError as err:
        assert err.code == 400
        assert json.loads(err.read())["error"] == "BadRequest"


def test_address_in_use(tmp_path):
    app = App(tmp_path / "a", accounts=ACCOUNTS)
    server = create_server(app, port=0)
    try:
        with pytest.raises(AddressInUse):
            create_server(app, port=server.server_address[1])
    finally:
        server.server_close()
        app.close()


def test_kill_dash_nine_recovery(tmp_path):
    data = tmp_path / "data"
    app = App(data, accounts=ACCOUNTS)
    server = create_server(app, port=0)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    client = Client(server.server_address[1])
    entry = login(client, "data_entry", "op-1", "op-secret")
    for i in range(5):
        seed_citizen(client, entry, nid=f"{5560000000000 + i:013d}", password="pw")
    client.post(f"/citizens/{'5560000000000'}/update",
                {"deltas": {"Phone": "333"}}, token=entry)
    _status, before = client.get("/health")
    # kill -9: stop the listener without close(); no snapshot, no flush call
    server.shutdown()
    server.server_close()

    reborn = App(data, accounts=[])
    server2 = create_server(reborn, port=0)
    threading.Thread(target=server2.serve_forever, daemon=True).start()
    client2 = Client(server2.server_address[1])
    _status, after = client2.get("/health")
    assert after["state_hash"] == before["state_hash"]
    assert after["local_seq"] == before["local_seq"] == 6
    # credentials survive via their hashed rows
    entry2 = login(client2, "data_entry", "op-1", "op-secret")
    cit = login(client2, "citizen", "5560000000000", "pw")
    status, doc = client2.get("/citizens/5560000000000", token=cit)
    assert status == 200 and doc["fields"]["Phone"] == "333"
    # did numbering resumes rather than restarting
    status, doc = client2.post("/citizens", {"National_ID": "5569999999999"},
                               token=entry2)
    assert doc["did"] == 6
    server2.shutdown()
    server2.server_close()
    reborn.close()
