"""HTTP/JSON front end tying the gateway, registries, and mirror link together.

One process hosts both sites at desk scale: the primary registry (the local
cluster's log) and the mirror registry (the remote site's copy).  Reads and
writes are served from whichever site currently holds the primary role, and
every response says which one that was.  The server survives kill -9: the
write log is fsynced per append, so a restart replays to the same state hash.
"""

from __future__ import annotations

import errno
import json
import math
import re
import signal
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .elasticity import ClusterState, RateWindow, ScalePolicy, apply_action
from .elasticity import tick as elasticity_tick
from .errors import BdpsError
from .gateway import FailureDetector, Gateway, Token
from .registry import (
    Actor,
    AuthFailure,
    Registry,
    Role,
    record_from_external,
    render_official_printout,
)
from .replication import MirrorRole, ReplicationLink
from .storage import LogStore, materialize, save_snapshot


class AddressInUse(BdpsError):
    """The listen address is already bound by another process."""


class BadRequest(BdpsError):
    """Malformed request body or query string."""


# HTTP status for each domain error; anything unlisted is a 400.
_ERROR_STATUS = {
    "AuthFailure": 401,
    "NoSuchCitizen": 404,
    "DuplicateId": 409,
    "AlreadyArchived": 409,
    "ArchivedTarget": 409,
    "OrphanRecord": 409,
    "NotPromoted": 409,
    "AlreadyPromoted": 409,
    "RoleError": 409,
}


@dataclass(frozen=True)
class ServerConfig:
    data_dir: str
    host: str = "127.0.0.1"
    port: int = 8025
    replication_mode: str = "async"
    ship_interval: float = 1.0
    detector_k: int = 3
    detector_timeout: float = 0.5


class App:
    """Long-lived server state; the HTTP handler is a thin shell over this."""

    def __init__(self, data_dir: str | Path, *, policy: ScalePolicy | None = None,
                 fees: dict | None = None, replication_mode: str = "async",
                 ship_interval: float = 1.0, detector_k: int = 3,
                 detector_timeout: float = 0.5, accounts=(), clock=time.time):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.started_at = clock()

        self.local_reg = Registry(LogStore(self.data_dir / "local.log"),
                                  archive_path=self.data_dir / "archive.jsonl")
        self.remote_reg = Registry(LogStore(self.data_dir / "remote.log"))
        self.semi_sync = replication_mode == "semi_sync"
        if replication_mode not in ("async", "semi_sync"):
            raise BadRequest(f"replication_mode must be async or semi_sync, "
                             f"got {replication_mode!r}")
        self.link = ReplicationLink(self.local_reg.log, self.remote_reg.log,
                                    on_remote_apply=self.remote_reg.apply_replicated,
                                    semi_sync=self.semi_sync)
        self.gateway = Gateway(fees=fees)
        # hashed credential rows survive restarts; plaintext never touches disk
        self._cred_path = self.data_dir / "credentials.jsonl"
        if self._cred_path.exists():
            for line in self._cred_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.gateway.credentials.import_row(json.loads(line))
        for kind, principal_id, secret in accounts:
            self._add_account(kind, principal_id, secret)

        self.policy = policy or ScalePolicy()
        self.cluster = ClusterState(active_workers=self.policy.min_on)
        self.window = RateWindow(10.0)
        self.detector = FailureDetector(k=detector_k, timeout=detector_timeout)
        self.ship_interval = ship_interval
        self.metrics_rows: list[dict] = []

        self._lock = threading.RLock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- accounts -----------------------------------------------------------

    def _add_account(self, kind: str, principal_id: str, secret: str) -> None:
        adders = {"citizen": self.gateway.credentials.add_citizen,
                  "corporate": self.gateway.credentials.add_corporate,
                  "data_entry": self.gateway.credentials.add_data_entry}
        if kind not in adders:
            raise BadRequest(f"unknown account kind {kind!r}")
        row = adders[kind](principal_id, secret)
        with open(self._cred_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")

    # -- site selection -----------------------------------------------------

    def _site(self) -> tuple[Registry, str]:
        if self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
            return self.local_reg, "local"
        return self.remote_reg, "remote"

    def _staleness(self, served_by: str) -> bool:
        return (served_by == "remote"
                and self.link.mirror.applied_seq < self.link.local.max_seq)

    def _after_write(self) -> None:
        if self.semi_sync and self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
            while self.link.transmit():
                pass

    # -- operations (each returns a JSON-ready dict) --------------------------

    def authenticate(self, body: dict) -> dict:
        kind = body.get("kind", "citizen")
        token = self.gateway.authenticate(kind, str(body.get("principal", "")),
                                          str(body.get("secret", "")), self.clock())
        return {"token": token.token_id, "role": token.role.value,
                "subject": token.subject, "expires_at": token.expires_at}

    def _authorize(self, token_id: str, op_kind: str) -> Token:
        return self.gateway.authorize(token_id, op_kind, self.clock())

    def insert_citizen(self, token_id: str, body: dict) -> dict:
        token = self._authorize(token_id, "registration")
        fields = dict(body)
        password = fields.pop("password", None)
        record = record_from_external(fields)
        with self._lock:
            reg, site = self._site()
            did = reg.insert_citizen(record)
            self._after_write()
        if password is not None:
            self._add_account("citizen", record.national_id, str(password))
        self.gateway.record_usage(token.subject, "registration", self.clock(),
                                  token.role)
        self.window.observe(self.clock())
        return {"national_id": record.national_id, "did": did, "version": 1,
                "served_by": site}

    def verify(self, token_id: str, nid: str, body: dict) -> dict:
        token = self._authorize(token_id, "verify")
        claims = body.get("claims")
        if not isinstance(claims, dict) or not claims:
            raise BadRequest("body must carry a non-empty claims object")
        reg, site = self._site()
        report = reg.verify_fields(nid, claims)
        self.gateway.record_usage(token.subject, "verify", self.clock(), token.role)
        self.window.observe(self.clock())
        return {"national_id": report.national_id,
                "results": {k: v.value for k, v in report.results.items()},
                "legacy": report.legacy_lines(),
                "served_by": site, "staleness": self._staleness(site)}

    def owner(self, token_id: str, nid: str) -> dict:
        token = self._authorize(token_id, "owner_lookup")
        if token.role is Role.CITIZEN and token.subject != nid:
            raise AuthFailure()
        reg, site = self._site()
        view = reg.owner_view(nid)
        if view is None:
            raise AuthFailure()
        self.gateway.record_usage(token.subject, "owner_lookup", self.clock(),
                                  token.role)
        self.window.observe(self.clock())
        return {"national_id": view.national_id, "fields": view.fields,
                "linked": view.linked, "version": view.version,
                "archived": view.archived,
                "printout": render_official_printout(view),
                "served_by": site, "staleness": self._staleness(site)}

    def archive(self, token_id: str, nid: str, body: dict) -> dict:
        token = self._authorize(token_id, "archive")
        death_date = body.get("death_date")
        if not death_date:
            raise BadRequest("body must carry death_date")
        with self._lock:
            reg, site = self._site()
            receipt = reg.archive_deceased(nid, death_date)
            self._after_write()
        self.gateway.record_usage(token.subject, "archive", self.clock(), token.role)
        self.window.observe(self.clock())
        return {"national_id": receipt.national_id, "death_date": receipt.death_date,
                "seq": receipt.seq, "archive_entries": receipt.archive_entries,
                "served_by": site}

    def update(self, token_id: str, nid: str, body: dict) -> dict:
        token = self._authorize(token_id, "update")
        deltas = body.get("deltas")
        if not isinstance(deltas, dict) or not deltas:
            raise BadRequest("body must carry a non-empty deltas object")
        with self._lock:
            reg, site = self._site()
            version = reg.update_citizen(nid, deltas, Actor(token.role, token.subject))
            self._after_write()
        self.gateway.record_usage(token.subject, "update", self.clock(), token.role)
        self.window.observe(self.clock())
        return {"national_id": nid, "version": version, "served_by": site}

    def invoice(self, token_id: str, query: dict) -> dict:
        token = self._authorize(token_id, "invoice")
        key = query.get("key", [token.subject])[0]
        if token.role is Role.CORPORATE and key != token.subject:
            raise AuthFailure()
        try:
            from_t = float(query.get("from", ["0"])[0])
            to_t = float(query.get("to", ["inf"])[0])
        except ValueError:
            raise BadRequest("from/to must be numbers") from None
        inv = self.gateway.invoice(key, from_t, to_t)
        return {"api_key_id": inv.api_key_id, "from": from_t,
                "to": to_t if math.isfinite(to_t) else None,
                "total_units": inv.total_units, "line_count": inv.line_count}

    def health(self) -> dict:
        reg, site = self._site()
        m = self.link.mirror
        return {"status": "ok", "role": m.role.value, "epoch": m.epoch,
                "state_hash": f"{reg.current_state_hash():016x}",
                "local_seq": self.link.local.max_seq,
                "shipped_seq": m.shipped_seq, "acked_seq": m.acked_seq,
                "applied_seq": m.applied_seq,
                "active_workers": self.cluster.active_workers,
                "detector_up": self.detector.up, "served_by": site,
                "uptime": self.clock() - self.started_at}

    def metrics_csv(self) -> str:
        lines = ["t,rate,active_workers,queue_depth"]
        for row in self.metrics_rows:
            lines.append(f"{row['t']:.3f},{row['rate']:.4f},"
                         f"{row['active_workers']},{row['queue_depth']}")
        return "\n".join(lines) + "\n"

    def admin_scale(self, token_id: str, body: dict) -> dict:
        self._authorize(token_id, "admin")
        try:
            count = int(body.get("count"))
        except (TypeError, ValueError):
            raise BadRequest("body must carry an integer count") from None
        with self._lock:
            count = max(self.policy.min_on, min(self.policy.max_local, count))
            self.cluster.active_workers = count
        return {"active_workers": count}

    def admin_promote(self, token_id: str) -> dict:
        self._authorize(token_id, "admin")
        with self._lock:
            self.link.promote_remote("operator")
            lost = len(self.link.lost_entries())
        m = self.link.mirror
        return {"role": m.role.value, "epoch": m.epoch, "lost_writes": lost}

    def admin_resync(self, token_id: str) -> dict:
        self._authorize(token_id, "admin")
        with self._lock:
            self.link.resync_local()
            self.local_reg.reload()
        m = self.link.mirror
        return {"role": m.role.value, "epoch": m.epoch,
                "local_seq": self.link.local.max_seq}

    # -- background loops ------------------------------------------------------

    def pump_replication(self) -> int:
        """Ship pending log entries once; returns entries shipped."""
        with self._lock:
            if self.link.mirror.role is not MirrorRole.LOCAL_PRIMARY:
                return 0
            total = 0
            while True:
                n = self.link.transmit()
                if not n:
                    return total
                total += n

    def tick_once(self, now: float | None = None) -> None:
        now = self.clock() if now is None else now
        with self._lock:
            self.cluster.observed_rate = self.window.rate(now)
            action = elasticity_tick(self.cluster, self.policy, now)
            if action:
                apply_action(self.cluster, action, now)
            self.metrics_rows.append({
                "t": now - self.started_at, "rate": self.cluster.observed_rate,
                "active_workers": self.cluster.active_workers,
                "queue_depth": self.cluster.queue_depth})

    def start(self) -> None:
        def shipper():
            while not self._stop.wait(self.ship_interval):
                try:
                    self.pump_replication()
                except BdpsError:
                    pass  # fenced mid-promotion; the next pass will notice
        def ticker():
            while not self._stop.wait(1.0):
                self.tick_once()
        for fn in (shipper, ticker):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)

    def close(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5.0)
        with self._lock:
            if self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
                try:
                    self.pump_replication()
                except BdpsError:
                    pass
            snap = materialize(self.local_reg.log)
            save_snapshot(snap, self.data_dir / "local.snap")
            self.local_reg.log.close()
            self.remote_reg.log.close()


# -- the HTTP shell --------------------------------------------------------------

_ROUTES = [
    ("POST", re.compile(r"^/auth$"), "r_auth"),
    ("POST", re.compile(r"^/citizens$"), "r_insert"),
    ("POST", re.compile(r"^/citizens/([0-9]{1,32})/verify$"), "r_verify"),
    ("GET", re.compile(r"^/citizens/([0-9]{1,32})$"), "r_owner"),
    ("POST", re.compile(r"^/citizens/([0-9]{1,32})/archive$"), "r_archive"),
    ("POST", re.compile(r"^/citizens/([0-9]{1,32})/update$"), "r_update"),
    ("GET", re.compile(r"^/invoice$"), "r_invoice"),
    ("GET", re.compile(r"^/health$"), "r_health"),
    ("POST", re.compile(r"^/health$"), "r_health"),
    ("GET", re.compile(r"^/metrics$"), "r_metrics"),
    ("POST", re.compile(r"^/admin/scale$"), "r_admin_scale"),
    ("POST", re.compile(r"^/admin/promote$"), "r_admin_promote"),
    ("POST", re.compile(r"^/admin/resync$"), "r_admin_resync"),
]

_MAX_BODY = 10 * 1024 * 1024


class Handler(BaseHTTPRequestHandler):
    app: App  # set by create_server
    protocol_version = "HTTP/1.1"

    # handler methods ------------------------------------------------------

    def r_auth(self):
        return 200, self.app.authenticate(self._body())

    def r_insert(self):
        return 201, self.app.insert_citizen(self._token(), self._body())

    def r_verify(self, nid):
        return 200, self.app.verify(self._token(), nid, self._body())

    def r_owner(self, nid):
        return 200, self.app.owner(self._token(), nid)

    def r_archive(self, nid):
        return 200, self.app.archive(self._token(), nid, self._body())

    def r_update(self, nid):
        return 200, self.app.update(self._token(), nid, self._body())

    def r_invoice(self):
        query = parse_qs(urlparse(self.path).query)
        return 200, self.app.invoice(self._token(), query)

    def r_health(self):
        return 200, self.app.health()

    def r_metrics(self):
        return 200, self.app.metrics_csv()

    def r_admin_scale(self):
        return 200, self.app.admin_scale(self._token(), self._body())

    def r_admin_promote(self):
        return 200, self.app.admin_promote(self._token())

    def r_admin_resync(self):
        return 200, self.app.admin_resync(self._token())

    # plumbing -------------------------------------------------------------

    def _token(self) -> str:
        auth = self.headers.get("Authorization", "")
        return auth[7:] if auth.startswith("Bearer ") else ""

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length > _MAX_BODY:
            raise BadRequest("body too large")
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as err:
            raise BadRequest(f"body is not valid JSON: {err}") from None
        if not isinstance(doc, dict):
            raise BadRequest("body must be a JSON object")
        return doc

    def _dispatch(self) -> None:
        path = urlparse(self.path).path
        matched_path = False
        for method, pattern, name in _ROUTES:
            m = pattern.match(path)
            if not m:
                continue
            matched_path = True
            if method != self.command:
                continue
            try:
                status, payload = getattr(self, name)(*m.groups())
            except BdpsError as err:
                kind = type(err).__name__
                self._send(_ERROR_STATUS.get(kind, 400),
                           {"error": kind, "message": str(err)})
            except Exception as err:  # noqa: BLE001 - keep the server up
                self._send(500, {"error": "InternalError", "message": str(err)})
            else:
                self._send(status, payload)
            return
        if matched_path:
            self._send(405, {"error": "MethodNotAllowed",
                             "message": f"{self.command} not allowed on {path}"})
        else:
            self._send(404, {"error": "NotFound", "message": f"no route for {path}"})

    def _send(self, status: int, payload) -> None:
        if isinstance(payload, str):
            body = payload.encode("utf-8")
            ctype = "text/csv; charset=utf-8"
        else:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            ctype = "application/json; charset=utf-8"
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self._cors()
        self.end_headers()
        self.wfile.write(body)

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Authorization")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

    def do_GET(self):  # noqa: N802 - http.server naming
        self._dispatch()

    def do_POST(self):  # noqa: N802
        self._dispatch()

    def do_OPTIONS(self):  # noqa: N802
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def log_message(self, fmt, *args):  # quiet by default
        pass


def create_server(app: App, host: str = "127.0.0.1", port: int = 8025) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"app": app})
    try:
        server = ThreadingHTTPServer((host, port), handler)
    except OSError as err:
        if err.errno == errno.EADDRINUSE:
            raise AddressInUse(f"{host}:{port} is already in use") from None
        raise
    return server


def serve(app: App, host: str = "127.0.0.1", port: int = 8025) -> None:
    """Run until interrupted; flushes the log and writes a snapshot on exit."""
    server = create_server(app, host, port)

    def _terminate(_signo, _frame):
        raise KeyboardInterrupt

    try:
        signal.signal(signal.SIGTERM, _terminate)
    except ValueError:
        pass  # not on the main thread; the embedding caller handles shutdown
    app.start()
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        app.close()
