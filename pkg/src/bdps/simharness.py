"""Deterministic discrete-event simulation of the whole hybrid deployment.

One event loop, one seeded RNG, logical milliseconds. The harness drives
the real production modules (storage, registry, replication, elasticity,
gateway) through injected clock and transport, so a passing scenario
certifies the shipped logic rather than a shadow model.

Topology: N local nodes (default 5), each hosting one elastic worker slot
plus a share of the storage replicas, and M remote nodes (default 2) that
mirror the local write log and absorb overflow or failover traffic. One
logical link connects the sites; it can be congested (added latency) or
partitioned (messages dropped).

Request lifecycle: an arrival is routed (least-loaded local worker, remote
on overflow or local-down, rejected only when both sides are unavailable),
waits in a per-worker FIFO queue, holds a worker for an exponentially
distributed service time, and terminates as exactly one of answered,
failed (timed out) or rejected. The conservation equation
``arrivals = answered + failed + rejected + in_flight`` holds exactly at
any horizon.

Failure handling has two layers. Per-worker timeout streaks remove a dead
worker from the routable set, so reads survive a single node crash via the
surviving replicas. A cluster-level probe detector (k consecutive misses,
probe every ``timeout``) declares the whole local site down, which
triggers promotion of the remote mirror; writes that never shipped are the
documented loss window. When probes succeed again the link resynchronizes
and the local site resumes the primary role.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .elasticity import ClusterState, RateWindow, ScalePolicy, apply_action
from .elasticity import tick as elasticity_tick
from .errors import BdpsError
from .gateway import FailureDetector, Gateway, route
from .registry import (
    Actor,
    AuthFailure,
    BdpsError as _RegistryError,
    CitizenRecord,
    Registry,
    Role,
    record_from_external,
)
from .replication import EpochError, MirrorRole, ReplicationLink
from .storage import LogStore, place_replicas, state_hash


class ConfigError(BdpsError):
    pass


class UnknownTarget(BdpsError):
    pass


class ReplicaUnavailable(BdpsError):
    """Every storage replica holding the key is on a crashed node."""


WRITE_OPS = frozenset({"insert", "update"})
READ_OPS = frozenset({"verify", "owner_lookup"})
DEFAULT_MIX = {"verify": 0.80, "owner_lookup": 0.10, "insert": 0.05, "update": 0.05}


@dataclass(frozen=True)
class WorkloadProfile:
    name: str = "default"
    requests_per_day: float = 100_000
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    scale_factor: float = 1000.0
    seed: int = 42

    @property
    def rate_per_sec(self) -> float:
        return self.requests_per_day / (86_400.0 * self.scale_factor)


def gen_arrivals(profile: WorkloadProfile, horizon_ms: float) -> list[tuple[float, str]]:
    """Seeded Poisson arrival times (ms) with op kinds drawn from the mix."""
    total = sum(profile.mix.values())
    if not math.isclose(total, 1.0, rel_tol=1e-9):
        raise ConfigError(f"workload.mix fractions must sum to 1, got {total}")
    if profile.requests_per_day < 0 or profile.scale_factor <= 0:
        raise ConfigError("workload rates must be nonnegative and scale_factor positive")
    rate_per_ms = profile.rate_per_sec / 1000.0
    if rate_per_ms == 0:
        return []
    rng = random.Random(profile.seed)
    ops, weights = zip(*sorted(profile.mix.items()))
    out = []
    t = rng.expovariate(rate_per_ms)
    while t <= horizon_ms:
        out.append((t, rng.choices(ops, weights)[0]))
        t += rng.expovariate(rate_per_ms)
    return out


@dataclass
class MetricsReport:
    scenario_name: str
    horizon_ms: float
    seed: int
    arrivals: int
    answered: int
    failed: int
    rejected: int
    in_flight: int
    availability: float
    p50_ms: float
    p99_ms: float
    served_by: dict
    lost_writes: int
    worker_trace: list
    metrics_rows: list
    events: list
    local_state_hash: int
    remote_state_hash: int
    mirror_role: str
    mirror_epoch: int
    acked_seq: int
    applied_seq: int
    local_max_seq: int

    def metrics_csv(self) -> str:
        lines = ["t,rate,active_workers,queue_depth"]
        for row in self.metrics_rows:
            lines.append(f"{row['t'] / 1000.0:.3f},{row['rate']:.4f},"
                         f"{row['active_workers']},{row['queue_depth']}")
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = [
            f"scenario: {self.scenario_name}",
            f"seed: {self.seed}",
            f"horizon_ms: {self.horizon_ms:.0f}",
            f"arrivals: {self.arrivals}",
            f"answered: {self.answered}",
            f"failed: {self.failed}",
            f"rejected: {self.rejected}",
            f"in_flight: {self.in_flight}",
            f"availability: {self.availability:.6f}",
            f"latency_p50_ms: {self.p50_ms:.3f}",
            f"latency_p99_ms: {self.p99_ms:.3f}",
            f"served_local: {self.served_by.get('local', 0)}",
            f"served_remote: {self.served_by.get('remote', 0)}",
            f"lost_writes: {self.lost_writes}",
            f"mirror_role: {self.mirror_role}",
            f"mirror_epoch: {self.mirror_epoch}",
            f"local_state_hash: {self.local_state_hash:#018x}",
            f"remote_state_hash: {self.remote_state_hash:#018x}",
        ]
        return "\n".join(lines) + "\n"


def _percentile(sorted_values: list[float], p: float) -> float:
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(p / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class _Request:
    rid: int
    arrival_ms: float
    op: str
    key: str | None
    payload: dict | None = None
    scripted: bool = False
    status: str = "pending"  # pending | answered | failed | rejected
    served_by: str | None = None
    outcome: str | None = None
    response_ms: float | None = None
    worker: object | None = None
    tried: set = field(default_factory=set)
    retries: int = 0


class _Worker:
    def __init__(self, wid: int, node: str, site: str):
        self.id = wid
        self.node = node
        self.site = site
        self.queue: deque[int] = deque()
        self.busy: int | None = None
        self.service_seq = 0
        self.fail_streak = 0


_FAULT_KINDS = {"node_crash", "node_repair", "partition", "heal", "congest",
                "crash_all_local"}
_SCENARIO_KEYS = {"name", "topology", "policy", "replication", "detector",
                  "workload", "preload", "scripted", "faults"}


def load_scenario(source) -> dict:
    """Parse and validate a scenario document (path, JSON text, or dict)."""
    if isinstance(source, dict):
        doc = source
    else:
        text = Path(source).read_text(encoding="utf-8") if not str(source).lstrip().startswith("{") \
            else str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"scenario is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario root must be an object")
    for key in doc:
        if key not in _SCENARIO_KEYS:
            raise ConfigError(f"unknown scenario field {key!r}")
    return doc


class Simulation:
    def __init__(self, scenario: dict, horizon_ms: float, seed: int | None = None):
        scenario = load_scenario(scenario)
        self.name = scenario.get("name", "unnamed")
        self.horizon = float(horizon_ms)

        topo = dict(scenario.get("topology", {}))
        self.n_local = self._pos_int(topo, "local_nodes", 5)
        self.n_remote = self._pos_int(topo, "remote_nodes", 2)
        self.base_latency = float(topo.get("link_latency_ms", 50.0))
        if self.base_latency < 0:
            raise ConfigError("topology.link_latency_ms must be >= 0")

        pol = dict(scenario.get("policy", {}))
        pol.setdefault("max_local", min(ScalePolicy().max_local, self.n_local))
        if pol["max_local"] > self.n_local:
            raise ConfigError("policy.max_local exceeds topology.local_nodes")
        try:
            self.policy = ScalePolicy(**pol)
        except TypeError as err:
            raise ConfigError(f"policy: {err}") from None

        rep = dict(scenario.get("replication", {}))
        self.ship_interval = float(rep.get("ship_interval_ms", 1000.0))
        self.max_batch = int(rep.get("max_batch", 64))
        mode = rep.get("mode", "async")
        if mode not in ("async", "semi_sync"):
            raise ConfigError(f"replication.mode must be async or semi_sync, got {mode!r}")
        self.semi_sync = mode == "semi_sync"

        det = dict(scenario.get("detector", {}))
        self.timeout = float(det.get("timeout_ms", 500.0))
        self.probe_interval = float(det.get("probe_interval_ms", 500.0))
        self.detector = FailureDetector(k=int(det.get("k", 3)), timeout=self.timeout / 1000.0)

        wl = dict(scenario.get("workload", {}))
        mix = dict(wl.get("mix", DEFAULT_MIX))
        unknown_ops = set(mix) - (WRITE_OPS | READ_OPS)
        if unknown_ops:
            raise ConfigError(f"workload.mix has unknown ops {sorted(unknown_ops)}")
        self.profile = WorkloadProfile(
            name=wl.get("name", self.name),
            requests_per_day=float(wl.get("requests_per_day", 100_000)),
            mix=mix,
            scale_factor=float(wl.get("scale_factor", 1000.0)),
            seed=int(wl.get("seed", 42)),
        )
        self.seed = int(self.profile.seed if seed is None else seed)
        self.rng = random.Random(self.seed)

        # sites: one write log per site, replica placement across local nodes
        self.local_nodes = {f"L{i}": True for i in range(1, self.n_local + 1)}
        self.remote_nodes = {f"R{i}": True for i in range(1, self.n_remote + 1)}
        self.crash_epoch = {name: 0 for name in [*self.local_nodes, *self.remote_nodes]}
        self.local_reg = Registry(LogStore())
        self.remote_reg = Registry(LogStore())
        self.link = ReplicationLink(self.local_reg.log, self.remote_reg.log,
                                    on_remote_apply=self.remote_reg.apply_replicated,
                                    semi_sync=self.semi_sync)
        self.gateway = Gateway()
        self.gateway.credentials.add_corporate("sim-corp", "sim-secret")
        self.workers = {i: _Worker(i, f"L{i}", "local") for i in range(1, self.policy.max_local + 1)}
        self.remote_workers = {i: _Worker(i, f"R{i}", "remote")
                               for i in range(1, self.n_remote + 1)}
        self.cluster = ClusterState(active_workers=self.policy.min_on)
        self.window = RateWindow(window=10.0)

        self.partitioned = False
        self.added_latency = 0.0

        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0
        self.events: list[dict] = []
        self.metrics_rows: list[dict] = []
        self.worker_trace: list[tuple[float, int]] = []
        self.requests: dict[int, _Request] = {}
        self._rid = itertools.count(1)
        self._key_counter = itertools.count(1)
        self.known_keys: list[str] = []
        self.truth_phone: dict[str, str] = {}
        self.lost_writes = 0

        self._validate_and_schedule_faults(scenario.get("faults", []))
        for item in scenario.get("scripted", []):
            if item.get("op") not in WRITE_OPS | READ_OPS:
                raise ConfigError(f"scripted[].op must be one of "
                                  f"{sorted(WRITE_OPS | READ_OPS)}, got {item.get('op')!r}")
            self._push(float(item["at_ms"]), "scripted", dict(item))
        for at, op in gen_arrivals(self.profile, self.horizon):
            self._push(at, "arrival", {"op": op})
        self._preload(int(scenario.get("preload", 0)))
        self._push(self.probe_interval, "probe", {})
        self._push(1000.0, "tick", {})
        self._push(self.ship_interval, "ship", {})

    @staticmethod
    def _pos_int(mapping: dict, key: str, default: int) -> int:
        value = mapping.get(key, default)
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"topology.{key} must be a positive integer")
        return value

    def _validate_and_schedule_faults(self, faults) -> None:
        for spec in faults:
            kind = spec.get("kind")
            if kind not in _FAULT_KINDS:
                raise ConfigError(f"faults[].kind must be one of {sorted(_FAULT_KINDS)}, "
                                  f"got {kind!r}")
            if kind in ("node_crash", "node_repair"):
                node = spec.get("node")
                if node not in self.local_nodes and node not in self.remote_nodes:
                    raise UnknownTarget(f"no such node {node!r}")
            if kind in ("partition", "heal", "congest"):
                link = spec.get("link", "local_remote")
                if link != "local_remote":
                    raise UnknownTarget(f"no such link {link!r}")
            at = float(spec.get("at_ms", 0.0))
            self._push(at, "fault", dict(spec))
            if kind == "congest" and "duration_ms" in spec:
                relief = {"kind": "congest", "added_latency_ms": 0.0}
                self._push(at + float(spec["duration_ms"]), "fault", relief)

    def _preload(self, count: int) -> None:
        for _ in range(count):
            key, phone = self._new_identity()
            self.local_reg.insert_citizen(
                CitizenRecord(national_id=key, phone=phone, name=f"preload-{key}"))

    def _new_identity(self) -> tuple[str, str]:
        n = next(self._key_counter)
        key = f"{9_000_000_000_000 + n:013d}"
        phone = f"017{n:08d}"
        self.known_keys.append(key)
        self.truth_phone[key] = phone
        self.gateway.credentials.add_citizen(key, f"pw-{key}")
        return key, phone

    # -- event plumbing ----------------------------------------------------

    def _push(self, at: float, kind: str, payload: dict) -> None:
        heapq.heappush(self._heap, (at, next(self._seq), kind, payload))

    def _log(self, kind: str, **info) -> None:
        self.events.append({"t": self.now, "kind": kind, **info})

    def run(self) -> MetricsReport:
        dispatch = {
            "arrival": self._on_arrival,
            "scripted": self._on_scripted,
            "completion": self._on_completion,
            "timeout": self._on_timeout,
            "fault": self._on_fault,
            "probe": self._on_probe,
            "probe_result": self._on_probe_result,
            "tick": self._on_tick,
            "ship": self._on_ship,
            "deliver": self._on_deliver,
        }
        while self._heap and self._heap[0][0] <= self.horizon:
            at, _seq, kind, payload = heapq.heappop(self._heap)
            self.now = at
            dispatch[kind](payload)
        return self._report()

    # -- arrivals and routing ----------------------------------------------

    def _on_arrival(self, payload: dict) -> None:
        op = payload["op"]
        rid = next(self._rid)
        req = _Request(rid, self.now, op, key=None, scripted=payload.get("scripted", False))
        self.requests[rid] = req
        self.window.observe(self.now / 1000.0)
        self._log("arrival", rid=rid, op=op)
        self._route_request(req)

    def _on_scripted(self, payload: dict) -> None:
        item = dict(payload)
        item["scripted"] = True
        op = item.pop("op")
        rid = next(self._rid)
        req = _Request(rid, self.now, op, key=item.get("nid"), payload=item, scripted=True)
        self.requests[rid] = req
        self.window.observe(self.now / 1000.0)
        self._log("arrival", rid=rid, op=op, scripted=True)
        self._route_request(req)

    def _routable_loads(self) -> dict[int, int]:
        loads = {}
        for wid in range(1, self.cluster.active_workers + 1):
            w = self.workers[wid]
            if w.fail_streak < self.detector.k:
                loads[wid] = len(w.queue) + (1 if w.busy is not None else 0)
        return loads

    def _remote_up(self) -> bool:
        return not self.partitioned and any(self.remote_nodes.values())

    def _route_request(self, req: _Request) -> None:
        is_write = req.op in WRITE_OPS
        if is_write and self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
            # writes follow the primary log; overflow never redirects them
            loads = self._routable_loads()
            if not loads:
                loads = {wid: len(self.workers[wid].queue) for wid
                         in range(1, self.cluster.active_workers + 1)}
            wid = min(loads, key=lambda w: (loads[w], w))
            self._dispatch_local(req, wid)
            return
        if is_write:
            self._dispatch_remote(req)
            return
        decision = route(self._routable_loads(), self.policy.overflow_queue_cap,
                         local_up=self.detector.up, remote_up=self._remote_up())
        self._log("route", rid=req.rid, target=decision.target, reason=decision.reason)
        if decision.target == "local":
            self._dispatch_local(req, decision.worker_id, exclude=req.tried)
        elif decision.target == "remote":
            self._dispatch_remote(req)
        else:
            req.status = "rejected"
            req.response_ms = self.now
            self._log("response", rid=req.rid, op=req.op, status="rejected",
                      reason=decision.reason)

    def _dispatch_local(self, req: _Request, wid: int, exclude: set | None = None) -> None:
        if exclude:
            loads = {w: load for w, load in self._routable_loads().items() if w not in exclude}
            if loads:
                wid = min(loads, key=lambda w: (loads[w], w))
        worker = self.workers[wid]
        req.served_by = "local"
        req.worker = worker
        req.tried.add(wid)
        worker.queue.append(req.rid)
        self._maybe_start(worker)
        self._push(self.now + self.timeout, "timeout", {"rid": req.rid})

    def _dispatch_remote(self, req: _Request) -> None:
        live = {wid: w for wid, w in self.remote_workers.items() if self.remote_nodes[w.node]}
        if not live:
            req.status = "rejected"
            req.response_ms = self.now
            self._log("response", rid=req.rid, op=req.op, status="rejected",
                      reason="LocalDown")
            return
        loads = {wid: len(w.queue) + (1 if w.busy else 0) for wid, w in live.items()}
        wid = min(loads, key=lambda w: (loads[w], w))
        worker = self.remote_workers[wid]
        req.served_by = "remote"
        req.worker = worker
        worker.queue.append(req.rid)
        self._maybe_start(worker, extra_delay=self._link_latency())
        # remote round trip rides the link twice
        self._push(self.now + self.timeout + 2 * self._link_latency(),
                   "timeout", {"rid": req.rid})

    def _link_latency(self) -> float:
        return self.base_latency + self.added_latency

    def _node_alive(self, worker: _Worker) -> bool:
        nodes = self.local_nodes if worker.site == "local" else self.remote_nodes
        return nodes[worker.node]

    def _maybe_start(self, worker: _Worker, extra_delay: float = 0.0) -> None:
        if worker.busy is not None or not worker.queue:
            return
        rid = worker.queue.popleft()
        req = self.requests[rid]
        if req.status != "pending":
            self._maybe_start(worker, extra_delay)
            return
        worker.busy = rid
        worker.service_seq += 1
        service_ms = self.rng.expovariate(self.policy.capacity_per_worker) * 1000.0
        self._push(self.now + extra_delay + service_ms, "completion",
                   {"rid": rid, "wid": worker.id, "site": worker.site,
                    "sseq": worker.service_seq,
                    "cepoch": self.crash_epoch[worker.node]})

    # -- completion / timeout ------------------------------------------------

    def _on_completion(self, payload: dict) -> None:
        worker = (self.workers if payload["site"] == "local" else self.remote_workers)[payload["wid"]]
        rid = payload["rid"]
        if worker.busy != rid or worker.service_seq != payload["sseq"]:
            return  # superseded by a timeout or a scale event
        if self.crash_epoch[worker.node] != payload["cepoch"] or not self._node_alive(worker):
            return  # node died mid-service; the request's timeout will fire
        worker.busy = None
        worker.fail_streak = 0
        req = self.requests[rid]
        if req.status == "pending":
            self._execute(req)
            extra = self._link_latency() if worker.site == "remote" else 0.0
            req.status = "answered"
            req.response_ms = self.now + extra
            if worker.site == "local":
                self.detector.record_success(self.now / 1000.0)
            self._log("response", rid=rid, op=req.op, status="answered",
                      served_by=req.served_by, outcome=req.outcome,
                      latency_ms=req.response_ms - req.arrival_ms,
                      stale=req.served_by == "remote"
                      and self.link.mirror.applied_seq < self.link.local.max_seq,
                      scripted=req.scripted)
        self._maybe_start(worker)

    def _on_timeout(self, payload: dict) -> None:
        req = self.requests[payload["rid"]]
        if req.status != "pending":
            return
        worker = req.worker
        if worker is not None:
            if worker.busy == req.rid:
                worker.busy = None
            elif req.rid in worker.queue:
                worker.queue.remove(req.rid)
            worker.fail_streak += 1
            if worker.site == "local":
                self.detector.record_failure(self.now / 1000.0)
                self._maybe_promote()
            self._maybe_start(worker)
        if req.op in READ_OPS and req.retries < 2:
            req.retries += 1
            self._log("retry", rid=req.rid, op=req.op, attempt=req.retries)
            self._route_request(req)
            return
        req.status = "failed"
        req.response_ms = self.now
        self._log("response", rid=req.rid, op=req.op, status="failed",
                  served_by=req.served_by, scripted=req.scripted)

    # -- executing operations against the registries -------------------------

    def _site_registry(self, served_by: str) -> Registry:
        return self.local_reg if served_by == "local" else self.remote_reg

    def _replicas_reachable(self, key: str) -> bool:
        placement = place_replicas(key, list(self.local_nodes))
        return any(self.local_nodes[n] for n in placement.replicas)

    def _execute(self, req: _Request) -> None:
        reg = self._site_registry(req.served_by)
        t_sec = self.now / 1000.0
        try:
            if req.op == "insert":
                self._exec_insert(req, reg)
            elif req.op == "update":
                self._exec_update(req, reg, t_sec)
            elif req.op == "verify":
                self._exec_verify(req, reg, t_sec)
            elif req.op == "owner_lookup":
                self._exec_owner(req, reg, t_sec)
            else:
                raise ConfigError(f"unknown op {req.op!r}")
            if req.outcome is None:
                req.outcome = "ok"
        except _RegistryError as err:
            req.outcome = type(err).__name__
        if self.semi_sync and req.op in WRITE_OPS \
                and self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
            while self.link.transmit(max_batch=self.max_batch):
                pass

    def _exec_insert(self, req: _Request, reg: Registry) -> None:
        if req.payload and "fields" in req.payload:
            record = record_from_external(dict(req.payload["fields"],
                                               National_ID=req.payload["nid"]))
            key = req.payload["nid"]
            reg.insert_citizen(record)
            if key not in self.truth_phone:
                self.known_keys.append(key)
                self.truth_phone[key] = record.phone
                self.gateway.credentials.add_citizen(key, f"pw-{key}")
        else:
            key, phone = self._new_identity()
            req.key = key
            reg.insert_citizen(CitizenRecord(national_id=key, phone=phone,
                                             name=f"sim-{key}"))
        self.gateway.record_usage("entry-1", "registration", self.now / 1000.0,
                                  Role.DATA_ENTRY)

    def _pick_key(self) -> str | None:
        if not self.known_keys:
            return None
        return self.known_keys[self.rng.randrange(len(self.known_keys))]

    def _exec_update(self, req: _Request, reg: Registry, t_sec: float) -> None:
        key = req.key or (req.payload or {}).get("nid") or self._pick_key()
        if key is None:
            req.outcome = "NoSuchCitizen"
            return
        req.key = key
        deltas = (req.payload or {}).get("deltas") or {"Phone": f"u{next(self._key_counter):08d}"}
        reg.update_citizen(key, deltas, Actor(Role.DATA_ENTRY, "entry-1"))
        if "Phone" in deltas:
            self.truth_phone[key] = deltas["Phone"]
        self.gateway.record_usage("entry-1", "update", t_sec, Role.DATA_ENTRY)

    def _exec_verify(self, req: _Request, reg: Registry, t_sec: float) -> None:
        key = req.key or (req.payload or {}).get("nid") or self._pick_key()
        if key is None:
            req.outcome = "NoSuchCitizen"
            return
        req.key = key
        if req.served_by == "local" and not self._replicas_reachable(key):
            raise ReplicaUnavailable(key)
        claims = (req.payload or {}).get("claims")
        if claims is None:
            truth = self.truth_phone.get(key, "")
            claim = truth if self.rng.random() < 0.5 else "000"
            claims = {"Phone": claim}
        report = reg.verify_fields(key, claims)
        req.outcome = "+".join(v.value for v in report.results.values())
        self.gateway.record_usage("sim-corp", "verify", t_sec, Role.CORPORATE)

    def _exec_owner(self, req: _Request, reg: Registry, t_sec: float) -> None:
        key = req.key or (req.payload or {}).get("nid") or self._pick_key()
        if key is None:
            req.outcome = "AuthFailure"
            return
        req.key = key
        if req.served_by == "local" and not self._replicas_reachable(key):
            raise ReplicaUnavailable(key)
        reg.owner_lookup(key, f"pw-{key}", self.gateway.credentials)
        self.gateway.record_usage(key, "owner_lookup", t_sec, Role.CITIZEN)

    # -- faults, probes, failover --------------------------------------------

    def _on_fault(self, spec: dict) -> None:
        kind = spec["kind"]
        if kind == "crash_all_local":
            for name in self.local_nodes:
                self._crash_node(name)
        elif kind == "node_crash":
            self._crash_node(spec["node"])
        elif kind == "node_repair":
            name = spec["node"]
            nodes = self.local_nodes if name in self.local_nodes else self.remote_nodes
            nodes[name] = True
            pool = self.workers if name in self.local_nodes else self.remote_workers
            for w in pool.values():
                if w.node == name:
                    w.fail_streak = 0
                    w.busy = None
                    w.queue.clear()
        elif kind == "partition":
            self.partitioned = True
        elif kind == "heal":
            self.partitioned = False
        elif kind == "congest":
            self.added_latency = float(spec.get("added_latency_ms", 0.0))
        self._log("fault", fault=kind, **{k: v for k, v in spec.items()
                                          if k not in ("kind", "at_ms")})

    def _crash_node(self, name: str) -> None:
        nodes = self.local_nodes if name in self.local_nodes else self.remote_nodes
        nodes[name] = False
        self.crash_epoch[name] += 1

    def _on_probe(self, _payload: dict) -> None:
        active_alive = any(self.local_nodes[self.workers[wid].node]
                           for wid in range(1, self.cluster.active_workers + 1))
        if active_alive:
            self.detector.record_success(self.now / 1000.0)
            self._maybe_resync()
        else:
            self._push(self.now + self.timeout, "probe_result", {})
        self._push(self.now + self.probe_interval, "probe", {})

    def _on_probe_result(self, _payload: dict) -> None:
        self.detector.record_failure(self.now / 1000.0)
        self._maybe_promote()

    def _maybe_promote(self) -> None:
        if not self.detector.up and self.link.mirror.role is MirrorRole.LOCAL_PRIMARY:
            self.link.promote_remote("LocalFailure")
            self.lost_writes = len(self.link.lost_entries())
            self._log("promote", lost_writes=self.lost_writes,
                      epoch=self.link.mirror.epoch)

    def _maybe_resync(self) -> None:
        if self.detector.up and self.link.mirror.role is MirrorRole.REMOTE_PROMOTED:
            self.link.resync_local()
            self.local_reg.reload()
            self._log("resync", epoch=self.link.mirror.epoch,
                      upto_seq=self.link.local.max_seq)

    # -- elasticity and replication ticks -------------------------------------

    def _on_tick(self, _payload: dict) -> None:
        self.cluster.observed_rate = self.window.rate(self.now / 1000.0)
        self.cluster.queue_depth = sum(
            len(w.queue) + (1 if w.busy else 0)
            for wid, w in self.workers.items() if wid <= self.cluster.active_workers)
        action = elasticity_tick(self.cluster, self.policy, self.now / 1000.0)
        if action.direction == "down":
            victim = self.workers[self.cluster.active_workers]
            apply_action(self.cluster, action, self.now / 1000.0)
            orphans = list(victim.queue)
            victim.queue.clear()
            for rid in orphans:
                if self.requests[rid].status == "pending":
                    self._route_request(self.requests[rid])
        elif action.direction == "up":
            apply_action(self.cluster, action, self.now / 1000.0)
        if action:
            self._log("scale", direction=action.direction, count=action.count,
                      active=self.cluster.active_workers)
        self.metrics_rows.append({"t": self.now, "rate": self.cluster.observed_rate,
                                  "active_workers": self.cluster.active_workers,
                                  "queue_depth": self.cluster.queue_depth})
        self.worker_trace.append((self.now, self.cluster.active_workers))
        self._push(self.now + 1000.0, "tick", {})

    def _on_ship(self, _payload: dict) -> None:
        self._push(self.now + self.ship_interval, "ship", {})
        if self.link.mirror.role is not MirrorRole.LOCAL_PRIMARY:
            return
        if not any(self.local_nodes.values()):
            return  # nobody left to run the shipping loop
        start = self.link.mirror.acked_seq
        while True:
            batch = self.link.ship_batch(from_seq=start, max_batch=self.max_batch)
            if not batch:
                break
            self._log("ship", count=len(batch), upto=batch[-1].seq,
                      epoch=self.link.mirror.epoch)
            self._push(self.now + self._link_latency(), "deliver",
                       {"entries": batch, "epoch": self.link.mirror.epoch})
            start = batch[-1].seq

    def _on_deliver(self, payload: dict) -> None:
        if self.partitioned:
            self._log("batch_dropped", count=len(payload["entries"]))
            return
        try:
            acked = self.link.apply_batch(payload["entries"], epoch=payload["epoch"])
        except EpochError:
            self._log("batch_fenced", count=len(payload["entries"]),
                      epoch=payload["epoch"])
            return
        self._log("ack", upto=acked)

    # -- reporting -------------------------------------------------------------

    def _report(self) -> MetricsReport:
        answered = [r for r in self.requests.values() if r.status == "answered"]
        failed = sum(1 for r in self.requests.values() if r.status == "failed")
        rejected = sum(1 for r in self.requests.values() if r.status == "rejected")
        in_flight = sum(1 for r in self.requests.values() if r.status == "pending")
        terminal = len(answered) + failed + rejected
        latencies = sorted(r.response_ms - r.arrival_ms for r in answered)
        served: dict = {"local": 0, "remote": 0}
        for r in answered:
            served[r.served_by] += 1
        return MetricsReport(
            scenario_name=self.name,
            horizon_ms=self.horizon,
            seed=self.seed,
            arrivals=len(self.requests),
            answered=len(answered),
            failed=failed,
            rejected=rejected,
            in_flight=in_flight,
            availability=(len(answered) / terminal) if terminal else 1.0,
            p50_ms=_percentile(latencies, 50),
            p99_ms=_percentile(latencies, 99),
            served_by=served,
            lost_writes=self.lost_writes,
            worker_trace=self.worker_trace,
            metrics_rows=self.metrics_rows,
            events=self.events,
            local_state_hash=state_hash(self.local_reg.state),
            remote_state_hash=state_hash(self.remote_reg.state),
            mirror_role=self.link.mirror.role.value,
            mirror_epoch=self.link.mirror.epoch,
            acked_seq=self.link.mirror.acked_seq,
            applied_seq=self.link.mirror.applied_seq,
            local_max_seq=self.link.local.max_seq,
        )


def run(scenario, horizon_ms: float, seed: int | None = None) -> MetricsReport:
    """Build and run one simulation; deterministic in (scenario, seed)."""
    return Simulation(scenario, horizon_ms, seed=seed).run()
