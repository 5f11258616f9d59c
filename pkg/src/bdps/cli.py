"""Operator command line: ingest, serve, simulate, one-shot clients, admin."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .elasticity import PolicyError, ScalePolicy
from .errors import BdpsError
from .httpapi import AddressInUse, App, BadRequest
from .httpapi import serve as http_serve
from .nid import NidError, parse_nid
from .registry import INFORMATION_FIELDS, Registry, record_from_external
from .scenarios import bundled_names, scenario_path
from .simharness import ConfigError, UnknownTarget, run
from .storage import LogStore

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

_COLUMNS = tuple(col for _attr, col in INFORMATION_FIELDS)


@dataclass
class Config:
    data_dir: str = "bdps-data"
    host: str = "127.0.0.1"
    port: int = 8025
    policy: ScalePolicy = field(default_factory=ScalePolicy)
    fees: dict | None = None
    replication_mode: str = "async"
    ship_interval: float = 1.0
    detector_k: int = 3
    detector_timeout_ms: float = 500.0
    accounts: list = field(default_factory=list)


_CONFIG_KEYS = {"data_dir", "host", "port", "policy", "fees", "replication_mode",
                "ship_interval", "detector_k", "detector_timeout_ms", "accounts"}


def load_config(path: str | None) -> Config:
    cfg = Config()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config field {key!r}")
    if "policy" in doc:
        try:
            doc["policy"] = ScalePolicy(**doc["policy"])
        except (TypeError, PolicyError) as err:
            raise ConfigError(f"config.policy: {err}") from None
    cfg = Config(**{**cfg.__dict__, **doc})
    if cfg.replication_mode not in ("async", "semi_sync"):
        raise ConfigError("replication_mode must be async or semi_sync")
    if not isinstance(cfg.port, int) or not 0 <= cfg.port <= 65535:
        raise ConfigError("port must be an integer in [0, 65535]")
    for row in cfg.accounts:
        if not (isinstance(row, list) and len(row) == 3):
            raise ConfigError("accounts rows must be [kind, id, secret]")
    return cfg


# -- nid --------------------------------------------------------------------


def cmd_nid(args) -> int:
    try:
        nid = parse_nid(args.value)
    except NidError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    print(f"district={nid.district}")
    print(f"rmo={nid.rmo}")
    print(f"thana={nid.thana}")
    print(f"union_code={nid.union_code}")
    print(f"serial={nid.serial}")
    return EXIT_OK


# -- ingest -----------------------------------------------------------------


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                if not isinstance(doc, dict):
                    raise ValueError("line is not an object")
            except ValueError as err:
                yield line_no, None, f"not a JSON object: {err}"
                continue
            yield line_no, doc, None


def _iter_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return
        unknown = [h for h in reader.fieldnames if h not in _COLUMNS]
        if unknown:
            raise ConfigError(f"unknown CSV headers {unknown}; "
                              f"headers must use the schema column names")
        for line_no, row in enumerate(reader, start=2):  # header is line 1
            yield line_no, {k: v for k, v in row.items() if v not in (None, "")}, None


def cmd_ingest(args) -> int:
    path = Path(args.file)
    fmt = args.format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    registry = Registry(LogStore(Path(args.data_dir) / "local.log"),
                        archive_path=Path(args.data_dir) / "archive.jsonl")
    inserted = rejected = 0
    try:
        rows = _iter_csv(path) if fmt == "csv" else _iter_jsonl(path)
        for line_no, doc, parse_err in rows:
            if parse_err is not None:
                rejected += 1
                print(f"line {line_no}: rejected: {parse_err}")
                continue
            try:
                registry.insert_citizen(record_from_external(doc))
                inserted += 1
            except BdpsError as err:
                rejected += 1
                print(f"line {line_no}: rejected: {type(err).__name__}: {err}")
    except OSError as err:
        print(f"error: cannot read {path}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps({"inserted": inserted, "rejected": rejected}))
    if rejected and not inserted:
        return EXIT_DOMAIN
    return EXIT_OK


# -- serve --------------------------------------------------------------------


def _parse_account(kind: str, text: str) -> tuple[str, str, str]:
    principal, sep, secret = text.partition(":")
    if not sep or not principal or not secret:
        raise ConfigError(f"--{kind.replace('_', '-')} wants ID:SECRET, got {text!r}")
    return kind, principal, secret


def build_app(cfg: Config) -> App:
    return App(cfg.data_dir, policy=cfg.policy, fees=cfg.fees,
               replication_mode=cfg.replication_mode,
               ship_interval=cfg.ship_interval, detector_k=cfg.detector_k,
               detector_timeout=cfg.detector_timeout_ms / 1000.0,
               accounts=[tuple(a) for a in cfg.accounts])


def cmd_serve(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.data_dir is not None:
            cfg.data_dir = args.data_dir
        if args.host is not None:
            cfg.host = args.host
        if args.port is not None:
            cfg.port = args.port
        if args.mode is not None:
            cfg.replication_mode = args.mode
        for text in args.entry_account or []:
            cfg.accounts.append(_parse_account("data_entry", text))
        for text in args.corporate or []:
            cfg.accounts.append(_parse_account("corporate", text))
        app = build_app(cfg)
    except (ConfigError, BadRequest, PolicyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    print(f"bdps serving on http://{cfg.host}:{cfg.port} "
          f"(data_dir={cfg.data_dir}, mode={cfg.replication_mode})")
    try:
        http_serve(app, cfg.host, cfg.port)
    except AddressInUse as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


# -- simulate / report ---------------------------------------------------------


def _resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.is_file():
        return path
    bundled = scenario_path(name)
    if bundled is not None:
        return bundled
    raise ConfigError(f"no scenario file {name!r}; bundled: {', '.join(bundled_names())}")


def cmd_simulate(args) -> int:
    try:
        path = _resolve_scenario(args.scenario)
        report = run(path.read_text(encoding="utf-8"),
                     horizon_ms=args.horizon, seed=args.seed)
    except (ConfigError, UnknownTarget) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.scenario_name}_metrics.csv"
    summary_path = out / f"{report.scenario_name}_summary.txt"
    csv_path.write_text(report.metrics_csv(), encoding="utf-8")
    summary_path.write_text(report.summary_text(), encoding="utf-8")
    print(report.summary_text(), end="")
    print(f"wrote {csv_path} and {summary_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = sorted(Path(args.dir).glob("*_summary.txt"))
    if not summaries:
        print(f"error: no *_summary.txt under {args.dir}", file=sys.stderr)
        return EXIT_DOMAIN
    for path in summaries:
        print(f"== {path.name} ==")
        print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


# -- one-shot HTTP clients ------------------------------------------------------


def _http(method: str, url: str, body: dict | None, token: str | None = None):
    req = urllib.request.Request(url, method=method)
    data = None
    if body is not None:
        data = json.dumps(body).encode("utf-8")
        req.add_header("Content-Type", "application/json")
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(req, data) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def _login(base: str, kind: str, principal: str, secret: str):
    status, doc = _http("POST", f"{base}/auth",
                        {"kind": kind, "principal": principal, "secret": secret})
    if status != 200:
        return None, doc
    return doc["token"], doc


def cmd_verify(args) -> int:
    claims = {}
    for item in args.claim or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            print(f"error: --claim wants COLUMN=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        claims[name] = value
    if not claims:
        print("error: at least one --claim is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        kind, principal, secret = _parse_account("corporate", args.key)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        token, doc = _login(args.url, kind, principal, secret)
        if token is None:
            print(f"error: {doc.get('error')}: {doc.get('message')}", file=sys.stderr)
            return EXIT_DOMAIN
        status, doc = _http("POST", f"{args.url}/citizens/{args.nid}/verify",
                            {"claims": claims}, token)
    except urllib.error.URLError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    if status != 200:
        print(f"error: {doc.get('error')}: {doc.get('message')}", file=sys.stderr)
        return EXIT_DOMAIN
    for line in doc["legacy"]:
        print(line)
    print(f"served_by={doc['served_by']} staleness={str(doc['staleness']).lower()}")
    return EXIT_OK


def cmd_admin(args) -> int:
    try:
        kind, principal, secret = _parse_account("data_entry", args.operator)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    body = None
    if args.action == "scale":
        if args.count is None:
            print("error: scale needs --count", file=sys.stderr)
            return EXIT_USAGE
        body = {"count": args.count}
    try:
        token, doc = _login(args.url, kind, principal, secret)
        if token is None:
            print(f"error: {doc.get('error')}: {doc.get('message')}", file=sys.stderr)
            return EXIT_DOMAIN
        status, doc = _http("POST", f"{args.url}/admin/{args.action}", body, token)
    except urllib.error.URLError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    print(json.dumps(doc, ensure_ascii=False))
    return EXIT_OK if status == 200 else EXIT_DOMAIN


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdps",
                                     description="people registry toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nid", help="inspect a 13-digit national id")
    nid_sub = p.add_subparsers(dest="nid_command", required=True)
    q = nid_sub.add_parser("parse", help="split an id into its segments")
    q.add_argument("value")
    q.set_defaults(func=cmd_nid)

    p = sub.add_parser("ingest", help="bulk-load citizen records")
    p.add_argument("file")
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--data-dir", default="bdps-data")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--mode", choices=["async", "semi_sync"])
    p.add_argument("--entry-account", action="append", metavar="ID:SECRET")
    p.add_argument("--corporate", action="append", metavar="ID:SECRET")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run a fault-injection scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--horizon", type=float, default=60_000.0, metavar="MS")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="one-shot field verification client")
    p.add_argument("nid")
    p.add_argument("--claim", action="append", metavar="COLUMN=VALUE")
    p.add_argument("--url", default="http://127.0.0.1:8025")
    p.add_argument("--key", required=True, metavar="APIKEY:SECRET")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="print summaries from simulate output")
    p.add_argument("dir", nargs="?", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("admin", help="operate a running server")
    p.add_argument("action", choices=["scale", "promote", "resync"])
    p.add_argument("--count", type=int)
    p.add_argument("--url", default="http://127.0.0.1:8025")
    p.add_argument("--operator", required=True, metavar="ID:SECRET")
    p.set_defaults(func=cmd_admin)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
