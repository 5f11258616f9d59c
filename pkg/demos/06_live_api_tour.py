"""Boot the real HTTP server in-process and walk every endpoint with
nothing but urllib: register, verify, self-lookup, bill, then force a
failover and a resync from the admin surface.
"""

import json
import tempfile
import threading
import urllib.request
from pathlib import Path

from bdps.httpapi import App, create_server

app = App(Path(tempfile.mkdtemp()), accounts=[
    ("data_entry", "entry-1", "clerk-pass"),
    ("corporate", "brac-bank", "s3cret"),
])
server = create_server(app, "127.0.0.1", 0)
port = server.server_address[1]
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{port}"
print("serving on", base)


def call(method, path, body=None, token=None):
    req = urllib.request.Request(
        base + path, method=method,
        data=None if body is None else json.dumps(body).encode())
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    with urllib.request.urlopen(req) as resp:
        raw = resp.read().decode()
    return json.loads(raw) if raw.startswith(("{", "[")) else raw


clerk = call("POST", "/auth", {"kind": "data_entry", "principal": "entry-1",
                               "secret": "clerk-pass"})["token"]
bank = call("POST", "/auth", {"kind": "corporate", "principal": "brac-bank",
                              "secret": "s3cret"})["token"]

created = call("POST", "/citizens", {
    "National_ID": "2610731845921", "Name": "অমিত হাসান",
    "English_name": "Amit Hasan", "Phone": "01711112222",
    "password": "amit-owns-this"}, clerk)
print("registered:", created)

verdicts = call("POST", "/citizens/2610731845921/verify",
                {"claims": {"English_name": "Amit Hasan",
                            "Phone": "01799999999"}}, bank)
for line in verdicts["legacy"]:
    print("  bank sees:", line)

amit = call("POST", "/auth", {"kind": "citizen", "principal": "2610731845921",
                              "secret": "amit-owns-this"})["token"]
mine = call("GET", "/citizens/2610731845921", token=amit)
print("owner lookup got", len(mine["fields"]), "columns, version",
      mine["version"])

bill = call("GET", "/invoice?from=0", token=bank)
print("invoice so far:", bill["total_units"], "units over",
      bill["line_count"], "call(s)")

print("health:", call("GET", "/health")["role"], "| pumping replication:",
      app.pump_replication(), "entries shipped")
print("promote ->", call("POST", "/admin/promote", {}, clerk))
print("verify now answered by:",
      call("POST", "/citizens/2610731845921/verify",
           {"claims": {"Phone": "01711112222"}}, bank)["served_by"])
print("resync  ->", call("POST", "/admin/resync", {}, clerk))

server.shutdown()
server.server_close()
app.close()
print("snapshot written on graceful close; tour over")
