// Page wiring: one shared client, a session bar to sign in, and the three
// desk panels. The page is static; everything dynamic talks to the API.

import { ApiClient, ApiError } from "./api.js";
import { clear, el } from "./dom.js";
import { buildEntryForm } from "./entry-form.js";
import { buildOwnerPanel } from "./owner-view.js";
import { buildVerifyForm } from "./verify-form.js";

function sessionBar(root: HTMLElement, client: ApiClient): void {
  const bar = el("form", "session-bar") as HTMLFormElement;
  const kind = el("select") as HTMLSelectElement;
  for (const k of ["corporate", "data_entry", "citizen"]) {
    const opt = el("option", "", k) as HTMLOptionElement;
    opt.value = k;
    kind.append(opt);
  }
  const principal = el("input") as HTMLInputElement;
  principal.placeholder = "account id";
  const secret = el("input") as HTMLInputElement;
  secret.type = "password";
  secret.placeholder = "secret";
  const go = el("button", "", "sign in");
  go.type = "submit";
  const status = el("span", "session-status", "not signed in");
  bar.append(kind, principal, secret, go, status);

  bar.addEventListener("submit", (event) => {
    event.preventDefault();
    client
      .login(
        kind.value as "citizen" | "corporate" | "data_entry",
        principal.value,
        secret.value,
      )
      .then((auth) => {
        status.textContent = `signed in as ${auth.subject} (${auth.role})`;
        status.className = "session-status ok";
      })
      .catch((err) => {
        status.textContent =
          err instanceof ApiError ? err.message : String(err);
        status.className = "session-status error";
      });
  });
  root.append(bar);
}

function healthTicker(root: HTMLElement, client: ApiClient): void {
  const line = el("p", "health-line", "checking registry health...");
  root.append(line);
  const refresh = (): void => {
    client
      .health()
      .then((h) => {
        line.textContent =
          `${h.role} | epoch ${h.epoch} | ${h.active_workers} worker(s) | ` +
          `log ${h.local_seq} (acked ${h.acked_seq}) | state ${h.state_hash}`;
      })
      .catch(() => {
        line.textContent = "registry unreachable";
      });
  };
  refresh();
  setInterval(refresh, 5000);
}

export function mount(root: HTMLElement, baseUrl: string): void {
  clear(root);
  const client = new ApiClient(baseUrl);
  healthTicker(root, client);
  sessionBar(root, client);

  const columns = el("div", "columns");
  const verifySection = el("section", "panel");
  verifySection.append(el("h2", "", "Verify claims"));
  buildVerifyForm(verifySection, client);

  const entrySection = el("section", "panel");
  entrySection.append(el("h2", "", "Register a citizen"));
  buildEntryForm(entrySection, client);

  const ownerSection = el("section", "panel");
  ownerSection.append(el("h2", "", "My record"));
  buildOwnerPanel(ownerSection, client);

  columns.append(verifySection, entrySection, ownerSection);
  root.append(columns);
}

const rootNode = document.getElementById("app");
if (rootNode) {
  const base =
    new URLSearchParams(window.location.search).get("api") ??
    `http://${window.location.hostname}:8025`;
  mount(rootNode, base);
}
