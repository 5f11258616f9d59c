/**
 * Self-service lookup: a citizen signs in with their id and password and
 * gets their own record, linked rows, and the official printout.
 */

import { ApiClient, ApiError } from "./api.js";
import { clear, el, labeled, staleBadge } from "./dom.js";
import { nidError } from "./nid.js";

export function buildOwnerPanel(
  root: HTMLElement,
  client: ApiClient,
): HTMLFormElement {
  const form = el("form", "owner-panel") as HTMLFormElement;
  const nid = el("input") as HTMLInputElement;
  nid.name = "nid";
  nid.placeholder = "your 13-digit national id";
  const password = el("input") as HTMLInputElement;
  password.type = "password";
  password.name = "password";
  form.append(labeled("National id", nid), labeled("Password", password));

  const submit = el("button", "submit", "show my record");
  submit.type = "submit";
  form.append(submit);

  const output = el("div", "record");
  form.append(output);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void runLookup();
  });

  async function runLookup(): Promise<void> {
    clear(output);
    const idProblem = nidError(nid.value);
    if (idProblem) {
      output.append(el("p", "error", idProblem));
      return;
    }
    try {
      await client.login("citizen", nid.value.trim(), password.value);
      const record = await client.ownerLookup(nid.value.trim());
      const header = el(
        "p",
        record.archived ? "status archived" : "status",
        record.archived
          ? `version ${record.version}, archived`
          : `version ${record.version}`,
      );
      const printout = el("pre", "printout", record.printout);
      const linkedCounts = Object.entries(record.linked)
        .map(([table, rows]) => `${table}: ${rows.length}`)
        .join(", ");
      output.append(
        header,
        printout,
        el("p", "linked", `linked rows - ${linkedCounts}`),
        staleBadge(record.staleness, record.served_by),
      );
    } catch (err) {
      const text =
        err instanceof ApiError ? `${err.kind}: ${err.message}` : String(err);
      output.append(el("p", "error", text));
    }
  }

  root.append(form);
  return form;
}
