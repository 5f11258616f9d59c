/**
 * The desk verification form. A teller types what the customer claims;
 * the registry answers per field in the terminal style the staff already
 * read all day. Stored values never arrive, so they cannot leak here.
 */

import { ApiClient, ApiError } from "./api.js";
import { clear, el, labeled, staleBadge } from "./dom.js";
import { nidError } from "./nid.js";

export const CLAIMABLE_COLUMNS = [
  "Name",
  "English_name",
  "Father_name",
  "Mother_name",
  "Spouse_name",
  "Date_of_birth",
  "Present_address",
  "Permanent_address",
  "Occupation",
  "B_group",
  "Phone",
  "Nationality",
] as const;

function claimRow(): HTMLDivElement {
  const row = el("div", "claim-row");
  const column = el("select") as HTMLSelectElement;
  for (const name of CLAIMABLE_COLUMNS) {
    const opt = el("option", "", name) as HTMLOptionElement;
    opt.value = name;
    column.append(opt);
  }
  const value = el("input") as HTMLInputElement;
  value.placeholder = "claimed value";
  value.className = "claim-value";
  row.append(column, value);
  return row;
}

export function buildVerifyForm(
  root: HTMLElement,
  client: ApiClient,
): HTMLFormElement {
  const form = el("form", "verify-form") as HTMLFormElement;
  const nid = el("input") as HTMLInputElement;
  nid.name = "nid";
  nid.placeholder = "13-digit national id";
  form.append(labeled("National id", nid));

  const claims = el("div", "claims");
  claims.append(claimRow());
  form.append(claims);

  const addBtn = el("button", "add-claim", "add another claim");
  addBtn.type = "button";
  addBtn.addEventListener("click", () => claims.append(claimRow()));

  const submit = el("button", "submit", "verify");
  submit.type = "submit";
  form.append(addBtn, submit);

  const results = el("div", "results");
  form.append(results);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void runVerify();
  });

  async function runVerify(): Promise<void> {
    clear(results);
    const idProblem = nidError(nid.value);
    if (idProblem) {
      results.append(el("p", "error", idProblem));
      return;
    }
    const claimed: Record<string, string> = {};
    for (const row of claims.querySelectorAll(".claim-row")) {
      const column = (row.querySelector("select") as HTMLSelectElement).value;
      const value = (row.querySelector("input") as HTMLInputElement).value;
      if (value.trim() !== "") claimed[column] = value;
    }
    if (Object.keys(claimed).length === 0) {
      results.append(el("p", "error", "enter at least one claimed value"));
      return;
    }
    try {
      const resp = await client.verify(nid.value.trim(), claimed);
      const list = el("ul", "verdicts");
      resp.legacy.forEach((line, i) => {
        const column = Object.keys(resp.results)[i];
        const verdict = resp.results[column];
        list.append(el("li", `verdict verdict-${verdict}`, line));
      });
      results.append(list, staleBadge(resp.staleness, resp.served_by));
    } catch (err) {
      const text =
        err instanceof ApiError ? `${err.kind}: ${err.message}` : String(err);
      results.append(el("p", "error", text));
    }
  }

  root.append(form);
  return form;
}
