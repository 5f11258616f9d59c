/**
 * Registration desk form. The id is checked in the browser first: a
 * malformed one never leaves the page, a valid one comes back from the
 * server with the freshly assigned DID.
 */

import { ApiClient, ApiError } from "./api.js";
import { clear, el, labeled } from "./dom.js";
import { nidError } from "./nid.js";

const ENTRY_FIELDS: Array<[name: string, label: string]> = [
  ["National_ID", "National id (13 digits)"],
  ["Name", "Name (Bangla)"],
  ["English_name", "English name"],
  ["Father_name", "Father's name"],
  ["Mother_name", "Mother's name"],
  ["Date_of_birth", "Date of birth (YYYY-MM-DD)"],
  ["Present_address", "Present address"],
  ["Occupation", "Occupation"],
  ["B_group", "Blood group"],
  ["Phone", "Phone"],
];

export function buildEntryForm(
  root: HTMLElement,
  client: ApiClient,
): HTMLFormElement {
  const form = el("form", "entry-form") as HTMLFormElement;
  const inputs = new Map<string, HTMLInputElement>();
  for (const [name, label] of ENTRY_FIELDS) {
    const input = el("input") as HTMLInputElement;
    input.name = name;
    inputs.set(name, input);
    form.append(labeled(label, input));
  }
  const password = el("input") as HTMLInputElement;
  password.name = "password";
  password.type = "password";
  form.append(labeled("Owner password (for self-lookup)", password));

  const submit = el("button", "submit", "register");
  submit.type = "submit";
  form.append(submit);

  const outcome = el("div", "outcome");
  form.append(outcome);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void runRegister();
  });

  async function runRegister(): Promise<void> {
    clear(outcome);
    const nid = inputs.get("National_ID")!.value;
    const idProblem = nidError(nid);
    if (idProblem) {
      // rejected right here; the request is never sent
      outcome.append(el("p", "error", idProblem));
      return;
    }
    const fields: Record<string, string> = {};
    for (const [name, input] of inputs) {
      if (input.value.trim() !== "") fields[name] = input.value.trim();
    }
    if (password.value !== "") fields["password"] = password.value;
    try {
      const resp = await client.registerCitizen(fields);
      outcome.append(
        el(
          "p",
          "success",
          `registered ${resp.national_id}: DID ${resp.did}, ` +
            `version ${resp.version} (${resp.served_by})`,
        ),
      );
      form.reset();
    } catch (err) {
      const text =
        err instanceof ApiError ? `${err.kind}: ${err.message}` : String(err);
      outcome.append(el("p", "error", text));
    }
  }

  root.append(form);
  return form;
}
