// Tiny DOM builders. Text goes in via textContent, never innerHTML, so
// nothing a server or a user sends can become markup.

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function labeled(
  labelText: string,
  input: HTMLInputElement | HTMLSelectElement,
): HTMLLabelElement {
  const label = el("label");
  label.append(el("span", "field-name", labelText), input);
  return label;
}

export function staleBadge(stale: boolean, servedBy: string): HTMLElement {
  const badge = el(
    "span",
    stale ? "badge badge-stale" : "badge",
    stale ? `answered by ${servedBy}, possibly stale` : `answered by ${servedBy}`,
  );
  return badge;
}
