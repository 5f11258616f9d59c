// Client-side checks for the 13-digit national id. The server revalidates;
// this exists so a typo never costs a round trip (or a registration fee).

export interface NidParts {
  district: string;
  rmo: string;
  thana: string;
  unionCode: string;
  serial: string;
}

export function nidError(value: string): string | null {
  const trimmed = value.trim();
  if (trimmed.length === 0) return "national id is required";
  if (!/^[0-9]+$/.test(trimmed)) return "national id must be digits only";
  if (trimmed.length !== 13) {
    return `national id must be exactly 13 digits, got ${trimmed.length}`;
  }
  return null;
}

export function isValidNid(value: string): boolean {
  return nidError(value) === null;
}

export function splitNid(value: string): NidParts {
  const err = nidError(value);
  if (err) throw new Error(err);
  const v = value.trim();
  return {
    district: v.slice(0, 2),
    rmo: v.slice(2, 3),
    thana: v.slice(3, 5),
    unionCode: v.slice(5, 7),
    serial: v.slice(7),
  };
}
