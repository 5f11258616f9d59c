// Response shapes of the registry gateway, mirrored field for field.

export type Verdict = "Match" | "Mismatch" | "UnknownField";

export interface AuthResponse {
  token: string;
  role: "citizen" | "corporate" | "data_entry";
  subject: string;
  expires_at: number;
}

export interface RegisterResponse {
  national_id: string;
  did: number;
  version: number;
  served_by: "local" | "remote";
}

export interface VerifyResponse {
  national_id: string;
  results: Record<string, Verdict>;
  legacy: string[];
  served_by: "local" | "remote";
  staleness: boolean;
}

export interface OwnerResponse {
  national_id: string;
  fields: Record<string, string | number>;
  linked: Record<string, Array<Record<string, string | number>>>;
  version: number;
  archived: boolean;
  printout: string;
  served_by: "local" | "remote";
  staleness: boolean;
}

export interface InvoiceResponse {
  api_key_id: string;
  from: number;
  to: number | null;
  total_units: number;
  line_count: number;
}

export interface HealthResponse {
  status: string;
  role: "LocalPrimary" | "RemotePromoted";
  epoch: number;
  state_hash: string;
  local_seq: number;
  shipped_seq: number;
  acked_seq: number;
  applied_seq: number;
  active_workers: number;
  detector_up: boolean;
  served_by: "local" | "remote";
  uptime: number;
}

export interface ErrorBody {
  error: string;
  message: string;
}
