/**
 * Typed client for the registry gateway. Every call goes through the one
 * `request` helper so auth headers and error handling stay uniform.
 */

import type {
  AuthResponse,
  ErrorBody,
  HealthResponse,
  InvoiceResponse,
  OwnerResponse,
  RegisterResponse,
  VerifyResponse,
} from "./types.js";

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly kind: string;

  constructor(status: number, body: ErrorBody) {
    super(body.message || body.error || `HTTP ${status}`);
    this.status = status;
    this.kind = body.error || "Unknown";
  }
}

export class ApiClient {
  private token: string | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) =>
      fetch(input, init),
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let parsed: ErrorBody = { error: "Unknown", message: resp.statusText };
      try {
        parsed = (await resp.json()) as ErrorBody;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, parsed);
    }
    return (await resp.json()) as T;
  }

  async login(
    kind: "citizen" | "corporate" | "data_entry",
    principal: string,
    secret: string,
  ): Promise<AuthResponse> {
    const auth = await this.request<AuthResponse>("POST", "/auth", {
      kind,
      principal,
      secret,
    });
    this.token = auth.token;
    return auth;
  }

  registerCitizen(
    fields: Record<string, string>,
  ): Promise<RegisterResponse> {
    return this.request("POST", "/citizens", fields);
  }

  verify(
    nid: string,
    claims: Record<string, string>,
  ): Promise<VerifyResponse> {
    return this.request("POST", `/citizens/${encodeURIComponent(nid)}/verify`, {
      claims,
    });
  }

  ownerLookup(nid: string): Promise<OwnerResponse> {
    return this.request("GET", `/citizens/${encodeURIComponent(nid)}`);
  }

  invoice(from?: number, to?: number): Promise<InvoiceResponse> {
    const params = new URLSearchParams();
    if (from !== undefined) params.set("from", String(from));
    if (to !== undefined) params.set("to", String(to));
    const qs = params.toString();
    return this.request("GET", qs ? `/invoice?${qs}` : "/invoice");
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/health");
  }
}
