/**
 * Typed client for the gateway /v1/ API.
 *
 * Every number the dashboard shows comes straight out of these payloads;
 * the client never aggregates or rescales, so a screenful of values can
 * always be traced back to one response field.
 */

export interface ProfileRow {
  device_id: string;
  company: string;
  jurisdiction: string;
  byte_count: number;
  packet_count: number;
  share: number;
}

export interface ProfilePayload {
  window: [number, number];
  rows: ProfileRow[];
}

export interface TimeseriesPayload {
  window: [number, number];
  bucket_width_ms: number;
  device_id: string | null;
  company: string | null;
  points: [number, number][];
}

export interface ReportPayload {
  window: [number, number];
  total_packets: number;
  total_bytes: number;
  distinct_devices: number;
  distinct_companies: number;
  distinct_jurisdictions: number;
  distinct_destinations: number;
  top_n: number;
  top_n_share: number;
  out_of_region_share: number;
  home_region: string[];
}

export interface StagePayload {
  stage: number;
  stage_started_ms: Record<string, number>;
  features: string[];
}

export interface DevicePayload {
  device_id: string;
  friendly_name: string;
  first_seen_ms: number;
  last_seen_ms: number;
}

export interface CompanyPayload {
  name: string;
  parent: string | null;
  jurisdiction: string;
  threat: "NONE" | "SUSPICIOUS" | "MALICIOUS" | "UNKNOWN";
  source: string;
  resolved_at_ms: number;
  ttl_ms: number;
}

export interface CompanyScopePayload {
  kind: "company" | "group" | "blocklist";
  value: string;
}

export interface DirectivePayload {
  id: string;
  device_scope: string;
  company_scope: CompanyScopePayload;
  state: "ENABLED" | "DISABLED";
  created_at_ms: number;
  label: string;
}

export interface PreviewPayload {
  directive_id: string;
  window: [number, number];
  matched_bytes: number;
  matched_flows: number;
  affected_companies: string[];
  per_device: Record<string, { bytes: number; flows: number }>;
}

export interface RenderedModulePayload {
  module_id: string;
  title: string;
  body: string;
  examples: {
    slot: string;
    rendered: string;
    window: [number, number];
    source_query: string;
  }[];
  completed_at_ms: number | null;
}

export interface ModuleInfoPayload {
  id: string;
  title: string;
  offset_days: number;
  completed_at_ms: number | null;
}

export interface StageGatePayload {
  error: "stage_gate";
  feature: string;
  current_stage: number;
  required_stage: number;
  detail: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly payload: unknown,
  ) {
    super(`gateway returned ${status}`);
  }
}

export function stageGateOf(err: unknown): StageGatePayload | null {
  if (err instanceof ApiError && typeof err.payload === "object" && err.payload) {
    const payload = err.payload as Record<string, unknown>;
    if (payload.error === "stage_gate") {
      return payload as unknown as StageGatePayload;
    }
  }
  return null;
}

export class GatewayClient {
  constructor(
    readonly base: string = "",
    private adminToken?: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.adminToken) headers["x-admin-token"] = this.adminToken;
    const response = await fetch(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const payload = text ? JSON.parse(text) : null;
    if (!response.ok) throw new ApiError(response.status, payload);
    return payload as T;
  }

  getStage(): Promise<StagePayload> {
    return this.request("GET", "/v1/stage");
  }

  setStage(stage: number, override = false): Promise<StagePayload> {
    return this.request("POST", "/v1/stage", { stage, override });
  }

  getDevices(): Promise<{ devices: DevicePayload[] }> {
    return this.request("GET", "/v1/devices");
  }

  getCompanies(): Promise<{ companies: CompanyPayload[] }> {
    return this.request("GET", "/v1/companies");
  }

  getProfile(start: number, end: number): Promise<ProfilePayload> {
    return this.request("GET", `/v1/profile?start=${start}&end=${end}`);
  }

  getTimeseries(
    start: number,
    end: number,
    opts: { company?: string; device?: string; bucketWidthMs?: number } = {},
  ): Promise<TimeseriesPayload> {
    const params = new URLSearchParams({ start: String(start), end: String(end) });
    if (opts.company) params.set("company", opts.company);
    if (opts.device) params.set("device", opts.device);
    if (opts.bucketWidthMs) params.set("bucket_width_ms", String(opts.bucketWidthMs));
    return this.request("GET", `/v1/timeseries?${params}`);
  }

  getReport(start: number, end: number, topN = 3): Promise<ReportPayload> {
    return this.request("GET", `/v1/report?start=${start}&end=${end}&top_n=${topN}`);
  }

  getDirectives(): Promise<{ directives: DirectivePayload[] }> {
    return this.request("GET", "/v1/directives");
  }

  createDirective(deviceScope: string, companyScope: CompanyScopePayload): Promise<DirectivePayload> {
    return this.request("POST", "/v1/directives", {
      device_scope: deviceScope,
      company_scope: companyScope,
    });
  }

  enableDirective(id: string): Promise<DirectivePayload> {
    return this.request("POST", `/v1/directives/${id}/enable`);
  }

  disableDirective(id: string): Promise<DirectivePayload> {
    return this.request("POST", `/v1/directives/${id}/disable`);
  }

  previewDirective(id: string, start?: number, end?: number): Promise<PreviewPayload> {
    const params = new URLSearchParams();
    if (start !== undefined) params.set("start", String(start));
    if (end !== undefined) params.set("end", String(end));
    const query = params.toString();
    return this.request("GET", `/v1/directives/${id}/preview${query ? "?" + query : ""}`);
  }

  curriculumDue(): Promise<{ due: string[] }> {
    return this.request("GET", "/v1/curriculum/due");
  }

  curriculumModules(): Promise<{ modules: ModuleInfoPayload[] }> {
    return this.request("GET", "/v1/curriculum/modules");
  }

  curriculumRendered(id: string, start: number, end: number): Promise<RenderedModulePayload> {
    return this.request("GET", `/v1/curriculum/${id}/rendered?start=${start}&end=${end}`);
  }

  completeModule(id: string): Promise<{ module_id: string; completed_at_ms: number }> {
    return this.request("POST", `/v1/curriculum/${id}/complete`);
  }
}
