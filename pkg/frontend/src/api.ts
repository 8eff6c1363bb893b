// Thin typed client for the session service. Every call returns the parsed
// JSON body or throws ApiError carrying the service's structured error.

import type { LabelChoice, PatchResponse, SessionView } from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, detail: string) {
    super(detail);
    this.code = code;
    this.status = status;
  }
}

async function parse<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let code = "http_error";
  let detail = `${resp.status}`;
  try {
    const body = await resp.json();
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(resp.status, code, detail);
}

export class SessionApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(raster: string, config: Record<string, unknown>): Promise<SessionView> {
    const resp = await this.fetchFn(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ raster, config }),
    });
    return parse<SessionView>(resp);
  }

  async getView(id: string): Promise<SessionView> {
    return parse<SessionView>(await this.fetchFn(this.url(`/sessions/${id}`)));
  }

  async nextQuery(id: string): Promise<SessionView> {
    return parse<SessionView>(await this.fetchFn(this.url(`/sessions/${id}/query`)));
  }

  async postAnswer(id: string, x: number, y: number, label: LabelChoice): Promise<SessionView> {
    const resp = await this.fetchFn(this.url(`/sessions/${id}/answer`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ x, y, label }),
    });
    return parse<SessionView>(resp);
  }

  async getPatch(id: string, x: number, y: number, r: number): Promise<PatchResponse> {
    const params = new URLSearchParams({ x: String(x), y: String(y), r: String(r) });
    return parse<PatchResponse>(
      await this.fetchFn(this.url(`/sessions/${id}/patch?${params}`)),
    );
  }

  mapUrl(id: string, kind: "classification" | "confidence", epsilon: number): string {
    // epsilon busts the browser cache when a new iteration's map lands
    return this.url(`/sessions/${id}/maps/${kind}?e=${epsilon}`);
  }

  curvesUrl(id: string): string {
    return this.url(`/sessions/${id}/curves`);
  }
}
