/** Typed client for the recommendation service REST API. */

import type { QueryJson } from "./model.js";

export interface HealthInfo {
  status: string;
  recipes: number;
  tags: number;
}

export interface RecipeDetail {
  id: string;
  title: string;
  ingredients: string[];
  instructions: string[];
  nutrition: Record<string, number>;
  tags: string[];
}

export interface ChunkOutcome {
  index: number;
  parsed: string[];
  hallucinated: string[];
  failed: boolean;
}

export interface QueryResponse {
  titles: string[];
  results: { id: string | null; title: string }[];
  query: QueryJson;
  per_chunk: ChunkOutcome[];
  failed_chunks: number[];
}

export interface JobRecord {
  job_id: string;
  kind: string;
  status: "queued" | "running" | "done" | "error";
  output_path: string | null;
  error: string | null;
  timings: Record<string, number>;
}

/** Service error envelope; "network" marks transport-level failures. */
export class ApiError extends Error {
  readonly code: string;
  readonly status: number;
  readonly span?: [number, number];

  constructor(
    code: string,
    message: string,
    status: number,
    span?: [number, number],
  ) {
    super(message);
    this.name = "ApiError";
    this.code = code;
    this.status = status;
    this.span = span;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;
  private querySeq = 0;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    // bind so a bare global fetch keeps its expected receiver
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (error) {
      throw new ApiError("network", `service unreachable: ${String(error)}`, 0);
    }
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // fall through to the status check with an empty body
    }
    if (!response.ok) {
      const err = (body ?? {}) as {
        code?: string;
        message?: string;
        span?: [number, number];
      };
      throw new ApiError(
        err.code ?? "http_error",
        err.message ?? `request failed with status ${response.status}`,
        response.status,
        err.span,
      );
    }
    return body as T;
  }

  health(): Promise<HealthInfo> {
    return this.request<HealthInfo>("/health");
  }

  async tags(): Promise<string[]> {
    const body = await this.request<{ tags: string[] }>("/tags");
    return body.tags;
  }

  async ingredients(tag?: string): Promise<string[]> {
    const query = tag ? `?${new URLSearchParams({ tag })}` : "";
    const body = await this.request<{ tag: string | null; ingredients: string[] }>(
      `/ingredients${query}`,
    );
    return body.ingredients;
  }

  recipe(id: string): Promise<RecipeDetail> {
    return this.request<RecipeDetail>(`/recipes/${encodeURIComponent(id)}`);
  }

  /** Submit a structured query. Responses that arrive after a newer
   * submission resolve to null so stale results are never rendered. */
  async submitQuery(query: QueryJson): Promise<QueryResponse | null> {
    const seq = ++this.querySeq;
    const response = await this.request<QueryResponse>("/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ query }),
    });
    return seq === this.querySeq ? response : null;
  }

  job(id: string): Promise<JobRecord> {
    return this.request<JobRecord>(`/jobs/${encodeURIComponent(id)}`);
  }
}
