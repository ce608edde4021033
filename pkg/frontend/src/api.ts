/**
 * Typed client for the annotation service.
 *
 * The UI never computes scores or labels itself; everything model-derived in
 * these payloads comes straight from the server.
 */

export interface SessionSnapshot {
  id: string;
  name: string;
  status: "selecting" | "awaiting_annotation" | "retraining" | "done";
  iteration: number;
  iterations_total: number;
  targets: string[];
  algorithm: string;
  batch_size: number;
  batch_total: number;
  batch_pending: number;
}

export interface BatchItem {
  id: string;
  target: string;
  text: string;
  tokens: string[];
  scores: Record<string, number>;
  rank: number;
}

export interface BatchView {
  session_id: string;
  iteration: number;
  items: BatchItem[];
}

export interface AnnotationRecord {
  id: string;
  domain?: string;
  intent?: string;
  bio_tags?: string[];
  annotator: string;
  flag: "ok" | "unactionable" | "out_of_domain";
}

export interface IterationMetrics {
  iteration: number;
  annotated: number;
  in_target_fraction: number;
  noise_fraction: number;
}

export interface SessionMetrics {
  empty: boolean;
  iterations: IterationMetrics[];
  throughput_per_minute: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: string[] = [],
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${response.status}`;
  let details: string[] = [];
  try {
    const body = await response.json();
    code = body.code ?? code;
    message = body.message ?? message;
    details = (body.details ?? []).map((d: unknown) => String(d));
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message, details);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  createSession(body: {
    targets: string[];
    algorithm?: string;
    iterations?: number;
    batch_size?: number;
    seed?: number;
    name?: string;
  }): Promise<SessionSnapshot> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  listSessions(): Promise<SessionSnapshot[]> {
    return this.request("/sessions");
  }

  getSession(id: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${id}`);
  }

  getBatch(id: string): Promise<BatchView> {
    return this.request(`/sessions/${id}/batch`);
  }

  submitAnnotations(
    id: string,
    records: AnnotationRecord[],
  ): Promise<{ accepted: number; status: string }> {
    return this.request(`/sessions/${id}/annotations`, {
      method: "POST",
      body: JSON.stringify(records),
    });
  }

  advance(id: string, iteration?: number): Promise<SessionSnapshot> {
    return this.request(`/sessions/${id}/advance`, {
      method: "POST",
      body: JSON.stringify(iteration === undefined ? {} : { iteration }),
    });
  }

  metrics(id: string): Promise<SessionMetrics> {
    return this.request(`/sessions/${id}/metrics`);
  }
}
