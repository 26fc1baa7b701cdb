// REST client for the marble service. All math stays server-side; this
// module only moves payloads. fetch is injectable so tests can run against
// the in-memory mock service.

import type {
  AttributeInfo,
  BackendInfo,
  ExemplarInfo,
  JobInfo,
  RenderRequestBody,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

async function parseError(resp: Response): Promise<never> {
  let code = "HttpError";
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    const payload = body.detail ?? body;
    code = payload.code ?? code;
    detail = payload.detail ?? JSON.stringify(payload);
  } catch {
    // non-JSON error body; keep statusText
  }
  throw new ApiError(resp.status, code, detail);
}

export class MarbleClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  async createSession(image: Blob, mask: Blob, depth?: Blob): Promise<string> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("mask", mask, "mask.png");
    if (depth) form.append("depth", depth, "depth.png");
    const body = await this.json<{ session_id: string }>("/sessions", {
      method: "POST",
      body: form,
    });
    return body.session_id;
  }

  addExemplar(sessionId: string, image: Blob, name?: string): Promise<ExemplarInfo> {
    const form = new FormData();
    form.append("image", image, "exemplar.png");
    if (name) form.append("name", name);
    return this.json<ExemplarInfo>(
      `/sessions/${encodeURIComponent(sessionId)}/exemplars`,
      { method: "POST", body: form },
    );
  }

  async render(sessionId: string, body: RenderRequestBody): Promise<string> {
    const out = await this.json<{ job_id: string }>(
      `/sessions/${encodeURIComponent(sessionId)}/render`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    return out.job_id;
  }

  getJob(jobId: string): Promise<JobInfo> {
    return this.json<JobInfo>(`/jobs/${encodeURIComponent(jobId)}`);
  }

  async pollJob(
    jobId: string,
    { intervalMs = 150, timeoutMs = 120_000 } = {},
  ): Promise<JobInfo> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.state === "done" || job.state === "failed") return job;
      if (Date.now() > deadline) throw new ApiError(408, "PollTimeout", jobId);
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async fetchResult(jobId: string): Promise<Blob> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/jobs/${encodeURIComponent(jobId)}/result`,
    );
    if (!resp.ok) await parseError(resp);
    return resp.blob();
  }

  attributes(): Promise<AttributeInfo[]> {
    return this.json<AttributeInfo[]>("/attributes");
  }

  backends(): Promise<BackendInfo> {
    return this.json<BackendInfo>("/backends");
  }
}
