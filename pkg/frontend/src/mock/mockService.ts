// In-memory stand-in for the marble service, used by tests and the demo
// mode. It mirrors the HTTP contract (sessions, exemplar caching, async
// jobs) and derives result digests deterministically from the canonical
// render spec, so identical requests always produce identical digests.

import type { FetchLike } from "../api.js";
import type { AttributeName, RenderRequestBody } from "../types.js";

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

export function fnv1a64(data: string): string {
  let hash = FNV_OFFSET;
  for (let i = 0; i < data.length; i += 1) {
    hash ^= BigInt(data.charCodeAt(i) & 0xff);
    hash = (hash * FNV_PRIME) & MASK64;
  }
  return hash.toString(16).padStart(16, "0");
}

export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

// 1x1 gray PNG; the digest is what distinguishes results in the mock.
const PNG_BYTES = Uint8Array.from(
  atob(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNsaGj4DwAFhAJ/1pDXwgAAAABJRU5ErkJggg==",
  ),
  (c) => c.charCodeAt(0),
);

interface MockSession {
  exemplars: Map<string, { digest: string }>;
  seed: number;
}

interface MockJob {
  state: "queued" | "done" | "failed";
  digest: string;
}

export interface LoggedRequest {
  method: string;
  path: string;
  body?: unknown;
}

export class MockService {
  readonly requestLog: LoggedRequest[] = [];
  readonly attributes: AttributeName[] = ["roughness", "metallic"];
  private sessions = new Map<string, MockSession>();
  private jobs = new Map<string, MockJob>();
  private embeddingCache = new Map<string, string>();
  encoderCalls = 0;
  private counter = 0;

  readonly fetch: FetchLike = async (url, init) => this.handle(url, init);

  private nextId(prefix: string): string {
    this.counter += 1;
    return `${prefix}-${this.counter.toString(16).padStart(6, "0")}`;
  }

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  private error(status: number, code: string, detail: string): Response {
    return this.json(status, { detail: { code, detail } });
  }

  async handle(url: string, init?: RequestInit): Promise<Response> {
    const method = (init?.method ?? "GET").toUpperCase();
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    let parsedBody: unknown;
    if (typeof init?.body === "string") parsedBody = JSON.parse(init.body);
    this.requestLog.push({ method, path, body: parsedBody });

    if (method === "POST" && path === "/sessions") {
      return this.createSession(init?.body as FormData);
    }
    let match = path.match(/^\/sessions\/([^/]+)\/exemplars$/);
    if (method === "POST" && match) {
      return this.addExemplar(match[1], init?.body as FormData);
    }
    match = path.match(/^\/sessions\/([^/]+)\/render$/);
    if (method === "POST" && match) {
      return this.render(match[1], parsedBody as RenderRequestBody);
    }
    match = path.match(/^\/jobs\/([^/]+)\/result$/);
    if (method === "GET" && match) {
      const job = this.jobs.get(match[1]);
      if (!job || job.state !== "done") {
        return this.error(404, "NoResult", `job ${match[1]}`);
      }
      return new Response(PNG_BYTES, {
        status: 200,
        headers: { "content-type": "image/png", "x-marble-digest": job.digest },
      });
    }
    match = path.match(/^\/jobs\/([^/]+)$/);
    if (method === "GET" && match) {
      const job = this.jobs.get(match[1]);
      if (!job) return this.error(404, "UnknownJob", `no job ${match[1]}`);
      return this.json(200, {
        job_id: match[1],
        state: job.state,
        result: job.state === "done" ? job.digest : null,
        result_url: job.state === "done" ? `/jobs/${match[1]}/result` : undefined,
      });
    }
    if (method === "GET" && path === "/attributes") {
      return this.json(
        200,
        this.attributes.map((attribute) => ({
          attribute,
          encoder_id: "mock-16",
          rank: 1,
          weights_digest: "mock",
        })),
      );
    }
    if (method === "GET" && path === "/backends") {
      return this.json(200, {
        backend_id: "mock",
        blocks: Array.from({ length: 9 }, (_, i) => `B${i}`),
        default_blocks: ["B4"],
        capabilities: ["depth_conditioning", "inpainting"],
      });
    }
    return this.error(404, "UnknownRoute", `${method} ${path}`);
  }

  private async formBytes(form: FormData, field: string): Promise<Uint8Array | null> {
    const value = form.get(field);
    if (value === null) return null;
    if (typeof value === "string") return new TextEncoder().encode(value);
    return new Uint8Array(await (value as Blob).arrayBuffer());
  }

  private async createSession(form: FormData): Promise<Response> {
    const image = await this.formBytes(form, "image");
    const mask = await this.formBytes(form, "mask");
    if (!image || image.length === 0) {
      return this.error(400, "InvalidImage", "missing context image");
    }
    if (!mask || mask.length === 0) {
      return this.error(400, "EmptyMask", "mask selects no foreground pixels");
    }
    const sessionId = this.nextId("session");
    this.sessions.set(sessionId, { exemplars: new Map(), seed: 0 });
    return this.json(201, { session_id: sessionId });
  }

  private async addExemplar(sessionId: string, form: FormData): Promise<Response> {
    const session = this.sessions.get(sessionId);
    if (!session) return this.error(404, "UnknownSession", sessionId);
    const bytes = await this.formBytes(form, "image");
    if (!bytes) return this.error(400, "InvalidImage", "missing exemplar");
    const digest = fnv1a64(Array.from(bytes, (b) => String.fromCharCode(b)).join(""));
    let embeddingDigest = this.embeddingCache.get(digest);
    const cacheHit = embeddingDigest !== undefined;
    if (!cacheHit) {
      this.encoderCalls += 1;
      embeddingDigest = fnv1a64(`embedding:${digest}`);
      this.embeddingCache.set(digest, embeddingDigest);
    }
    const name = (form.get("name") as string) || `exemplar-${session.exemplars.size}`;
    session.exemplars.set(name, { digest });
    return this.json(200, {
      name,
      digest,
      embedding_digest: embeddingDigest,
      cache_hit: cacheHit,
    });
  }

  private render(sessionId: string, body: RenderRequestBody): Response {
    const session = this.sessions.get(sessionId);
    if (!session) return this.error(404, "UnknownSession", sessionId);
    const names: string[] = [];
    if ("exemplar" in body.base) {
      names.push(body.base.exemplar);
    } else {
      const { a, b, alpha } = body.base.blend;
      names.push(a, b);
      if (!(alpha >= 0 && alpha <= 1)) {
        return this.error(422, "InvalidWeight", `alpha ${alpha} outside [0, 1]`);
      }
    }
    for (const name of names) {
      if (!session.exemplars.has(name)) {
        return this.error(422, "UnknownExemplar", `exemplar ${name} not uploaded`);
      }
    }
    for (const edit of body.edits) {
      if (!this.attributes.includes(edit.attribute)) {
        return this.error(422, "UnknownAttribute", edit.attribute);
      }
      if (!(edit.delta >= -1 && edit.delta <= 1)) {
        return this.error(422, "InvalidStrength", `delta ${edit.delta}`);
      }
    }
    const spec = {
      session: sessionId,
      base: body.base,
      edits: body.edits,
      seed: body.seed ?? session.seed,
    };
    const digest = fnv1a64(canonicalJson(spec));
    const jobId = this.nextId("job");
    this.jobs.set(jobId, { state: "done", digest });
    return this.json(202, { job_id: jobId });
  }
}
