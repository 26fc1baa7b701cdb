// Wire types mirroring the service HTTP API.

export type AttributeName = "roughness" | "metallic" | "transparency" | "glow";

export interface EditPayload {
  attribute: AttributeName;
  delta: number;
}

export type BasePayload =
  | { exemplar: string }
  | { blend: { a: string; b: string; alpha: number } };

export interface RenderRequestBody {
  base: BasePayload;
  edits: EditPayload[];
  injection?: { blocks?: string[]; scale?: number };
  seed?: number;
}

export interface JobInfo {
  job_id: string;
  state: "queued" | "running" | "done" | "failed";
  result?: string | null;
  result_url?: string;
  error?: string | null;
}

export interface ExemplarInfo {
  name: string;
  digest: string;
  embedding_digest: string;
  cache_hit: boolean;
}

export interface AttributeInfo {
  attribute: AttributeName;
  encoder_id: string;
  rank: number;
  weights_digest: string;
}

export interface BackendInfo {
  backend_id: string;
  blocks: string[];
  default_blocks: string[];
  capabilities: string[];
}

export interface HistoryEntry {
  jobId: string;
  request: RenderRequestBody;
  state: "pending" | "done" | "failed";
  digest?: string;
  resultUrl?: string;
  error?: string;
}
