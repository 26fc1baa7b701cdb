import { beforeEach, describe, expect, it } from "vitest";

import { ApiError, MarbleClient } from "../src/api.js";
import { MockService } from "../src/mock/mockService.js";

let service: MockService;
let client: MarbleClient;

beforeEach(() => {
  service = new MockService();
  client = new MarbleClient("", service.fetch);
});

function pngBlob(seed = 0): Blob {
  return new Blob([new Uint8Array([137, 80, 78, 71, seed])], { type: "image/png" });
}

async function session(): Promise<string> {
  return client.createSession(pngBlob(1), pngBlob(2));
}

describe("MarbleClient against the mock service", () => {
  it("creates sessions", async () => {
    const id = await session();
    expect(id).toMatch(/^session-/);
  });

  it("rejects an empty mask with the service's error code", async () => {
    await expect(
      client.createSession(pngBlob(1), new Blob([])),
    ).rejects.toMatchObject({ status: 400, code: "EmptyMask" });
  });

  it("caches exemplar embeddings by content", async () => {
    const id = await session();
    const first = await client.addExemplar(id, pngBlob(7), "A");
    const again = await client.addExemplar(id, pngBlob(7), "A");
    expect(first.cache_hit).toBe(false);
    expect(again.cache_hit).toBe(true);
    expect(again.digest).toBe(first.digest);
    expect(service.encoderCalls).toBe(1);
  });

  it("renders and polls jobs to completion", async () => {
    const id = await session();
    await client.addExemplar(id, pngBlob(7), "A");
    const jobId = await client.render(id, { base: { exemplar: "A" }, edits: [] });
    const job = await client.pollJob(jobId);
    expect(job.state).toBe("done");
    expect(job.result).toBeTruthy();
    const blob = await client.fetchResult(jobId);
    expect(blob.size).toBeGreaterThan(0);
  });

  it("surfaces unknown attributes as 422", async () => {
    const id = await session();
    await client.addExemplar(id, pngBlob(7), "A");
    await expect(
      client.render(id, {
        base: { exemplar: "A" },
        edits: [{ attribute: "sparkle" as never, delta: 0.5 }],
      }),
    ).rejects.toMatchObject({ status: 422, code: "UnknownAttribute" });
  });

  it("lists attributes and backend info", async () => {
    const attrs = await client.attributes();
    expect(attrs.map((a) => a.attribute)).toEqual(["roughness", "metallic"]);
    const backend = await client.backends();
    expect(backend.backend_id).toBe("mock");
    expect(backend.default_blocks).toEqual(["B4"]);
  });

  it("wraps unknown jobs in ApiError", async () => {
    await expect(client.getJob("nope")).rejects.toBeInstanceOf(ApiError);
  });
});
