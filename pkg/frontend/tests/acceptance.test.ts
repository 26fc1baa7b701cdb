// UI contract acceptance, run against the mock service:
//   - committing {roughness:+0.5, metallic:+0.5} issues exactly one render
//     request carrying both edits;
//   - the blend weight is serialized exactly;
//   - a 3x3 grid issues 9 requests over the uniform strength grid;
//   - the no-edit grid cell's digest equals the single no-edit render.

import { beforeEach, describe, expect, it } from "vitest";

import { MarbleClient } from "../src/api.js";
import { StudioController } from "../src/controller.js";
import { MockService } from "../src/mock/mockService.js";
import { EditorStore } from "../src/state.js";
import type { RenderRequestBody } from "../src/types.js";

let service: MockService;
let controller: StudioController;

function pngBlob(seed: number): Blob {
  return new Blob([new Uint8Array([137, 80, 78, 71, seed])], { type: "image/png" });
}

function renderRequests(): { path: string; body: RenderRequestBody }[] {
  return service.requestLog
    .filter((r) => r.method === "POST" && /\/render$/.test(r.path))
    .map((r) => ({ path: r.path, body: r.body as RenderRequestBody }));
}

beforeEach(async () => {
  service = new MockService();
  controller = new StudioController(
    new MarbleClient("", service.fetch),
    new EditorStore(),
  );
  await controller.init();
  await controller.createSession(pngBlob(1), pngBlob(2));
  await controller.uploadExemplar("A", pngBlob(3));
});

describe("acceptance: UI contract", () => {
  it("two moved sliders produce exactly one request with both edits", async () => {
    controller.store.setSlider("roughness", 0.5);
    await controller.onSliderCommit("metallic", 0.5);

    const requests = renderRequests();
    expect(requests).toHaveLength(1);
    const { edits } = requests[0].body;
    expect(edits).toHaveLength(2);
    expect(edits).toContainEqual({ attribute: "roughness", delta: 0.5 });
    expect(edits).toContainEqual({ attribute: "metallic", delta: 0.5 });
    console.log("PASS  11a. single request with both edits");
  });

  it("serializes the blend weight exactly", async () => {
    await controller.uploadExemplar("B", pngBlob(4));
    await controller.onBlendChange(0.337);

    const requests = renderRequests();
    expect(requests).toHaveLength(1);
    const base = requests[0].body.base;
    if (!("blend" in base)) throw new Error("expected blend base");
    expect(base.blend).toEqual({ a: "A", b: "B", alpha: 0.337 });
    console.log("PASS  11b. blend alpha serialized exactly");
  });

  it("blend commit without slot B is rejected client-side", async () => {
    expect(() => controller.onBlendChange(0.5)).toThrow(/both exemplar slots/);
    expect(renderRequests()).toHaveLength(0);
  });

  it("3x3 grid issues 9 requests over the uniform delta grid", async () => {
    const results = await controller.renderGrid("roughness", "metallic", 3);
    expect(results).toHaveLength(9);
    const requests = renderRequests();
    expect(requests).toHaveLength(9);

    const seen = new Set<string>();
    for (const { body } of requests) {
      const rough = body.edits.find((e) => e.attribute === "roughness")?.delta ?? 0;
      const metal = body.edits.find((e) => e.attribute === "metallic")?.delta ?? 0;
      expect([-1, 0, 1]).toContain(rough);
      expect([-1, 0, 1]).toContain(metal);
      seen.add(`${rough},${metal}`);
    }
    expect(seen.size).toBe(9);
    console.log("PASS  11c. 3x3 grid -> 9 requests on the uniform grid");
  });

  it("the no-edit grid cell digest equals the single no-edit render", async () => {
    const single = await controller.renderCurrent();
    const grid = await controller.renderGrid("roughness", "metallic", 3);
    const center = grid.find((g) => g.cell.deltaX === 0 && g.cell.deltaY === 0)!;
    expect(center.entry.state).toBe("done");
    expect(center.entry.digest).toBe(single.digest);
    console.log("PASS  11d. no-edit cell digest equals single no-edit render");
  });

  it("dragging without release issues no request (debounce)", async () => {
    controller.onSliderDrag("roughness", 0.2);
    controller.onSliderDrag("roughness", 0.4);
    expect(renderRequests()).toHaveLength(0);
    expect(controller.debouncer.flushPendingCount()).toBe(1);
    controller.debouncer.cancel("render");
  });

  it("history is traceable: every entry keeps its request JSON", async () => {
    await controller.onSliderCommit("roughness", 0.5);
    await controller.onSliderCommit("roughness", -0.5);
    const history = controller.store.snapshot().history;
    expect(history).toHaveLength(2);
    expect(history[0].request.edits).toEqual([{ attribute: "roughness", delta: 0.5 }]);
    expect(history[1].request.edits).toEqual([{ attribute: "roughness", delta: -0.5 }]);
    expect(history.every((h) => h.state === "done" && h.digest)).toBe(true);
  });
});
