import { describe, expect, it } from "vitest";

import { activeEdits, buildRenderRequest, clampAlpha, clampDelta } from "../src/payload.js";
import { EditorStore } from "../src/state.js";

function storeWith(sliders: Record<string, number> = {}, exemplarB = false) {
  const store = new EditorStore(["roughness", "metallic"], 7);
  store.setExemplar("A", { name: "A", digest: "da" });
  if (exemplarB) store.setExemplar("B", { name: "B", digest: "db" });
  for (const [attribute, delta] of Object.entries(sliders)) {
    store.setSlider(attribute as "roughness" | "metallic", delta);
  }
  return store;
}

describe("buildRenderRequest", () => {
  it("emits an empty edits list when every slider is zero", () => {
    const request = buildRenderRequest(storeWith().snapshot());
    expect(request.edits).toEqual([]);
    expect(request.base).toEqual({ exemplar: "A" });
  });

  it("maps a single slider to one edit", () => {
    const request = buildRenderRequest(storeWith({ roughness: 0.5 }).snapshot());
    expect(request.edits).toEqual([{ attribute: "roughness", delta: 0.5 }]);
  });

  it("carries both moved sliders in one request", () => {
    const request = buildRenderRequest(
      storeWith({ roughness: 0.5, metallic: 0.5 }).snapshot(),
    );
    expect(request.edits).toHaveLength(2);
    expect(request.edits).toContainEqual({ attribute: "roughness", delta: 0.5 });
    expect(request.edits).toContainEqual({ attribute: "metallic", delta: 0.5 });
  });

  it("uses a blend base only when both slots are filled", () => {
    const single = buildRenderRequest(storeWith({}, false).snapshot());
    expect(single.base).toEqual({ exemplar: "A" });
    const store = storeWith({}, true);
    store.setAlpha(0.25);
    const both = buildRenderRequest(store.snapshot());
    expect(both.base).toEqual({ blend: { a: "A", b: "B", alpha: 0.25 } });
  });

  it("serializes alpha exactly", () => {
    const store = storeWith({}, true);
    store.setAlpha(0.337);
    const request = buildRenderRequest(store.snapshot());
    if (!("blend" in request.base)) throw new Error("expected blend base");
    expect(request.base.blend.alpha).toBe(0.337);
    expect(JSON.parse(JSON.stringify(request)).base.blend.alpha).toBe(0.337);
  });

  it("applies overrides without mutating the store", () => {
    const store = storeWith({ roughness: 0.5 });
    const request = buildRenderRequest(store.snapshot(), { metallic: -1 });
    expect(request.edits).toContainEqual({ attribute: "metallic", delta: -1 });
    expect(store.snapshot().sliders.get("metallic")).toBe(0);
  });
});

describe("clamping", () => {
  it("clamps deltas to [-1, 1]", () => {
    expect(clampDelta(1.5)).toBe(1);
    expect(clampDelta(-2)).toBe(-1);
    expect(clampDelta(0.3)).toBe(0.3);
  });

  it("clamps alpha to [0, 1]", () => {
    expect(clampAlpha(1.5)).toBe(1);
    expect(clampAlpha(-0.5)).toBe(0);
  });

  it("activeEdits drops zero deltas only", () => {
    const sliders = new Map<"roughness" | "metallic", number>([
      ["roughness", 0],
      ["metallic", -0.25],
    ]);
    expect(activeEdits(sliders)).toEqual([{ attribute: "metallic", delta: -0.25 }]);
  });
});
