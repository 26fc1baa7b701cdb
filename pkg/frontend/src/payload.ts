// Pure request construction from UI state. Zero-strength sliders are
// omitted (no-op edits never reach the backend), all edits travel in one
// request (single generation pass), and alpha is serialized exactly as
// the slider holds it.

import type { AttributeName, BasePayload, RenderRequestBody } from "./types.js";
import type { UiEditState } from "./state.js";

export function clampDelta(value: number): number {
  return Math.min(1, Math.max(-1, value));
}

export function clampAlpha(value: number): number {
  return Math.min(1, Math.max(0, value));
}

export function activeEdits(
  sliders: ReadonlyMap<AttributeName, number>,
): { attribute: AttributeName; delta: number }[] {
  const edits: { attribute: AttributeName; delta: number }[] = [];
  for (const [attribute, delta] of sliders) {
    if (delta !== 0) edits.push({ attribute, delta });
  }
  return edits;
}

export function basePayload(state: UiEditState): BasePayload {
  if (state.exemplarB !== null) {
    return { blend: { a: "A", b: "B", alpha: state.alpha } };
  }
  return { exemplar: "A" };
}

export function buildRenderRequest(
  state: UiEditState,
  overrides?: Partial<Record<AttributeName, number>>,
): RenderRequestBody {
  const sliders = new Map(state.sliders);
  if (overrides) {
    for (const [attribute, delta] of Object.entries(overrides)) {
      sliders.set(attribute as AttributeName, clampDelta(delta as number));
    }
  }
  return {
    base: basePayload(state),
    edits: activeEdits(sliders),
    seed: state.seed,
  };
}
