// Single UI store. Embeddings are never touched client-side: the store
// holds slider positions and request/job bookkeeping only, and the render
// history is append-only so every displayed image stays traceable to the
// exact request JSON that produced it.

import type { AttributeName, HistoryEntry, RenderRequestBody } from "./types.js";
import { clampAlpha, clampDelta } from "./payload.js";

export interface ExemplarSlot {
  name: string;
  digest: string;
}

export interface UiEditState {
  sessionId: string | null;
  exemplarA: ExemplarSlot | null;
  exemplarB: ExemplarSlot | null;
  sliders: Map<AttributeName, number>;
  alpha: number;
  seed: number;
  lastJobId: string | null;
  history: HistoryEntry[];
  backendId: string | null;
  pending: number;
}

type Listener = (state: UiEditState) => void;

export class EditorStore {
  private state: UiEditState;
  private listeners: Listener[] = [];

  constructor(attributes: AttributeName[] = [], seed = 0) {
    this.state = {
      sessionId: null,
      exemplarA: null,
      exemplarB: null,
      sliders: new Map(attributes.map((a) => [a, 0])),
      alpha: 1.0,
      seed,
      lastJobId: null,
      history: [],
      backendId: null,
      pending: 0,
    };
  }

  snapshot(): UiEditState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  setSession(sessionId: string, backendId: string | null = null): void {
    this.state = { ...this.state, sessionId, backendId };
    this.emit();
  }

  setBackend(backendId: string): void {
    this.state = { ...this.state, backendId };
    this.emit();
  }

  setAttributes(attributes: AttributeName[]): void {
    const sliders = new Map(attributes.map((a) => [a, this.state.sliders.get(a) ?? 0]));
    this.state = { ...this.state, sliders };
    this.emit();
  }

  setExemplar(slot: "A" | "B", info: ExemplarSlot): void {
    this.state = {
      ...this.state,
      [slot === "A" ? "exemplarA" : "exemplarB"]: info,
    };
    this.emit();
  }

  get blendEnabled(): boolean {
    return this.state.exemplarA !== null && this.state.exemplarB !== null;
  }

  setSlider(attribute: AttributeName, delta: number): void {
    const sliders = new Map(this.state.sliders);
    sliders.set(attribute, clampDelta(delta));
    this.state = { ...this.state, sliders };
    this.emit();
  }

  setAlpha(alpha: number): void {
    this.state = { ...this.state, alpha: clampAlpha(alpha) };
    this.emit();
  }

  beginJob(jobId: string, request: RenderRequestBody): void {
    // history is append-only; entries are completed in place, never removed
    this.state = {
      ...this.state,
      lastJobId: jobId,
      pending: this.state.pending + 1,
      history: [...this.state.history, { jobId, request, state: "pending" }],
    };
    this.emit();
  }

  completeJob(
    jobId: string,
    outcome: { state: "done" | "failed"; digest?: string; resultUrl?: string; error?: string },
  ): void {
    const history = this.state.history.map((entry) =>
      entry.jobId === jobId ? { ...entry, ...outcome } : entry,
    );
    this.state = {
      ...this.state,
      history,
      pending: Math.max(0, this.state.pending - 1),
    };
    this.emit();
  }
}
