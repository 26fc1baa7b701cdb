// Orchestrates store + client: session setup, exemplar slots, commits on
// slider release, the blend control, and the multi-attribute grid.

import { MarbleClient } from "./api.js";
import { Debouncer } from "./debounce.js";
import { buildGridRequests, GridCell } from "./grid.js";
import { buildRenderRequest } from "./payload.js";
import { EditorStore } from "./state.js";
import type { AttributeName, HistoryEntry, RenderRequestBody } from "./types.js";

export class StudioController {
  readonly debouncer = new Debouncer<string>(250);

  constructor(
    readonly client: MarbleClient,
    readonly store: EditorStore,
  ) {}

  async init(): Promise<void> {
    const [attributes, backend] = await Promise.all([
      this.client.attributes(),
      this.client.backends(),
    ]);
    this.store.setAttributes(attributes.map((a) => a.attribute));
    this.store.setBackend(backend.backend_id);
  }

  async createSession(image: Blob, mask: Blob, depth?: Blob): Promise<string> {
    const sessionId = await this.client.createSession(image, mask, depth);
    const backend = await this.client.backends();
    this.store.setSession(sessionId, backend.backend_id);
    return sessionId;
  }

  async uploadExemplar(slot: "A" | "B", image: Blob): Promise<void> {
    const session = this.requireSession();
    const info = await this.client.addExemplar(session, image, slot);
    this.store.setExemplar(slot, { name: info.name, digest: info.digest });
  }

  private requireSession(): string {
    const { sessionId } = this.store.snapshot();
    if (sessionId === null) throw new Error("no active session");
    return sessionId;
  }

  private async submit(request: RenderRequestBody): Promise<HistoryEntry> {
    const session = this.requireSession();
    const jobId = await this.client.render(session, request);
    this.store.beginJob(jobId, request);
    const job = await this.client.pollJob(jobId);
    if (job.state === "failed") {
      this.store.completeJob(jobId, { state: "failed", error: job.error ?? "failed" });
    } else {
      this.store.completeJob(jobId, {
        state: "done",
        digest: job.result ?? undefined,
        resultUrl: job.result_url,
      });
    }
    const entry = this.store
      .snapshot()
      .history.find((item) => item.jobId === jobId);
    if (!entry) throw new Error(`history lost job ${jobId}`);
    return entry;
  }

  /** Slider release: one request carrying every active slider value. */
  onSliderCommit(attribute: AttributeName, delta: number): Promise<HistoryEntry> {
    this.store.setSlider(attribute, delta);
    return this.submit(buildRenderRequest(this.store.snapshot()));
  }

  /** Explicit render button: commit current state as-is. */
  renderCurrent(): Promise<HistoryEntry> {
    return this.submit(buildRenderRequest(this.store.snapshot()));
  }

  /** Debounced variant used while dragging; fires only after release. */
  onSliderDrag(attribute: AttributeName, delta: number): void {
    this.store.setSlider(attribute, delta);
    this.debouncer.schedule("render", () => {
      void this.renderCurrent();
    });
  }

  /** Blend slider commit; requires both exemplar slots. */
  onBlendChange(alpha: number): Promise<HistoryEntry> {
    if (!this.store.blendEnabled) {
      throw new Error("blend control requires both exemplar slots");
    }
    this.store.setAlpha(alpha);
    return this.submit(buildRenderRequest(this.store.snapshot()));
  }

  /** steps x steps grid over two attributes; one request per cell. */
  async renderGrid(
    attrX: AttributeName,
    attrY: AttributeName,
    steps: number,
  ): Promise<{ cell: GridCell; entry: HistoryEntry }[]> {
    const cells = buildGridRequests(this.store.snapshot(), attrX, attrY, steps);
    const results = [];
    for (const cell of cells) {
      results.push({ cell, entry: await this.submit(cell.request) });
    }
    return results;
  }
}
