// DOM wiring for the studio page. Logic lives in the testable modules;
// this file only binds inputs to the controller and paints the history.

import { MarbleClient } from "./api.js";
import { StudioController } from "./controller.js";
import { MockService } from "./mock/mockService.js";
import { EditorStore, UiEditState } from "./state.js";
import type { AttributeName } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fileOf(input: HTMLInputElement): Blob | undefined {
  return input.files?.[0] ?? undefined;
}

function renderHistory(state: UiEditState, client: MarbleClient): void {
  const list = el<HTMLDivElement>("history");
  list.replaceChildren();
  for (const entry of [...state.history].reverse()) {
    const card = document.createElement("div");
    card.className = `card ${entry.state}`;
    const caption = document.createElement("pre");
    caption.textContent = JSON.stringify(entry.request, null, 1);
    const status = document.createElement("span");
    status.textContent =
      entry.state === "done"
        ? `#${(entry.digest ?? "").slice(0, 10)}`
        : entry.state === "failed"
          ? `failed: ${entry.error}`
          : "rendering...";
    card.append(status, caption);
    if (entry.state === "done") {
      const img = document.createElement("img");
      img.alt = entry.jobId;
      void client.fetchResult(entry.jobId).then((blob) => {
        img.src = URL.createObjectURL(blob);
      });
      card.prepend(img);
      const download = document.createElement("a");
      download.textContent = "request JSON";
      download.href = URL.createObjectURL(
        new Blob([JSON.stringify(entry.request, null, 2)], { type: "application/json" }),
      );
      download.download = `${entry.jobId}.request.json`;
      card.append(download);
    }
    list.append(card);
  }
  el<HTMLSpanElement>("pending").textContent =
    state.pending > 0 ? `${state.pending} render(s) in flight` : "";
}

function buildSliders(
  state: UiEditState,
  controller: StudioController,
): void {
  const container = el<HTMLDivElement>("sliders");
  container.replaceChildren();
  for (const [attribute, value] of state.sliders) {
    const label = document.createElement("label");
    label.textContent = attribute;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "-1";
    input.max = "1";
    input.step = "0.05";
    input.value = String(value);
    const readout = document.createElement("span");
    readout.textContent = value.toFixed(2);
    input.addEventListener("input", () => {
      readout.textContent = Number(input.value).toFixed(2);
      controller.store.setSlider(attribute as AttributeName, Number(input.value));
    });
    // commit on release only: each render is an expensive diffusion job
    input.addEventListener("change", () => {
      void controller.onSliderCommit(attribute as AttributeName, Number(input.value));
    });
    label.append(input, readout);
    container.append(label);
  }
}

export async function startApp(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const useMock = params.get("backend") === "mock" || params.get("mock") === "1";
  const client = useMock
    ? new MarbleClient("", new MockService().fetch)
    : new MarbleClient("");
  const store = new EditorStore();
  const controller = new StudioController(client, store);

  await controller.init();
  const backendId = store.snapshot().backendId ?? "unknown";
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = useMock || backendId.startsWith("mock")
    ? `mock backend (${backendId}): renders are procedural stand-ins`
    : `backend: ${backendId}`;
  banner.className = useMock || backendId.startsWith("mock") ? "banner mock" : "banner real";

  buildSliders(store.snapshot(), controller);
  store.subscribe((state) => renderHistory(state, client));

  el<HTMLButtonElement>("create-session").addEventListener("click", () => {
    const image = fileOf(el<HTMLInputElement>("context-file"));
    const mask = fileOf(el<HTMLInputElement>("mask-file"));
    const depth = fileOf(el<HTMLInputElement>("depth-file"));
    if (!image || !mask) {
      alert("context image and mask are required");
      return;
    }
    void controller
      .createSession(image, mask, depth)
      .then((id) => {
        el<HTMLSpanElement>("session-label").textContent = id;
      })
      .catch((err) => alert(String(err)));
  });

  for (const slot of ["A", "B"] as const) {
    el<HTMLInputElement>(`exemplar-${slot.toLowerCase()}`).addEventListener(
      "change",
      (event) => {
        const input = event.target as HTMLInputElement;
        const file = fileOf(input);
        if (!file) return;
        void controller.uploadExemplar(slot, file).then(() => {
          const alphaInput = el<HTMLInputElement>("alpha");
          alphaInput.disabled = !controller.store.blendEnabled;
        });
      },
    );
  }

  const alphaInput = el<HTMLInputElement>("alpha");
  alphaInput.disabled = true;
  alphaInput.addEventListener("change", () => {
    const alpha = Number(alphaInput.value);
    el<HTMLSpanElement>("alpha-label").textContent =
      alpha === 1 ? "100% A" : alpha === 0 ? "100% B" : `${Math.round(alpha * 100)}% A`;
    void controller.onBlendChange(alpha).catch((err) => alert(String(err)));
  });

  el<HTMLButtonElement>("render").addEventListener("click", () => {
    void controller.renderCurrent().catch((err) => alert(String(err)));
  });

  el<HTMLButtonElement>("render-grid").addEventListener("click", () => {
    const attrX = el<HTMLSelectElement>("grid-x").value as AttributeName;
    const attrY = el<HTMLSelectElement>("grid-y").value as AttributeName;
    const steps = Number(el<HTMLInputElement>("grid-steps").value);
    void controller.renderGrid(attrX, attrY, steps).catch((err) => alert(String(err)));
  });

  const gridX = el<HTMLSelectElement>("grid-x");
  const gridY = el<HTMLSelectElement>("grid-y");
  for (const [attribute] of store.snapshot().sliders) {
    gridX.append(new Option(attribute, attribute));
    gridY.append(new Option(attribute, attribute, undefined, attribute === "metallic"));
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    void startApp();
  });
}
