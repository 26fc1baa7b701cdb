// Multi-attribute grid: steps x steps render requests with uniform
// strength grids over [-1, 1] on each axis, one backend pass per cell.

import type { AttributeName, RenderRequestBody } from "./types.js";
import type { UiEditState } from "./state.js";
import { buildRenderRequest } from "./payload.js";

export function gridDeltas(steps: number): number[] {
  if (steps < 2) throw new Error(`grid needs at least 2 steps, got ${steps}`);
  const deltas: number[] = [];
  for (let i = 0; i < steps; i += 1) {
    deltas.push(-1 + (2 * i) / (steps - 1));
  }
  return deltas;
}

export interface GridCell {
  x: number;
  y: number;
  deltaX: number;
  deltaY: number;
  request: RenderRequestBody;
}

export function buildGridRequests(
  state: UiEditState,
  attrX: AttributeName,
  attrY: AttributeName,
  steps: number,
): GridCell[] {
  if (attrX === attrY) throw new Error("grid needs two distinct attributes");
  const deltas = gridDeltas(steps);
  const cells: GridCell[] = [];
  deltas.forEach((deltaY, y) => {
    deltas.forEach((deltaX, x) => {
      cells.push({
        x,
        y,
        deltaX,
        deltaY,
        request: buildRenderRequest(state, { [attrX]: deltaX, [attrY]: deltaY }),
      });
    });
  });
  return cells;
}
