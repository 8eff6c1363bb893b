// Canvas and DOM rendering. Everything displayed derives from the latest
// SessionView plus the served map/patch images; no state is invented here.

import type { LegendEntry, QueryRef, SessionView } from "./types.js";
import type { UiState } from "./state.js";
import { badStateTally, statusLine } from "./state.js";

export interface MarkerGeometry {
  cx: number;
  cy: number;
  radius: number;
}

/** Circle marking the queried pixel, in canvas coordinates. */
export function queryMarker(query: QueryRef, scale: number): MarkerGeometry {
  return {
    cx: (query.x + 0.5) * scale,
    cy: (query.y + 0.5) * scale,
    radius: Math.max(6, 2.5 * scale),
  };
}

export function drawBaseImage(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource | null,
  width: number,
  height: number,
): void {
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, width, height);
  if (image !== null) {
    ctx.drawImage(image, 0, 0, width, height);
  }
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  overlayImage: CanvasImageSource,
  width: number,
  height: number,
  alpha: number,
): void {
  ctx.save();
  ctx.globalAlpha = alpha;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(overlayImage, 0, 0, width, height);
  ctx.restore();
}

export function drawQueryMarker(
  ctx: CanvasRenderingContext2D,
  query: QueryRef,
  scale: number,
): void {
  const marker = queryMarker(query, scale);
  ctx.strokeStyle = "#ffffff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(marker.cx, marker.cy, marker.radius, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.strokeStyle = "#000000";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.arc(marker.cx, marker.cy, marker.radius + 1.5, 0, 2 * Math.PI);
  ctx.stroke();
}

export function renderLegend(container: HTMLElement, legend: LegendEntry[]): void {
  container.replaceChildren();
  for (const entry of legend) {
    const item = document.createElement("div");
    item.className = "legend-item";
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.backgroundColor = entry.color;
    const name = document.createElement("span");
    name.textContent = `${entry.index}: ${entry.name}`;
    item.append(swatch, name);
    container.append(item);
  }
}

export interface ClassButtons {
  render(view: SessionView, enabled: boolean): void;
}

export function renderClassButtons(
  container: HTMLElement,
  view: SessionView,
  enabled: boolean,
  onChoice: (choice: number | "unknown") => void,
): void {
  container.replaceChildren();
  for (const entry of view.legend) {
    const button = document.createElement("button");
    button.textContent = entry.name;
    button.style.borderLeft = `6px solid ${entry.color}`;
    button.disabled = !enabled;
    button.addEventListener("click", () => onChoice(entry.index));
    container.append(button);
  }
  const unknown = document.createElement("button");
  unknown.textContent = "Unknown";
  unknown.className = "unknown";
  unknown.disabled = !enabled || view.phase === "seeding";
  unknown.addEventListener("click", () => onChoice("unknown"));
  container.append(unknown);
}

export function renderStatus(
  statusEl: HTMLElement,
  tallyEl: HTMLElement,
  noticeEl: HTMLElement,
  state: UiState,
): void {
  statusEl.textContent = statusLine(state);
  const view = state.view;
  if (view !== null) {
    tallyEl.textContent =
      `labeled ${view.counts.labeled} | outcomes ${view.counts.confidence} | ` +
      `effort ${view.counts.effort} | bad states ${badStateTally(view)}`;
  } else {
    tallyEl.textContent = "";
  }
  noticeEl.textContent = state.notice ?? "";
  noticeEl.hidden = state.notice === null;
}

export function renderProgress(progressEl: HTMLElement, state: UiState): void {
  const busy = state.view?.phase === "training" || state.pending;
  progressEl.hidden = !busy;
  progressEl.textContent = state.pending ? "sending..." : "training...";
}
