// Document wiring: left the image with the marked query, middle the class
// buttons and zoom patch, right the live maps and the queried pixel's
// spectrum.

import { SessionApi } from "./api.js";
import { SessionController } from "./app.js";
import {
  drawBaseImage,
  drawOverlay,
  drawQueryMarker,
  renderClassButtons,
  renderLegend,
  renderProgress,
  renderStatus,
} from "./render.js";
import { drawSpectrum } from "./spectrum.js";
import { buttonsEnabled, seedsRemaining, type UiState } from "./state.js";
import type { Overlay, SessionView } from "./types.js";

const SCALE = 5;
const ZOOM_RADIUS = 8;
const ZOOM_SCALE = 14;

const api = new SessionApi("");

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (found === null) {
    throw new Error(`missing element #${id}`);
  }
  return found as T;
}

const imageCanvas = el<HTMLCanvasElement>("image-canvas");
const zoomCanvas = el<HTMLCanvasElement>("zoom-canvas");
const spectrumCanvas = el<HTMLCanvasElement>("spectrum-canvas");
const mapClassCanvas = el<HTMLCanvasElement>("map-class");
const mapConfCanvas = el<HTMLCanvasElement>("map-conf");
const buttonsBox = el<HTMLDivElement>("class-buttons");
const legendBox = el<HTMLDivElement>("legend");
const statusEl = el<HTMLSpanElement>("status");
const tallyEl = el<HTMLSpanElement>("tally");
const noticeEl = el<HTMLDivElement>("notice");
const progressEl = el<HTMLSpanElement>("progress");
const overlaySelect = el<HTMLSelectElement>("overlay-select");
const createForm = el<HTMLFormElement>("create-form");
const curvesLink = el<HTMLAnchorElement>("curves-link");

let baseImage: HTMLImageElement | null = null;
let overlayImages: Partial<Record<Exclude<Overlay, "none">, HTMLImageElement>> = {};
let overlayEpsilon = -1;
let lastQueryKey = "";

const controller = new SessionController(api, { onChange: render });

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

async function refreshBaseImage(view: SessionView): Promise<void> {
  if (baseImage !== null) {
    return;
  }
  const { width, height } = view.raster;
  const r = Math.ceil(Math.max(width, height) / 2);
  const patch = await api.getPatch(view.id, Math.floor(width / 2), Math.floor(height / 2), r);
  baseImage = await loadImage(`data:image/png;base64,${patch.png_base64}`);
  render(controller.state);
}

async function refreshOverlays(view: SessionView): Promise<void> {
  if (view.epsilon === overlayEpsilon || view.epsilon < 1) {
    return;
  }
  try {
    const [cls, conf] = await Promise.all([
      loadImage(api.mapUrl(view.id, "classification", view.epsilon)),
      loadImage(api.mapUrl(view.id, "confidence", view.epsilon)),
    ]);
    overlayImages = { classification: cls, confidence: conf };
    overlayEpsilon = view.epsilon;
    for (const [canvas, img] of [
      [mapClassCanvas, cls],
      [mapConfCanvas, conf],
    ] as const) {
      canvas.width = view.raster.width * 2;
      canvas.height = view.raster.height * 2;
      const mctx = canvas.getContext("2d")!;
      mctx.imageSmoothingEnabled = false;
      mctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    }
    render(controller.state);
  } catch {
    // maps appear after the first training pass; retry on the next view
  }
}

async function refreshQueryPanels(view: SessionView): Promise<void> {
  const query = view.query;
  if (query === null) {
    return;
  }
  const key = `${query.x},${query.y}`;
  if (key === lastQueryKey) {
    return;
  }
  lastQueryKey = key;
  const patch = await api.getPatch(view.id, query.x, query.y, ZOOM_RADIUS);
  const img = await loadImage(`data:image/png;base64,${patch.png_base64}`);
  const zctx = zoomCanvas.getContext("2d")!;
  zoomCanvas.width = (2 * ZOOM_RADIUS + 1) * ZOOM_SCALE;
  zoomCanvas.height = (2 * ZOOM_RADIUS + 1) * ZOOM_SCALE;
  zctx.imageSmoothingEnabled = false;
  zctx.drawImage(img, 0, 0, zoomCanvas.width, zoomCanvas.height);
  zctx.strokeStyle = "#ffffff";
  zctx.lineWidth = 2;
  zctx.beginPath();
  const center = (query.x - patch.extent.x0 + 0.5) * ZOOM_SCALE;
  const middle = (query.y - patch.extent.y0 + 0.5) * ZOOM_SCALE;
  zctx.arc(center, middle, ZOOM_SCALE, 0, 2 * Math.PI);
  zctx.stroke();
  drawSpectrum(
    spectrumCanvas.getContext("2d")!,
    patch.bands,
    spectrumCanvas.width,
    spectrumCanvas.height,
  );
}

function render(state: UiState): void {
  renderStatus(statusEl, tallyEl, noticeEl, state);
  renderProgress(progressEl, state);
  const view = state.view;
  if (view === null) {
    return;
  }

  curvesLink.href = api.curvesUrl(view.id);
  curvesLink.hidden = false;

  imageCanvas.width = view.raster.width * SCALE;
  imageCanvas.height = view.raster.height * SCALE;
  const ctx = imageCanvas.getContext("2d")!;
  drawBaseImage(ctx, baseImage, imageCanvas.width, imageCanvas.height);
  const overlay = state.overlay;
  if (overlay !== "none") {
    const img = overlayImages[overlay];
    if (img !== undefined) {
      drawOverlay(ctx, img, imageCanvas.width, imageCanvas.height, 0.55);
    }
  }
  if (view.query !== null) {
    drawQueryMarker(ctx, view.query, SCALE);
  }

  renderLegend(legendBox, view.legend);
  renderClassButtons(buttonsBox, view, buttonsEnabled(state), (choice) => {
    void controller.submitLabel(choice, pendingSeedClick ?? undefined);
    pendingSeedClick = null;
  });

  if (view.phase === "seeding") {
    statusEl.textContent += pendingSeedClick
      ? ` — click a class for (${pendingSeedClick.x}, ${pendingSeedClick.y})`
      : ` — ${seedsRemaining(view)} to go: click the image, then a class`;
  }

  void refreshBaseImage(view);
  void refreshOverlays(view);
  void refreshQueryPanels(view);
}

let pendingSeedClick: { x: number; y: number } | null = null;

imageCanvas.addEventListener("click", (event) => {
  const view = controller.state.view;
  if (view === null || view.phase !== "seeding") {
    return;
  }
  const rect = imageCanvas.getBoundingClientRect();
  const x = Math.floor((event.clientX - rect.left) / SCALE);
  const y = Math.floor((event.clientY - rect.top) / SCALE);
  pendingSeedClick = { x, y };
  render(controller.state);
});

overlaySelect.addEventListener("change", () => {
  controller.selectOverlay(overlaySelect.value as Overlay);
});

createForm.addEventListener("submit", (event) => {
  event.preventDefault();
  const data = new FormData(createForm);
  const raster = String(data.get("raster") || "demo");
  void controller.create(raster, {
    heuristic: String(data.get("heuristic") || "mclu"),
    gated: data.get("gated") === "on",
  });
});

// expose for console poking during development
(window as unknown as { querygate: SessionController }).querygate = controller;
