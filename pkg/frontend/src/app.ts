// Session controller: owns the UiState, serializes requests, drives polling.
// Kept DOM-free so the control flow is unit-testable; main.ts binds it to
// the document.

import { ApiError, SessionApi } from "./api.js";
import {
  applyView,
  beginRequest,
  failRequest,
  initialState,
  setOverlay,
  shouldPoll,
  buttonsEnabled,
  type UiState,
} from "./state.js";
import type { LabelChoice, Overlay, SessionView } from "./types.js";

export interface ControllerOptions {
  pollMs?: number;
  onChange?: (state: UiState) => void;
  schedule?: (fn: () => void, ms: number) => unknown;
}

export class SessionController {
  state: UiState = initialState();
  private readonly pollMs: number;
  private readonly onChange: (state: UiState) => void;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private pollQueued = false;

  constructor(
    private readonly api: SessionApi,
    options: ControllerOptions = {},
  ) {
    this.pollMs = options.pollMs ?? 1000;
    this.onChange = options.onChange ?? (() => {});
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  get sessionId(): string | null {
    return this.state.view?.id ?? null;
  }

  private update(state: UiState): void {
    this.state = state;
    this.onChange(state);
    this.maybePoll();
  }

  private maybePoll(): void {
    if (!shouldPoll(this.state) || this.pollQueued) {
      return;
    }
    this.pollQueued = true;
    this.schedule(() => {
      this.pollQueued = false;
      void this.refresh();
    }, this.pollMs);
  }

  async create(raster: string, config: Record<string, unknown>): Promise<void> {
    this.update(beginRequest(this.state));
    try {
      const view = await this.api.createSession(raster, config);
      this.update(applyView(this.state, view));
    } catch (err) {
      this.update(failRequest(this.state, describe(err)));
    }
  }

  async refresh(): Promise<void> {
    const id = this.sessionId;
    if (id === null) {
      return;
    }
    try {
      const view = await this.api.getView(id);
      this.update(applyView(this.state, view));
    } catch (err) {
      this.update(failRequest(this.state, describe(err)));
    }
  }

  /** Forward a label (or Unknown) for the current query / seeding click.
   * Ignored while a request is pending: one request in flight, ever. */
  async submitLabel(choice: LabelChoice, pixel?: { x: number; y: number }): Promise<void> {
    if (!buttonsEnabled(this.state)) {
      return;
    }
    const view = this.state.view as SessionView;
    let target = pixel ?? null;
    if (view.phase === "awaiting_label") {
      target = view.query;
    }
    if (target === null) {
      return;
    }
    this.update(beginRequest(this.state));
    try {
      const next = await this.api.postAnswer(view.id, target.x, target.y, choice);
      this.update(applyView(this.state, next));
    } catch (err) {
      if (err instanceof ApiError && err.code === "stale_query") {
        // server moved on: resynchronize, tell the user quietly
        this.update(failRequest(this.state, "query changed, view refreshed"));
        await this.refresh();
        return;
      }
      this.update(failRequest(this.state, describe(err)));
    }
  }

  selectOverlay(overlay: Overlay): void {
    this.update(setOverlay(this.state, overlay));
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}
