// UI state machine. The server is the only source of truth: every count we
// display is a projection of the latest SessionView, never a local tally.

import type { Overlay, SessionView } from "./types.js";

export interface UiState {
  view: SessionView | null;
  overlay: Overlay;
  pending: boolean; // exactly one request in flight per session
  notice: string | null; // non-modal message (stale query, errors)
}

export function initialState(): UiState {
  return { view: null, overlay: "none", pending: false, notice: null };
}

export function applyView(state: UiState, view: SessionView): UiState {
  return { ...state, view, pending: false };
}

export function beginRequest(state: UiState): UiState {
  return { ...state, pending: true, notice: null };
}

export function failRequest(state: UiState, notice: string): UiState {
  return { ...state, pending: false, notice };
}

export function setOverlay(state: UiState, overlay: Overlay): UiState {
  return { ...state, overlay };
}

/** Label buttons are live only while the session wants input and no request
 * is outstanding. */
export function buttonsEnabled(state: UiState): boolean {
  if (state.pending || state.view === null) {
    return false;
  }
  return state.view.phase === "awaiting_label" || state.view.phase === "seeding";
}

/** Bad states answered so far: queries that cost effort without a label. */
export function badStateTally(view: SessionView): number {
  return view.counts.effort - view.counts.labeled;
}

/** Seeding clicks still owed, zero once the loop is running. */
export function seedsRemaining(view: SessionView): number {
  return Math.max(0, view.seeds.required - view.seeds.accepted);
}

/** Poll while the engine is busy; stop when input is wanted or all done. */
export function shouldPoll(state: UiState): boolean {
  if (state.view === null) {
    return false;
  }
  return state.view.phase === "training";
}

export function statusLine(state: UiState): string {
  const view = state.view;
  if (view === null) {
    return "no session";
  }
  switch (view.phase) {
    case "seeding":
      return `seeding: ${view.seeds.accepted}/${view.seeds.required} clicks`;
    case "training":
      return `training (iteration ${view.epsilon})`;
    case "awaiting_label":
      return "awaiting label";
    case "done":
      return view.error ? `stopped: ${view.error}` : "done";
  }
}
