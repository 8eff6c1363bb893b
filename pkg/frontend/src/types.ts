// Wire types mirroring the session service's JSON responses.

export type Phase = "seeding" | "training" | "awaiting_label" | "done";

export interface LegendEntry {
  index: number;
  name: string;
  color: string;
}

export interface QueryRef {
  x: number;
  y: number;
  r: number;
}

export interface SessionCounts {
  labeled: number;
  confidence: number;
  pool: number;
  effort: number;
}

export interface SessionView {
  id: string;
  phase: Phase;
  epsilon: number;
  omega: number;
  counts: SessionCounts;
  query: QueryRef | null;
  legend: LegendEntry[];
  raster: { width: number; height: number; bands: number };
  seeds: { required: number; accepted: number; per_class: number };
  warnings: string[];
  error?: string;
}

export interface PatchResponse {
  x: number;
  y: number;
  r: number;
  extent: { x0: number; y0: number; x1: number; y1: number };
  png_base64: string;
  bands: number[];
}

export interface ServiceError {
  error: string;
  detail: string;
}

export type Overlay = "none" | "classification" | "confidence";

export type LabelChoice = number | "unknown";
