import { describe, expect, it, vi } from "vitest";

import { SessionApi } from "../src/api.js";
import { SessionController } from "../src/app.js";
import type { SessionView } from "../src/types.js";

function view(overrides: Partial<SessionView> = {}): SessionView {
  return {
    id: "s1",
    phase: "awaiting_label",
    epsilon: 1,
    omega: 2,
    counts: { labeled: 4, confidence: 4, pool: 100, effort: 4 },
    query: { x: 2, y: 3, r: 12 },
    legend: [
      { index: 1, name: "a", color: "#111111" },
      { index: 2, name: "b", color: "#222222" },
    ],
    raster: { width: 10, height: 10, bands: 2 },
    seeds: { required: 4, accepted: 4, per_class: 2 },
    warnings: [],
    ...overrides,
  };
}

function apiWith(fetchFn: typeof fetch): SessionApi {
  return new SessionApi("", fetchFn);
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), { status });
}

describe("SessionController", () => {
  it("answers the current query pixel, not a caller-supplied one", async () => {
    const calls: string[] = [];
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      calls.push(String(url));
      if (String(url).endsWith("/answer")) {
        expect(JSON.parse(init!.body as string)).toEqual({ x: 2, y: 3, label: 1 });
        return jsonResponse(view({ phase: "training", query: null }));
      }
      return jsonResponse(view());
    });
    const controller = new SessionController(apiWith(fetchFn as typeof fetch), {
      schedule: () => 0, // suppress polling timers in tests
    });
    controller.state = { view: view(), overlay: "none", pending: false, notice: null };
    await controller.submitLabel(1, { x: 9, y: 9 });
    expect(calls.some((c) => c.endsWith("/answer"))).toBe(true);
  });

  it("double submission issues a single request", async () => {
    let resolveAnswer: (r: Response) => void = () => {};
    const answered = new Promise<Response>((res) => (resolveAnswer = res));
    const fetchFn = vi.fn(async (url: RequestInfo | URL) => {
      if (String(url).endsWith("/answer")) {
        return answered;
      }
      return jsonResponse(view());
    });
    const controller = new SessionController(apiWith(fetchFn as typeof fetch), {
      schedule: () => 0,
    });
    controller.state = { view: view(), overlay: "none", pending: false, notice: null };
    const first = controller.submitLabel(2);
    const second = controller.submitLabel(2); // pending flag swallows this one
    resolveAnswer(jsonResponse(view({ phase: "training", query: null })));
    await Promise.all([first, second]);
    const answerCalls = fetchFn.mock.calls.filter(([u]) => String(u).endsWith("/answer"));
    expect(answerCalls.length).toBe(1);
  });

  it("stale query response resynchronizes and notifies non-modally", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      if (String(url).endsWith("/answer") && init?.method === "POST") {
        return jsonResponse({ error: "stale_query", detail: "old pixel" }, 409);
      }
      return jsonResponse(view({ query: { x: 5, y: 5, r: 12 } }));
    });
    const controller = new SessionController(apiWith(fetchFn as typeof fetch), {
      schedule: () => 0,
    });
    controller.state = { view: view(), overlay: "none", pending: false, notice: null };
    await controller.submitLabel("unknown");
    expect(controller.state.notice).toContain("refreshed");
    expect(controller.state.view?.query).toEqual({ x: 5, y: 5, r: 12 });
    expect(controller.state.pending).toBe(false);
  });

  it("ignores clicks while buttons are disabled", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(view()));
    const controller = new SessionController(apiWith(fetchFn as typeof fetch), {
      schedule: () => 0,
    });
    controller.state = {
      view: view({ phase: "training", query: null }),
      overlay: "none",
      pending: false,
      notice: null,
    };
    await controller.submitLabel(1);
    expect(fetchFn).not.toHaveBeenCalled();
  });

  it("polls while training", async () => {
    const scheduled: Array<() => void> = [];
    const fetchFn = vi.fn(async () => jsonResponse(view({ phase: "training", query: null })));
    const controller = new SessionController(apiWith(fetchFn as typeof fetch), {
      schedule: (fn) => {
        scheduled.push(fn);
        return 0;
      },
    });
    await controller.create("demo", {});
    expect(scheduled.length).toBe(1);
    scheduled[0]!();
    await new Promise((res) => setTimeout(res, 0));
    expect(fetchFn.mock.calls.length).toBeGreaterThanOrEqual(2);
  });
});
