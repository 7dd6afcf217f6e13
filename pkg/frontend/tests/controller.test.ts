import { describe, expect, test, vi } from "vitest";
import { ApiError, ServiceClient } from "../src/api.js";
import { describeFailure, submitSynthesis } from "../src/controller.js";
import { initialState, setSlider, setText } from "../src/state.js";

function clientWith(fetchFn: (url: string, init?: RequestInit) => Promise<Response>) {
  return new ServiceClient("", vi.fn(fetchFn));
}

function okResponse(body: unknown): Response {
  return { ok: true, status: 200, json: async () => body } as unknown as Response;
}

describe("submitSynthesis", () => {
  test("refuses to send a pad component of 1.5", async () => {
    const fetchFn = vi.fn(async () => okResponse({}));
    const client = new ServiceClient("", fetchFn);
    const state = { ...setText(initialState(), "hello"), p: 1.5 };
    const outcome = await submitSynthesis(state, client);
    expect(fetchFn).not.toHaveBeenCalled();
    expect(outcome.error).toBe("p = 1.5 is outside [-1, 1]");
    expect(outcome.response).toBeNull();
    expect(outcome.state.inFlight).toBe(false);
  });

  test("refuses to send empty text", async () => {
    const fetchFn = vi.fn(async () => okResponse({}));
    const client = new ServiceClient("", fetchFn);
    const outcome = await submitSynthesis(initialState(), client);
    expect(fetchFn).not.toHaveBeenCalled();
    expect(outcome.error).toMatch(/text/);
  });

  test("is a no-op while a request is already in flight", async () => {
    const fetchFn = vi.fn(async () => okResponse({}));
    const client = new ServiceClient("", fetchFn);
    const state = { ...setText(initialState(), "hello"), inFlight: true };
    const outcome = await submitSynthesis(state, client);
    expect(fetchFn).not.toHaveBeenCalled();
    expect(outcome.state).toBe(state);
    expect(outcome.error).toBeNull();
  });

  test("sends the exact slider values and clears the flag on success", async () => {
    let seen: any = null;
    const client = clientWith(async (_url, init) => {
      seen = JSON.parse(String(init?.body));
      return okResponse({ mel: null, wav: "", duration_s: 0.5, truncated: false });
    });
    let state = setText(initialState(), "go");
    state = setSlider(state, "p", -0.63);
    state = setSlider(state, "a", 0.08);
    const outcome = await submitSynthesis(state, client);
    expect(seen.pad).toEqual({ p: -0.63, a: 0.08, d: 0 });
    expect(outcome.state.inFlight).toBe(false);
    expect(outcome.error).toBeNull();
    expect(outcome.response?.duration_s).toBe(0.5);
  });

  test("surfaces the server detail for a 4xx", async () => {
    const client = clientWith(async () =>
      ({ ok: false, status: 422, json: async () => ({ detail: "unknown emotion 'calm'" }) }) as unknown as Response,
    );
    const outcome = await submitSynthesis(setText(initialState(), "x"), client);
    expect(outcome.error).toBe("unknown emotion 'calm'");
    expect(outcome.state.inFlight).toBe(false);
  });

  test("hides 5xx internals behind the request id", async () => {
    const client = clientWith(async () =>
      ({ ok: false, status: 500, json: async () => ({ error: "internal error", id: "ab12" }) }) as unknown as Response,
    );
    const outcome = await submitSynthesis(setText(initialState(), "x"), client);
    expect(outcome.error).toBe("synthesis failed (reference ab12)");
  });

  test("reports an unreachable service plainly", async () => {
    const client = clientWith(async () => {
      throw new TypeError("connection refused");
    });
    const outcome = await submitSynthesis(setText(initialState(), "x"), client);
    expect(outcome.error).toBe("service unreachable");
  });
});

describe("describeFailure", () => {
  test("keeps 4xx detail, genericizes 5xx, shrugs at the unknown", () => {
    expect(describeFailure(new ApiError(400, "text must be a non-empty string"))).toBe(
      "text must be a non-empty string",
    );
    expect(describeFailure(new ApiError(503, "whatever", null))).toBe("synthesis failed");
    expect(describeFailure(new Error("boom"))).toBe("unexpected failure");
  });
});
