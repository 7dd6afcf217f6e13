/**
 * Submission flow, kept apart from the DOM so the guarantees are testable:
 * validation happens before any request leaves, and only one synthesis is
 * ever in flight at a time.
 */

import { ApiError, ServiceClient } from "./api.js";
import { ExplorerState, SynthesisResponse, requestBody, requestProblem } from "./state.js";

export interface SubmitOutcome {
  state: ExplorerState;
  response: SynthesisResponse | null;
  error: string | null;
}

export async function submitSynthesis(
  state: ExplorerState,
  client: ServiceClient,
): Promise<SubmitOutcome> {
  if (state.inFlight) {
    return { state, response: null, error: null }; // previous request still running
  }
  const problem = requestProblem(state);
  if (problem !== null) {
    return { state, response: null, error: problem };
  }
  const pending = { ...state, inFlight: true };
  try {
    const response = await client.synthesize(requestBody(pending));
    return { state: { ...pending, inFlight: false }, response, error: null };
  } catch (e) {
    return {
      state: { ...pending, inFlight: false },
      response: null,
      error: describeFailure(e),
    };
  }
}

export function describeFailure(e: unknown): string {
  if (e instanceof ApiError) {
    if (e.status === 0) {
      return "service unreachable";
    }
    if (e.status >= 500) {
      // the server deliberately hides internals; surface only the reference id
      return e.requestId ? `synthesis failed (reference ${e.requestId})` : "synthesis failed";
    }
    return e.detail;
  }
  return "unexpected failure";
}
