/**
 * Explorer state and the pure transitions on it.
 *
 * Everything here is plain data in, plain data out so the behavior is
 * testable without a DOM: clamping, preset application, the custom-preset
 * switch on manual slider movement, and the exact request payload.
 */

export type Axis = "p" | "a" | "d";

export interface PadRow {
  label: string;
  p: number;
  a: number;
  d: number;
}

export interface MelPayload {
  data: string; // base64 little-endian float64, row-major
  shape: [number, number]; // [frames, mel bins]
  dtype: string;
}

export interface SynthesisResponse {
  mel: MelPayload;
  wav: string; // base64 of a complete wav file
  duration_s: number;
  truncated: boolean;
}

export interface ExplorerState {
  text: string;
  p: number;
  a: number;
  d: number;
  /** A served emotion label, or "custom" once any slider moves by hand. */
  preset: string;
  inFlight: boolean;
}

export const CUSTOM = "custom";

export function initialState(): ExplorerState {
  return { text: "", p: 0, a: 0, d: 0, preset: "neutral", inFlight: false };
}

export function clamp(v: number): number {
  if (Number.isNaN(v)) return 0;
  return Math.min(1, Math.max(-1, v));
}

/** Manual slider movement: clamp the value and drop to the custom preset. */
export function setSlider(state: ExplorerState, axis: Axis, value: number): ExplorerState {
  return { ...state, [axis]: clamp(value), preset: CUSTOM };
}

/** Preset button: copy the served row verbatim into the sliders. */
export function applyPreset(state: ExplorerState, row: PadRow): ExplorerState {
  return { ...state, p: row.p, a: row.a, d: row.d, preset: row.label };
}

export function setText(state: ExplorerState, text: string): ExplorerState {
  return { ...state, text };
}

/**
 * Validation that must pass before any request leaves the page.
 * Returns a human-readable problem or null.
 */
export function requestProblem(state: ExplorerState): string | null {
  if (state.text.trim() === "") {
    return "enter some text to synthesize";
  }
  for (const axis of ["p", "a", "d"] as Axis[]) {
    const v = state[axis];
    if (!Number.isFinite(v) || v < -1 || v > 1) {
      return `${axis} = ${v} is outside [-1, 1]`;
    }
  }
  return null;
}

/** The exact body POSTed to /synthesize: slider values pass through untouched. */
export function requestBody(state: ExplorerState): { text: string; pad: { p: number; a: number; d: number } } {
  return { text: state.text, pad: { p: state.p, a: state.a, d: state.d } };
}
