/**
 * Mel spectrogram heatmap: one canvas pixel per (frame, mel bin) cell.
 *
 * Time runs left to right, low frequencies sit at the bottom. The canvas
 * keeps the mel grid's exact dimensions; any enlargement happens in CSS so
 * the drawing surface always matches the response shape.
 */

import { DecodedMel } from "./api.js";

// compact blue -> magenta -> yellow ramp, dark at silence
const STOPS: [number, number, number][] = [
  [13, 8, 65],
  [84, 39, 143],
  [158, 58, 138],
  [216, 87, 107],
  [246, 146, 69],
  [252, 222, 98],
];

function rampColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t)) * (STOPS.length - 1);
  const lo = Math.floor(x);
  const hi = Math.min(lo + 1, STOPS.length - 1);
  const f = x - lo;
  return [
    Math.round(STOPS[lo][0] + (STOPS[hi][0] - STOPS[lo][0]) * f),
    Math.round(STOPS[lo][1] + (STOPS[hi][1] - STOPS[lo][1]) * f),
    Math.round(STOPS[lo][2] + (STOPS[hi][2] - STOPS[lo][2]) * f),
  ];
}

/** Pure pixel computation: rgba buffer sized frames x bins. */
export function melPixels(mel: DecodedMel): {
  width: number;
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;
} {
  const { frames, bins, values } = mel;
  let min = Infinity;
  let max = -Infinity;
  for (const v of values) {
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const span = max - min || 1;
  const rgba = new Uint8ClampedArray(frames * bins * 4);
  for (let t = 0; t < frames; t++) {
    for (let m = 0; m < bins; m++) {
      // row 0 of the image is the top, so bin 0 maps to the bottom row
      const y = bins - 1 - m;
      const [r, g, b] = rampColor((values[t * bins + m] - min) / span);
      const o = (y * frames + t) * 4;
      rgba[o] = r;
      rgba[o + 1] = g;
      rgba[o + 2] = b;
      rgba[o + 3] = 255;
    }
  }
  return { width: frames, height: bins, rgba };
}

/** Size the canvas to the mel grid and paint it. */
export function drawHeatmap(canvas: HTMLCanvasElement, mel: DecodedMel): void {
  const { width, height, rgba } = melPixels(mel);
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return; // headless environments have no 2d context; sizing still holds
  ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
}
