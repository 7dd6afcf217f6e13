/**
 * Thin typed client for the synthesis service plus payload decoders.
 *
 * The fetch function is injectable so tests can capture outgoing requests
 * and simulate every error family the service distinguishes.
 */

import { MelPayload, PadRow, SynthesisResponse } from "./state.js";

export interface StylesResponse {
  labels: string[];
  table: PadRow[];
}

export interface ModelInfo {
  model: string;
  stage: string;
  preset: string | null;
  injection_type: string;
  injection_sites: string[];
  n_parameters: number;
  vocab_size: number;
  n_mels: number;
  linear_bins: number;
  reduction_factor: number;
  sample_rate: number;
}

/** Error with enough context to render the right message for 4xx vs 5xx. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    public requestId: string | null = null,
  ) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, init);
    } catch (e) {
      throw new ApiError(0, "service unreachable");
    }
    if (!resp.ok) {
      let detail = `request failed (${resp.status})`;
      let requestId: string | null = null;
      try {
        const body = await resp.json();
        if (typeof body.detail === "string") detail = body.detail;
        if (typeof body.error === "string") detail = body.error;
        if (typeof body.id === "string") requestId = body.id;
      } catch {
        // non-json error body: keep the generic message
      }
      throw new ApiError(resp.status, detail, requestId);
    }
    return (await resp.json()) as T;
  }

  styles(): Promise<StylesResponse> {
    return this.request<StylesResponse>("/styles");
  }

  model(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model");
  }

  synthesize(body: object): Promise<SynthesisResponse> {
    return this.request<SynthesisResponse>("/synthesize", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}

function base64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export interface DecodedMel {
  frames: number;
  bins: number;
  values: Float64Array; // row-major [frames][bins]
}

/** Base64 little-endian float64 grid -> typed array plus its dimensions. */
export function decodeMel(payload: MelPayload): DecodedMel {
  const [frames, bins] = payload.shape;
  const bytes = base64ToBytes(payload.data);
  if (bytes.length !== frames * bins * 8) {
    throw new Error(`mel payload is ${bytes.length} bytes, expected ${frames * bins * 8}`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const values = new Float64Array(frames * bins);
  for (let i = 0; i < values.length; i++) {
    values[i] = view.getFloat64(i * 8, true);
  }
  return { frames, bins, values };
}

/** The wav payload is a complete RIFF file; a data url lets <audio> play it. */
export function wavDataUrl(wavB64: string): string {
  return "data:audio/wav;base64," + wavB64;
}
