import { ServiceClient, StylesResponse, decodeMel, wavDataUrl } from "./api.js";
import { submitSynthesis } from "./controller.js";
import { drawHeatmap } from "./heatmap.js";
import {
  Axis,
  CUSTOM,
  ExplorerState,
  PadRow,
  applyPreset,
  initialState,
  setSlider,
  setText,
} from "./state.js";

// ?service=http://host:port points the page at a service on another origin
const serviceBase = new URLSearchParams(window.location.search).get("service") ?? "";
const client = new ServiceClient(serviceBase);
let state: ExplorerState = initialState();

interface Controls {
  sliders: Record<Axis, HTMLInputElement>;
  readouts: Record<Axis, HTMLElement>;
  presetLabel: HTMLElement;
  presetButtons: HTMLButtonElement[];
  textInput: HTMLInputElement;
  goButton: HTMLButtonElement;
  status: HTMLElement;
  audio: HTMLAudioElement;
  canvas: HTMLCanvasElement;
  melCaption: HTMLElement;
}

let controls: Controls | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function refresh(): void {
  if (!controls) return;
  const axes: Axis[] = ["p", "a", "d"];
  for (const axis of axes) {
    controls.sliders[axis].value = String(state[axis]);
    controls.readouts[axis].textContent = state[axis].toFixed(2);
  }
  controls.presetLabel.textContent = state.preset;
  controls.presetLabel.classList.toggle("custom", state.preset === CUSTOM);
  for (const button of controls.presetButtons) {
    button.classList.toggle("active", button.dataset.label === state.preset);
  }
  controls.goButton.disabled = state.inFlight;
  controls.goButton.textContent = state.inFlight ? "synthesizing..." : "synthesize";
}

function showStatus(message: string | null): void {
  if (!controls) return;
  controls.status.textContent = message ?? "";
  controls.status.hidden = message === null;
}

async function onSynthesize(): Promise<void> {
  const current = state;
  if (current.inFlight) return;
  const pending = submitSynthesis(current, client);
  state = { ...current, inFlight: true };
  refresh(); // button disabled while the request runs
  const outcome = await pending;
  // keep any edits made while the request ran; only the flag comes back
  state = { ...state, inFlight: outcome.state.inFlight };
  refresh();
  showStatus(outcome.error);
  if (outcome.response && controls) {
    const mel = decodeMel(outcome.response.mel);
    drawHeatmap(controls.canvas, mel);
    controls.melCaption.textContent =
      `${mel.frames} frames x ${mel.bins} mel bins, ` +
      `${outcome.response.duration_s.toFixed(2)} s` +
      (outcome.response.truncated ? " (truncated)" : "");
    controls.audio.src = wavDataUrl(outcome.response.wav);
    controls.audio.hidden = false;
  }
}

function buildSliderRow(axis: Axis, label: string): {
  row: HTMLElement;
  input: HTMLInputElement;
  readout: HTMLElement;
} {
  const row = el("div", "slider-row");
  const name = el("label", "axis-name", label);
  const input = el("input");
  input.type = "range";
  input.min = "-1";
  input.max = "1";
  input.step = "0.01";
  input.value = "0";
  input.id = `slider-${axis}`;
  name.htmlFor = input.id;
  const readout = el("span", "axis-value", "0.00");
  input.addEventListener("input", () => {
    state = setSlider(state, axis, parseFloat(input.value));
    refresh();
  });
  row.append(name, input, readout);
  return { row, input, readout };
}

function buildApp(styles: StylesResponse): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.textContent = "";

  const heading = el("h1", undefined, "PAD explorer");
  const tagline = el(
    "p",
    "tagline",
    "Steer pleasure, arousal and dominance; listen to what the synthesizer makes of it.",
  );

  const presetBar = el("div", "preset-bar");
  const presetButtons: HTMLButtonElement[] = [];
  for (const label of styles.labels) {
    const row = styles.table.find((r: PadRow) => r.label === label);
    if (!row) continue;
    const button = el("button", "preset", label);
    button.dataset.label = label;
    button.addEventListener("click", () => {
      state = applyPreset(state, row);
      refresh();
    });
    presetBar.appendChild(button);
    presetButtons.push(button);
  }
  const presetLabel = el("span", "preset-indicator", state.preset);

  const sliderBox = el("div", "sliders");
  const p = buildSliderRow("p", "pleasure");
  const a = buildSliderRow("a", "arousal");
  const d = buildSliderRow("d", "dominance");
  sliderBox.append(p.row, a.row, d.row);

  const textRow = el("div", "text-row");
  const textInput = el("input");
  textInput.type = "text";
  textInput.id = "text-input";
  textInput.placeholder = "text to synthesize";
  textInput.addEventListener("input", () => {
    state = setText(state, textInput.value);
  });
  const goButton = el("button", "go", "synthesize");
  goButton.id = "synthesize";
  goButton.addEventListener("click", () => {
    void onSynthesize();
  });
  textRow.append(textInput, goButton);

  const status = el("div", "status");
  status.hidden = true;

  const audio = el("audio");
  audio.controls = true;
  audio.hidden = true;

  const melCaption = el("div", "mel-caption");
  const canvas = el("canvas", "mel");
  const melBox = el("div", "mel-box");
  melBox.append(canvas, melCaption);

  root.append(
    heading,
    tagline,
    presetBar,
    presetLabel,
    sliderBox,
    textRow,
    status,
    audio,
    melBox,
  );

  controls = {
    sliders: { p: p.input, a: a.input, d: d.input },
    readouts: { p: p.readout, a: a.readout, d: d.readout },
    presetLabel,
    presetButtons,
    textInput,
    goButton,
    status,
    audio,
    canvas,
    melCaption,
  };
  refresh();

  client
    .model()
    .then((info) => {
      const footer = el(
        "footer",
        undefined,
        `model: ${info.preset}, ${info.n_parameters} parameters, ${info.sample_rate} Hz`,
      );
      root.appendChild(footer);
    })
    .catch(() => {
      /* footer is decoration; the app works without it */
    });
}

function showUnreachable(root: HTMLElement, message: string): void {
  root.textContent = "";
  const banner = el("div", "banner", `could not load style presets: ${message} `);
  const retry = el("button", undefined, "retry");
  retry.addEventListener("click", () => {
    void boot();
  });
  banner.appendChild(retry);
  root.appendChild(banner);
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  root.textContent = "loading styles...";
  try {
    const styles = await client.styles();
    buildApp(styles);
  } catch (e) {
    showUnreachable(root, e instanceof Error ? e.message : String(e));
  }
}

void boot();
