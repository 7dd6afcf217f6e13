"""Objective spectrogram metrics, DTW alignment, and report aggregation.

SDR is the scale-invariant cosine form: 10 log10(cos^2 / (1 - cos^2)),
clamped to +-100 dB because it diverges when the spectrograms are parallel
or orthogonal. SD is the per-frame RMS over frequency of the log-magnitude
ratio in dB, averaged over frames. Mel variants apply the filterbank to
both operands first. Free-running outputs are time-aligned to the target
by dynamic time warping before any metric.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import dsp

SDR_CLAMP_DB = 100.0
LOG_FLOOR = 1e-8
METRIC_KEYS = ("sdr_db", "mel_sdr_db", "sd_db", "mel_sd_db")


class MetricError(ValueError):
    pass


def _check_pair(name, s, s_hat):
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise MetricError(f"{name}: shape mismatch {s.shape} vs {s_hat.shape}")
    if s.ndim != 2:
        raise MetricError(f"{name}: expected 2-D spectrograms, got {s.ndim}-D")
    return s, s_hat


def sdr(s: np.ndarray, s_hat: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio between spectrograms, in dB."""
    s, s_hat = _check_pair("sdr", s, s_hat)
    if np.any(s < 0.0) or np.any(s_hat < 0.0):
        raise MetricError("sdr: spectrograms must be non-negative")
    na = float(np.linalg.norm(s))
    nb = float(np.linalg.norm(s_hat))
    if na == 0.0 or nb == 0.0:
        raise MetricError("sdr: all-zero spectrogram")
    cos = float(np.vdot(s, s_hat)) / (na * nb)
    cos2 = cos * cos
    if cos2 >= 1.0:
        return SDR_CLAMP_DB
    if cos2 <= 0.0:
        return -SDR_CLAMP_DB
    value = 10.0 * math.log10(cos2 / (1.0 - cos2))
    return float(min(max(value, -SDR_CLAMP_DB), SDR_CLAMP_DB))


def sd(s: np.ndarray, s_hat: np.ndarray) -> float:
    """Spectral distortion in dB: frame-wise RMS of the dB ratio, then mean."""
    s, s_hat = _check_pair("sd", s, s_hat)
    ratio_db = 20.0 * np.log10(np.maximum(s, LOG_FLOOR) / np.maximum(s_hat, LOG_FLOOR))
    per_frame = np.sqrt(np.mean(ratio_db ** 2, axis=1))
    return float(np.mean(per_frame))


def mel_variants(s_linear: np.ndarray, s_hat_linear: np.ndarray,
                 bank: np.ndarray | None = None) -> tuple[float, float]:
    """(Mel-SDR, Mel-SD): both metrics on filterbank-projected spectrograms."""
    s, s_hat = _check_pair("mel_variants", s_linear, s_hat_linear)
    if bank is None:
        bank = dsp.mel_filterbank()
    if bank.shape[1] != s.shape[1]:
        raise MetricError(f"mel_variants: bank width {bank.shape[1]} != F {s.shape[1]}")
    mel_s = s @ bank.T
    mel_hat = s_hat @ bank.T
    return sdr(mel_s, mel_hat), sd(mel_s, mel_hat)


def dtw_align(target: np.ndarray, synth: np.ndarray) -> np.ndarray:
    """Warp a synthesized spectrogram onto the target's time axis.

    Minimal-cost monotonic alignment with steps (1,0), (0,1), (1,1) and
    Euclidean frame distance on floored log-magnitudes. Synth frames mapped
    to the same target frame are averaged, so the result always has exactly
    the target's frame count.
    """
    target = np.asarray(target, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if target.ndim != 2 or synth.ndim != 2 or target.shape[1] != synth.shape[1]:
        raise MetricError(f"dtw_align: incompatible shapes {target.shape} vs {synth.shape}")
    if target.shape[0] == 0 or synth.shape[0] == 0:
        raise MetricError("dtw_align: empty spectrogram")
    path = dtw_path(target, synth)
    out = np.zeros((target.shape[0], target.shape[1]))
    counts = np.zeros(target.shape[0])
    for i, j in path:
        out[i] += synth[j]
        counts[i] += 1
    return out / counts[:, None]


def dtw_path(target: np.ndarray, synth: np.ndarray) -> list[tuple[int, int]]:
    """The minimal-cost alignment path (list of (target_idx, synth_idx))."""
    cost = _frame_costs(target, synth)
    Tt, Ts = cost.shape
    acc = np.full((Tt, Ts), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(Tt):
        for j in range(Ts):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0 and j > 0:
                best = min(best, acc[i - 1, j - 1])
            acc[i, j] = cost[i, j] + best
    path = [(Tt - 1, Ts - 1)]
    i, j = Tt - 1, Ts - 1
    while (i, j) != (0, 0):
        options = []
        if i > 0 and j > 0:
            options.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            options.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            options.append((acc[i, j - 1], (i, j - 1)))
        _, (i, j) = min(options, key=lambda o: o[0])
        path.append((i, j))
    path.reverse()
    return path


def dtw_cost(target: np.ndarray, synth: np.ndarray) -> float:
    """Total cost of the minimal alignment path."""
    cost = _frame_costs(target, synth)
    path = dtw_path(target, synth)
    return float(sum(cost[i, j] for i, j in path))


def _frame_costs(target: np.ndarray, synth: np.ndarray) -> np.ndarray:
    lt = np.log(np.maximum(np.asarray(target, dtype=np.float64), LOG_FLOOR))
    ls = np.log(np.maximum(np.asarray(synth, dtype=np.float64), LOG_FLOOR))
    diff = lt[:, None, :] - ls[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=2))


def confidence_interval(values) -> tuple[float, float]:
    """(mean, 95% half-width) using the normal 1.96 factor and N-1 variance."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size < 2:
        raise MetricError(f"confidence_interval needs at least 2 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise MetricError("confidence_interval: non-finite value")
    if np.all(values == values[0]):
        # keep the degenerate case exact instead of accumulating float dust
        return float(values[0]), 0.0
    mean = float(np.mean(values))
    half = 1.96 * float(np.std(values, ddof=1)) / math.sqrt(values.size)
    return mean, half


def utterance_metrics(target_linear: np.ndarray, synth_linear: np.ndarray,
                      mode: str, bank: np.ndarray | None = None) -> dict:
    """All four metrics for one utterance.

    Teacher-forced pairs are compared frame-by-frame (trimmed to the shorter
    length when the reduction factor padded the output); free-running output
    is DTW-aligned to the target first.
    """
    if bank is None:
        bank = dsp.mel_filterbank()
    if mode == "teacher_forced":
        t = min(target_linear.shape[0], synth_linear.shape[0])
        target, synth = target_linear[:t], synth_linear[:t]
    elif mode == "free_running":
        target = target_linear
        synth = dtw_align(target_linear, synth_linear)
    else:
        raise MetricError(f"unknown mode {mode!r}")
    mel_sdr, mel_sd = mel_variants(target, synth, bank)
    return {
        "sdr_db": sdr(target, synth),
        "mel_sdr_db": mel_sdr,
        "sd_db": sd(target, synth),
        "mel_sd_db": mel_sd,
        "mode": mode,
    }


def aggregate(per_utterance: list[dict]) -> list[dict]:
    """Collapse per-utterance records into per-(model, mode) rows with CIs.

    Records are merged in sorted utterance-id order so the aggregation is
    deterministic regardless of production order.
    """
    groups: dict[tuple[str, str], list[dict]] = {}
    for rec in per_utterance:
        groups.setdefault((rec["model"], rec["mode"]), []).append(rec)
    rows = []
    for (model, mode), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r["utterance_id"])
        row = {"model": model, "mode": mode, "n": len(recs), "metrics": {}}
        for key in METRIC_KEYS:
            mean, half = confidence_interval([r[key] for r in recs])
            row["metrics"][key] = {"mean": mean, "ci95": half}
        rows.append(row)
    return rows


def evaluate_models(models: dict, utterances, modes, out_dir,
                    bank: np.ndarray | None = None) -> dict:
    """Run every model over every utterance and mode; persist and return a report.

    `models` maps a model name to a callable (utterance, mode) -> linear
    magnitude spectrogram. Utterances provide .id and .wav_path (the
    target). A synthesis failure excludes that utterance from aggregation
    and is counted in the report.
    """
    if bank is None:
        bank = dsp.mel_filterbank()
    if not utterances:
        raise MetricError("evaluate_models: empty utterance list")
    targets = {}
    for utt in utterances:
        wav = dsp.decode_wav(open(utt.wav_path, "rb").read())
        targets[utt.id] = dsp.stft_magnitude(wav.samples)
    per_utterance = []
    failures = []
    for name in sorted(models):
        synth_fn = models[name]
        for mode in modes:
            for utt in sorted(utterances, key=lambda u: u.id):
                try:
                    synth_linear = synth_fn(utt, mode)
                    rec = utterance_metrics(targets[utt.id], synth_linear, mode, bank)
                except Exception as e:  # a bad utterance must not sink the run
                    failures.append({"model": name, "mode": mode,
                                     "utterance_id": utt.id, "error": str(e)})
                    continue
                rec.update({"model": name, "utterance_id": utt.id})
                per_utterance.append(rec)
    report = {
        "rows": aggregate(per_utterance),
        "per_utterance": per_utterance,
        "failures": failures,
        "n_failed": len(failures),
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(format_report_table(report))
    return report


def format_report_table(report: dict) -> str:
    """Aligned text table: one row per model x mode, four metric columns."""
    header = f"{'model':<10} {'mode':<16} {'n':>4}"
    for key in METRIC_KEYS:
        header += f" {key:>22}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        line = f"{row['model']:<10} {row['mode']:<16} {row['n']:>4}"
        for key in METRIC_KEYS:
            cell = row["metrics"][key]
            line += f" {cell['mean']:>13.3f} ± {cell['ci95']:>6.3f}"
        lines.append(line)
    if report.get("n_failed"):
        lines.append(f"excluded utterances (synthesis failures): {report['n_failed']}")
    return "\n".join(lines) + "\n"
