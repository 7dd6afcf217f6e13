"""Signal-side utilities: STFT magnitudes, mel filterbank, Griffin-Lim, WAV io.

All audio is mono float64 at 16 kHz. Spectrogram frames use a 50 ms window
with a 12.5 ms shift, zero-padded into a 1024-point FFT, which gives 513
frequency bins up to Nyquist.
"""

from __future__ import annotations

import io
import json
import wave
import warnings
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
FRAME_LENGTH = 800       # 50 ms
FRAME_SHIFT = 200        # 12.5 ms
FFT_SIZE = 1024
N_FREQ = FFT_SIZE // 2 + 1
N_MELS = 80
MEL_FMIN = 0.0
MEL_FMAX = 8000.0
GRIFFIN_LIM_ITERS = 32
MAG_FLOOR = 1e-8


def frame_count(num_samples: int) -> int:
    """Number of full analysis frames in a signal (no end padding)."""
    if num_samples < FRAME_LENGTH:
        return 0
    return (num_samples - FRAME_LENGTH) // FRAME_SHIFT + 1


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (denominator N, not N-1)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft_magnitude(signal: np.ndarray) -> np.ndarray:
    """Magnitude spectrogram, shape (frames, 513).

    Frames are windowed with a periodic Hann window, zero-padded to 1024
    samples, and transformed with a real FFT. Signals shorter than one
    frame are rejected.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError(f"stft_magnitude expects a 1-D signal, got shape {signal.shape}")
    T = frame_count(signal.size)
    if T == 0:
        raise ValueError(
            f"signal of {signal.size} samples is shorter than one {FRAME_LENGTH}-sample frame")
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_SHIFT * np.arange(T)[:, None]
    frames = signal[idx] * hann_window(FRAME_LENGTH)[None, :]
    spec = np.fft.rfft(frames, n=FFT_SIZE, axis=1)
    return np.abs(spec)


def _stft_complex(signal: np.ndarray, T: int) -> np.ndarray:
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_SHIFT * np.arange(T)[:, None]
    frames = signal[idx] * hann_window(FRAME_LENGTH)[None, :]
    return np.fft.rfft(frames, n=FFT_SIZE, axis=1)


def istft(spec: np.ndarray, num_samples: int) -> np.ndarray:
    """Weighted overlap-add inverse of the complex STFT.

    Each inverse frame is windowed again and summed, then normalized by the
    accumulated squared window so that istft(stft(x)) reproduces x where
    window coverage is nonzero.
    """
    T = spec.shape[0]
    win = hann_window(FRAME_LENGTH)
    out = np.zeros(num_samples)
    norm = np.zeros(num_samples)
    frames = np.fft.irfft(spec, n=FFT_SIZE, axis=1)[:, :FRAME_LENGTH]
    for t in range(T):
        start = t * FRAME_SHIFT
        end = min(start + FRAME_LENGTH, num_samples)
        if start >= num_samples:
            break
        out[start:end] += frames[t, : end - start] * win[: end - start]
        norm[start:end] += win[: end - start] ** 2
    nz = norm > 1e-12
    out[nz] /= norm[nz]
    return out


def mel_filterbank(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX,
                   n_freq: int = N_FREQ, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_freq).

    Band edges are equally spaced on the HTK mel scale
    (mel = 2595 log10(1 + f/700)) between fmin and fmax.
    """
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise ValueError(f"need 0 <= fmin < fmax <= nyquist, got fmin={fmin} fmax={fmax}")

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    edges_hz = from_mel(np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_freq) * sample_rate / FFT_SIZE
    bank = np.zeros((n_mels, n_freq))
    for m in range(n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def linear_to_mel(mag: np.ndarray, bank: np.ndarray | None = None) -> np.ndarray:
    """Project a (frames, 513) magnitude spectrogram to (frames, n_mels)."""
    mag = np.asarray(mag, dtype=np.float64)
    if bank is None:
        bank = mel_filterbank()
    if mag.ndim != 2 or mag.shape[1] != bank.shape[1]:
        raise ValueError(f"linear_to_mel: expected (frames, {bank.shape[1]}), got {mag.shape}")
    return mag @ bank.T


def griffin_lim(mag: np.ndarray, n_iters: int = GRIFFIN_LIM_ITERS) -> np.ndarray:
    """Phase reconstruction from a (frames, 513) magnitude spectrogram.

    Starts from zero phase and alternates istft / stft projections, keeping
    the given magnitudes each round. Returns a float64 signal of length
    (frames - 1) * shift + frame_length.
    """
    if n_iters < 1:
        raise ValueError(f"griffin_lim needs at least one iteration, got {n_iters}")
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != N_FREQ or mag.shape[0] == 0:
        raise ValueError(f"griffin_lim: expected (frames >= 1, {N_FREQ}), got {mag.shape}")
    T = mag.shape[0]
    num_samples = (T - 1) * FRAME_SHIFT + FRAME_LENGTH
    spec = mag.astype(np.complex128)  # zero phase: angle 0 everywhere
    signal = istft(spec, num_samples)
    for _ in range(n_iters):
        rebuilt = _stft_complex(signal, T)
        phase = np.exp(1j * np.angle(rebuilt))
        signal = istft(mag * phase, num_samples)
    return signal


def compress(mag: np.ndarray) -> np.ndarray:
    """Magnitude -> model feature space: log1p keeps zeros at zero."""
    return np.log1p(np.asarray(mag, dtype=np.float64))


def expand(features: np.ndarray, floor: float = MAG_FLOOR) -> np.ndarray:
    """Model feature space -> magnitudes, floored to stay positive."""
    return np.maximum(np.expm1(np.asarray(features, dtype=np.float64)), floor)


@dataclass
class WavData:
    sample_rate: int
    samples: np.ndarray


def peak_normalize(signal: np.ndarray, peak: float = 0.95) -> np.ndarray:
    """Scale a signal so its largest magnitude is `peak`; silence unchanged."""
    signal = np.asarray(signal, dtype=np.float64)
    top = np.abs(signal).max() if signal.size else 0.0
    if top <= 0.0:
        return signal.copy()
    return signal * (peak / top)


def encode_wav(signal: np.ndarray) -> bytes:
    """Encode a float signal in [-1, 1] as 16-bit PCM mono RIFF WAV bytes.

    Out-of-range samples are clipped with a warning; an empty signal is an
    error. Quantization is round-to-nearest at 32767 full scale, so a
    round trip is exact to within 1/32768.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError(f"encode_wav expects a 1-D signal, got shape {signal.shape}")
    if signal.size == 0:
        raise ValueError("encode_wav: refusing to write an empty waveform")
    if np.abs(signal).max() > 1.0:
        warnings.warn("encode_wav: samples outside [-1, 1] were clipped", stacklevel=2)
        signal = np.clip(signal, -1.0, 1.0)
    pcm = np.clip(np.round(signal * 32767.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())
    return buf.getvalue()


def decode_wav(data: bytes) -> WavData:
    """Decode 16-bit PCM mono WAV bytes to floats in [-1, 1]."""
    with wave.open(io.BytesIO(data), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError("expected 16-bit mono WAV")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return WavData(sample_rate=rate, samples=samples)


def save_spectrogram(path, mag: np.ndarray, kind: str = "linear") -> None:
    """Persist a spectrogram as a JSON header line + raw little-endian floats."""
    mag = np.asarray(mag, dtype=np.float64)
    header = {
        "shape": list(mag.shape),
        "kind": kind,
        "frame_length": FRAME_LENGTH,
        "frame_shift": FRAME_SHIFT,
        "sample_rate": SAMPLE_RATE,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(mag.astype("<f8").tobytes())


def load_spectrogram(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        payload = f.read()
    shape = tuple(header["shape"])
    mag = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return mag.copy(), header["kind"]
