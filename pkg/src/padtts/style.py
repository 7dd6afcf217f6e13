"""Affect-vector style pipeline.

A categorical emotion is a onehot over seven labels; each label owns a
column of W1, a 3-D point in pleasure/arousal/dominance space with every
axis in [-1, 1] and neutral pinned at the origin. W2 lifts a PAD point to
the 32-D non-negative style vector the synthesizer consumes. Neither layer
has a bias, so a zero PAD always projects to an exactly-zero style.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

LABELS = ("neutral", "happy", "sad", "angry", "fear", "disgust", "surprise")
PAD_DIM = 3
STYLE_DIM = 32
SIGN_TAU = 0.05


class StyleError(ValueError):
    pass


@dataclass(frozen=True)
class PadVector:
    p: float
    a: float
    d: float

    def __post_init__(self):
        for axis, v in zip("pad", (self.p, self.a, self.d)):
            v = float(v)
            if not np.isfinite(v):
                raise StyleError(f"PAD component {axis} is not finite")
            if not -1.0 <= v <= 1.0:
                raise StyleError(f"PAD component {axis}={v} outside [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.a, self.d], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "PadVector":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1)
        if arr.size != PAD_DIM:
            raise StyleError(f"PAD vector needs {PAD_DIM} components, got {arr.size}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class OneHotStyle:
    label: str
    vector: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.label not in LABELS:
            raise StyleError(f"unknown emotion {self.label!r}; valid labels: {', '.join(LABELS)}")
        if self.vector is None:
            vec = np.zeros(len(LABELS))
            vec[LABELS.index(self.label)] = 1.0
            object.__setattr__(self, "vector", vec)
        else:
            vec = np.asarray(self.vector, dtype=np.float64)
            object.__setattr__(self, "vector", vec)
            if vec.shape != (len(LABELS),):
                raise StyleError(f"onehot must have {len(LABELS)} entries, got shape {vec.shape}")
            nz = np.nonzero(vec)[0]
            if nz.size != 1 or vec[nz[0]] != 1.0:
                raise StyleError("onehot must have exactly one entry equal to 1.0")
            if nz[0] != LABELS.index(self.label):
                raise StyleError(f"onehot hot index {nz[0]} does not match label {self.label!r}")


class StyleProjector:
    """Two bias-free linear maps: onehot -> PAD (W1) and PAD -> style (W2)."""

    def __init__(self, pad_init: np.ndarray, w2: np.ndarray | None = None, seed: int = 0):
        pad_init = np.asarray(pad_init, dtype=np.float64)
        if pad_init.shape != (PAD_DIM, len(LABELS)):
            raise StyleError(f"pad table must be {PAD_DIM}x{len(LABELS)}, got {pad_init.shape}")
        neutral = pad_init[:, LABELS.index("neutral")]
        if np.any(neutral != 0.0):
            raise StyleError("neutral column of the PAD table must be exactly zero")
        if np.abs(pad_init).max() > 1.0:
            raise StyleError("PAD table entries must lie in [-1, 1]")
        self.pad_init = pad_init.copy()
        self.w1 = ad.Parameter("style.W1", pad_init.copy())
        if w2 is None:
            rng = np.random.default_rng(seed)
            w2 = rng.normal(0.0, 0.5, size=(STYLE_DIM, PAD_DIM))
        self.w2 = ad.Parameter("style.W2", np.asarray(w2, dtype=np.float64))
        if self.w2.data.shape != (STYLE_DIM, PAD_DIM):
            raise StyleError(f"W2 must be {STYLE_DIM}x{PAD_DIM}, got {self.w2.data.shape}")

    def parameters(self) -> list[ad.Parameter]:
        return [self.w1, self.w2]

    def project_from_onehot(self, so: OneHotStyle) -> tuple[ad.Tensor, ad.Tensor]:
        """Onehot -> (PAD point, 32-D style), both graph-connected tensors."""
        sel = ad.constant(so.vector.reshape(len(LABELS), 1))
        s = ad.reshape(ad.matmul(self.w1.tensor, sel), (PAD_DIM,))
        sp = ad.relu(ad.reshape(ad.matmul(self.w2.tensor, ad.reshape(s, (PAD_DIM, 1))), (STYLE_DIM,)))
        return s, sp

    def project_from_pad(self, pad: PadVector) -> ad.Tensor:
        """Continuous PAD point -> 32-D style tensor (range-validated)."""
        s = ad.constant(pad.as_array().reshape(PAD_DIM, 1))
        return ad.relu(ad.reshape(ad.matmul(self.w2.tensor, s), (STYLE_DIM,)))

    def project(self, style: "PadVector | OneHotStyle") -> ad.Tensor:
        if isinstance(style, OneHotStyle):
            return self.project_from_onehot(style)[1]
        if isinstance(style, PadVector):
            return self.project_from_pad(style)
        raise StyleError(f"style must be a PadVector or OneHotStyle, got {type(style).__name__}")


@dataclass
class SignReport:
    fraction: float
    n_compared: int
    per_label: dict

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "n_compared": self.n_compared, "per_label": self.per_label}


def sign_compatibility(a: np.ndarray, b: np.ndarray, tau: float = SIGN_TAU) -> SignReport:
    """Fraction of entries whose signs agree, among entries decisive in both.

    An entry participates only when its magnitude exceeds tau in both
    matrices (the sign of a near-zero value is noise), which also makes the
    comparison symmetric. An empty comparison set counts as fully
    compatible with n_compared = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise StyleError(f"sign_compatibility: shape mismatch {a.shape} vs {b.shape}")
    mask = (np.abs(a) > tau) & (np.abs(b) > tau)
    agree = (np.sign(a) == np.sign(b)) & mask
    n = int(mask.sum())
    fraction = float(agree.sum() / n) if n else 1.0
    per_label = {}
    if a.shape == (PAD_DIM, len(LABELS)):
        for j, label in enumerate(LABELS):
            col_n = int(mask[:, j].sum())
            per_label[label] = float(agree[:, j].sum() / col_n) if col_n else None
    return SignReport(fraction=fraction, n_compared=n, per_label=per_label)


def load_pad_table(path) -> np.ndarray:
    """Read a PAD table file: JSON list of {label, p, a, d} covering all 7 labels.

    Returns a 3x7 matrix with columns in canonical label order.
    """
    with open(path) as f:
        rows = json.load(f)
    if not isinstance(rows, list):
        raise StyleError("PAD table must be a JSON list of {label, p, a, d} objects")
    seen = {}
    for row in rows:
        if not isinstance(row, dict) or "label" not in row:
            raise StyleError("each PAD table row needs a 'label' field")
        label = row["label"]
        if label not in LABELS:
            raise StyleError(f"unknown label {label!r}; valid labels: {', '.join(LABELS)}")
        if label in seen:
            raise StyleError(f"duplicate label {label!r}")
        try:
            vec = [float(row[k]) for k in ("p", "a", "d")]
        except KeyError as e:
            raise StyleError(f"row for {label!r} is missing component {e.args[0]!r}") from None
        for axis, v in zip("pad", vec):
            if not -1.0 <= v <= 1.0:
                raise StyleError(f"{label!r} component {axis}={v} outside [-1, 1]")
        seen[label] = vec
    missing = [l for l in LABELS if l not in seen]
    if missing:
        raise StyleError(f"PAD table is missing labels: {', '.join(missing)}")
    table = np.array([seen[l] for l in LABELS], dtype=np.float64).T
    if np.any(table[:, LABELS.index("neutral")] != 0.0):
        raise StyleError("neutral row must be exactly (0, 0, 0)")
    return table


def save_pad_table(path, table: np.ndarray) -> None:
    """Write a 3x7 PAD matrix in the same JSON format load_pad_table reads."""
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (PAD_DIM, len(LABELS)):
        raise StyleError(f"expected a {PAD_DIM}x{len(LABELS)} table, got {table.shape}")
    rows = [
        {"label": label, "p": float(table[0, j]), "a": float(table[1, j]), "d": float(table[2, j])}
        for j, label in enumerate(LABELS)
    ]
    with open(path, "w") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")
