"""Style-conditioned sequence-to-sequence spectrogram synthesizer.

Architecture, per utterance:

  char ids -> embedding -> pre-net -> bidirectional GRU        (encoder e)
  loop over decoder steps:
      prev mel frame -> pre-net                    [style @ dec_prenet]
      [pre-net out, prev context]                  [style @ attn_rnn]
          -> attention RNN (tanh)
      location-sensitive scores over e -> alpha -> context
                                                   [style @ attn_context]
      [attention hidden, context] -> input projection
      projection -> GRU layer 1 (+ residual)       [style @ dec_rnn1]
      -> GRU layer 2 (+ residual)                  [style @ dec_rnn2]
      -> linear head emitting r mel frames
  predicted mel frames -> per-frame linear projection to the full
  spectrogram width.

The 32-D style vector enters at the configured sites either by sum
(y + ReLU(s W)), concatenation ([s, y], style first), or elementwise
multiply (ReLU(s W) * y). A zero style with sum injection leaves every
site's activation untouched, so the model degenerates to a plain
non-emotional synthesizer.

The model works in log1p-magnitude feature space; dsp.expand turns its
outputs back into magnitudes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import dsp

INJECTION_SITES = ("attn_rnn", "attn_context", "dec_prenet", "dec_rnn1", "dec_rnn2")
INJECTION_TYPES = ("sum", "concat", "multiply")
PRESETS = {
    "SUM-4": ("sum", ("attn_rnn", "dec_prenet", "dec_rnn1", "dec_rnn2")),
    "CAT-1": ("concat", ("attn_rnn",)),
    "CAT-2": ("concat", ("attn_rnn", "dec_prenet")),
    "CAT-4": ("concat", ("attn_rnn", "dec_prenet", "dec_rnn1", "dec_rnn2")),
}
STOP_FRAMES = 5
STOP_LEVEL = 0.01


class ModelError(ValueError):
    pass


class AttentionCollapse(RuntimeError):
    pass


@dataclass
class SynthConfig:
    char_vocab_size: int
    embed_dim: int = 32
    encoder_dim: int = 64
    attention_dim: int = 64
    decoder_dim: int = 128
    style_dim: int = 32
    n_mels: int = dsp.N_MELS
    linear_bins: int = dsp.N_FREQ
    reduction_factor: int = 2
    injection_type: str = "sum"
    injection_sites: tuple = ()
    max_decoder_steps: int = 200
    location_filters: int = 16
    location_kernel: int = 11
    dropout: float = 0.5
    preset: str | None = None

    def __post_init__(self):
        self.injection_sites = tuple(self.injection_sites)
        if self.injection_type not in INJECTION_TYPES:
            raise ModelError(f"injection_type must be one of {INJECTION_TYPES}, "
                             f"got {self.injection_type!r}")
        for site in self.injection_sites:
            if site not in INJECTION_SITES:
                raise ModelError(f"unknown injection site {site!r}; valid: {INJECTION_SITES}")
        if len(set(self.injection_sites)) != len(self.injection_sites):
            raise ModelError("duplicate injection sites")
        if self.char_vocab_size < 2:
            raise ModelError("char_vocab_size must cover at least pad + one character")
        if self.reduction_factor < 1:
            raise ModelError("reduction_factor must be >= 1")

    @classmethod
    def from_preset(cls, name: str, char_vocab_size: int, **overrides) -> "SynthConfig":
        if name not in PRESETS:
            raise ModelError(f"unknown preset {name!r}; valid: {', '.join(sorted(PRESETS))}")
        itype, sites = PRESETS[name]
        return cls(char_vocab_size=char_vocab_size, injection_type=itype,
                   injection_sites=sites, preset=name, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["injection_sites"] = list(self.injection_sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "preset" in d and d["preset"] and "injection_type" not in d:
            itype, sites = PRESETS[d["preset"]]
            d["injection_type"] = itype
            d["injection_sites"] = sites
        d["injection_sites"] = tuple(d.get("injection_sites", ()))
        return cls(**d)

    # -- derived widths (concat sites widen their consumer's input) --

    def _cat(self, site) -> int:
        return self.style_dim if (self.injection_type == "concat"
                                  and site in self.injection_sites) else 0

    @property
    def encoder_out_dim(self) -> int:
        return 2 * self.encoder_dim

    @property
    def context_out_dim(self) -> int:
        return self.encoder_out_dim + self._cat("attn_context")

    @property
    def dec_prenet_base_dim(self) -> int:
        return self.decoder_dim // 2

    @property
    def dec_prenet_out_dim(self) -> int:
        return self.dec_prenet_base_dim + self._cat("dec_prenet")

    @property
    def attn_rnn_in_dim(self) -> int:
        return self.dec_prenet_out_dim + self.context_out_dim + self._cat("attn_rnn")

    @property
    def dec_proj_in_dim(self) -> int:
        return self.attention_dim + self.context_out_dim

    @property
    def gru1_in_dim(self) -> int:
        return self.decoder_dim + self._cat("dec_rnn1")

    @property
    def gru2_in_dim(self) -> int:
        return self.decoder_dim + self._cat("dec_rnn2")

    def sum_site_width(self, site: str) -> int:
        """Width of the activation a sum/multiply projection maps onto."""
        return {
            "attn_rnn": self.dec_prenet_out_dim + self.context_out_dim,
            "attn_context": self.encoder_out_dim,
            "dec_prenet": self.dec_prenet_base_dim,
            "dec_rnn1": self.decoder_dim,
            "dec_rnn2": self.decoder_dim,
        }[site]


def count_parameters(cfg: SynthConfig) -> int:
    """Closed-form trainable-scalar count of the synthesizer network.

    Mirrors build order: embedding, encoder pre-net, bidirectional GRU,
    attention score path, attention RNN, decoder pre-net, input projection,
    two decoder GRUs, mel head, linear post-projection, plus one
    style-projection matrix per sum/multiply site. Concat sites add no
    standalone matrix; their cost shows up as widened consumer inputs.
    The style-table weights live in the StyleProjector and are not counted.
    """
    E, enc, A, D = cfg.embed_dim, cfg.encoder_dim, cfg.attention_dim, cfg.decoder_dim
    S, M, r = cfg.style_dim, cfg.n_mels, cfg.reduction_factor
    total = cfg.char_vocab_size * E
    total += E * 2 * E + 2 * E          # encoder pre-net layer 0
    total += 2 * E * E + E              # encoder pre-net layer 1
    total += 2 * (E * 3 * enc + enc * 3 * enc + 3 * enc)   # fwd + bwd GRU
    total += A * A                      # query projection
    total += cfg.encoder_out_dim * A    # key projection
    total += cfg.location_kernel * 1 * cfg.location_filters  # location conv
    total += cfg.location_filters * A   # location features -> score space
    total += A                          # score vector v
    total += cfg.attn_rnn_in_dim * A + A * A + A            # attention RNN
    total += M * D + D                  # decoder pre-net layer 0
    total += D * cfg.dec_prenet_base_dim + cfg.dec_prenet_base_dim  # layer 1
    total += cfg.dec_proj_in_dim * D + D                    # input projection
    total += cfg.gru1_in_dim * 3 * D + D * 3 * D + 3 * D    # decoder GRU 1
    total += cfg.gru2_in_dim * 3 * D + D * 3 * D + 3 * D    # decoder GRU 2
    total += D * r * M + r * M          # mel head
    total += M * cfg.linear_bins + cfg.linear_bins          # post projection
    if cfg.injection_type in ("sum", "multiply"):
        for site in cfg.injection_sites:
            total += S * cfg.sum_site_width(site)
    return total


@dataclass
class DecoderOutput:
    mel: np.ndarray                # (T, n_mels) feature-space frames
    linear: np.ndarray             # (T, linear_bins)
    alignments: np.ndarray         # (steps, T_in)
    truncated: bool = False
    mel_tensor: object = None      # graph-connected tensors when requested
    linear_tensor: object = None


def _affine(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """x @ w + b with the bias tiled to x's leading shape (no broadcasting)."""
    out = ad.matmul(x, w)
    tiled = b
    if x.data.ndim == 2:
        tiled = ad.repeat(ad.reshape(b, (1, -1)), x.data.shape[0], axis=0)
    elif x.data.ndim == 3:
        tiled = ad.repeat(ad.reshape(b, (1, 1, -1)), x.data.shape[1], axis=1)
        tiled = ad.repeat(tiled, x.data.shape[0], axis=0)
    return ad.add(out, tiled)


def inject(sp: ad.Tensor, y: ad.Tensor, injection_type: str,
           w: ad.Tensor | None = None) -> ad.Tensor:
    """Combine a style vector with an activation.

    sum:      y + ReLU(sp @ w)
    concat:   [sp, y]  (style first)
    multiply: ReLU(sp @ w) * y

    sp and y are either both vectors or both (B, dim) batches.
    """
    if injection_type == "concat":
        return ad.concat([sp, y], axis=-1)
    if w is None:
        raise ModelError(f"{injection_type} injection needs a projection matrix")
    if w.data.shape[-1] != y.data.shape[-1]:
        raise ad.ShapeMismatch(f"inject[{injection_type}]", w.data.shape, y.data.shape)
    styled = ad.relu(ad.matmul(sp, w))
    if injection_type == "sum":
        return ad.add(styled, y)
    if injection_type == "multiply":
        return ad.mul(styled, y)
    raise ModelError(f"unknown injection type {injection_type!r}")


def batch_styles(sps) -> ad.Tensor:
    """Stack per-utterance (style_dim,) tensors into (B, style_dim)."""
    rows = [ad.reshape(sp, (1, -1)) for sp in sps]
    return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)


def context_vector(e: ad.Tensor, alpha: ad.Tensor) -> ad.Tensor:
    """Attention-weighted sum of encoder frames: (B,T,C), (B,T) -> (B,C)."""
    B, T, C = e.data.shape
    if alpha.data.shape != (B, T):
        raise ad.ShapeMismatch("context", e.data.shape, alpha.data.shape)
    return ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, T)), e), (B, C))


class _GRU:
    """Fused-gate GRU cell; candidate uses the reset-gated hidden product."""

    def __init__(self, model, prefix, in_dim, hidden):
        self.h = hidden
        k = np.sqrt(1.0 / hidden)
        self.wx = model._param(f"{prefix}.wx", model._uniform((in_dim, 3 * hidden), k))
        self.wh = model._param(f"{prefix}.wh", model._uniform((hidden, 3 * hidden), k))
        self.b = model._param(f"{prefix}.b", np.zeros(3 * hidden))

    def step(self, x: ad.Tensor, h: ad.Tensor) -> ad.Tensor:
        H = self.h
        gx = _affine(x, self.wx.tensor, self.b.tensor)
        gh = ad.matmul(h, self.wh.tensor)
        r = ad.sigmoid(ad.add(gx[:, :H], gh[:, :H]))
        z = ad.sigmoid(ad.add(gx[:, H:2 * H], gh[:, H:2 * H]))
        n = ad.tanh(ad.add(gx[:, 2 * H:], ad.mul(r, gh[:, 2 * H:])))
        one = ad.constant(np.ones_like(z.data))
        return ad.add(ad.mul(ad.sub(one, z), n), ad.mul(z, h))


class SynthModel:
    """Owns the network parameters and the forward passes."""

    def __init__(self, cfg: SynthConfig, seed: int = 0):
        self.cfg = cfg
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, ad.Parameter] = {}
        c = cfg
        self.embed = self._param("embed.table", self._rng.normal(0.0, 0.3, (c.char_vocab_size, c.embed_dim)))
        self.enc_pre_w0 = self._param("enc.prenet.w0", self._glorot((c.embed_dim, 2 * c.embed_dim)))
        self.enc_pre_b0 = self._param("enc.prenet.b0", np.zeros(2 * c.embed_dim))
        self.enc_pre_w1 = self._param("enc.prenet.w1", self._glorot((2 * c.embed_dim, c.embed_dim)))
        self.enc_pre_b1 = self._param("enc.prenet.b1", np.zeros(c.embed_dim))
        self.enc_fwd = _GRU(self, "enc.fwd", c.embed_dim, c.encoder_dim)
        self.enc_bwd = _GRU(self, "enc.bwd", c.embed_dim, c.encoder_dim)
        self.attn_wq = self._param("attn.wq", self._glorot((c.attention_dim, c.attention_dim)))
        self.attn_wk = self._param("attn.wk", self._glorot((c.encoder_out_dim, c.attention_dim)))
        self.attn_conv = self._param("attn.conv", self._glorot((c.location_kernel, 1, c.location_filters)))
        self.attn_wf = self._param("attn.wf", self._glorot((c.location_filters, c.attention_dim)))
        self.attn_v = self._param("attn.v", self._glorot((c.attention_dim, 1)))
        self.attn_rnn_wx = self._param("attnrnn.wx", self._glorot((c.attn_rnn_in_dim, c.attention_dim)))
        self.attn_rnn_wh = self._param("attnrnn.wh", self._glorot((c.attention_dim, c.attention_dim)))
        self.attn_rnn_b = self._param("attnrnn.b", np.zeros(c.attention_dim))
        self.dec_pre_w0 = self._param("dec.prenet.w0", self._glorot((c.n_mels, c.decoder_dim)))
        self.dec_pre_b0 = self._param("dec.prenet.b0", np.zeros(c.decoder_dim))
        self.dec_pre_w1 = self._param("dec.prenet.w1", self._glorot((c.decoder_dim, c.dec_prenet_base_dim)))
        self.dec_pre_b1 = self._param("dec.prenet.b1", np.zeros(c.dec_prenet_base_dim))
        self.dec_proj_w = self._param("dec.proj.w", self._glorot((c.dec_proj_in_dim, c.decoder_dim)))
        self.dec_proj_b = self._param("dec.proj.b", np.zeros(c.decoder_dim))
        self.gru1 = _GRU(self, "dec.gru1", c.gru1_in_dim, c.decoder_dim)
        self.gru2 = _GRU(self, "dec.gru2", c.gru2_in_dim, c.decoder_dim)
        self.mel_w = self._param("dec.mel.w", self._glorot((c.decoder_dim, c.reduction_factor * c.n_mels)))
        self.mel_b = self._param("dec.mel.b", np.zeros(c.reduction_factor * c.n_mels))
        self.post_w = self._param("post.w", self._glorot((c.n_mels, c.linear_bins)))
        self.post_b = self._param("post.b", np.zeros(c.linear_bins))
        self.inject_w: dict[str, ad.Parameter] = {}
        if c.injection_type in ("sum", "multiply"):
            for site in INJECTION_SITES:          # fixed order keeps init deterministic
                if site in c.injection_sites:
                    self.inject_w[site] = self._param(
                        f"inject.{site}.w", self._glorot((c.style_dim, c.sum_site_width(site))))

    # -- parameter bookkeeping --

    def _param(self, name, data) -> ad.Parameter:
        if name in self._params:
            raise ModelError(f"duplicate parameter {name}")
        p = ad.Parameter(name, data)
        self._params[name] = p
        return p

    def _glorot(self, shape):
        limit = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return self._rng.uniform(-limit, limit, shape)

    def _uniform(self, shape, k):
        return self._rng.uniform(-k, k, shape)

    def parameters(self) -> list[ad.Parameter]:
        return list(self._params.values())

    def param(self, name) -> ad.Parameter:
        return self._params[name]

    def load_state(self, arrays: dict) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise ModelError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.tensor.data.shape:
                raise ModelError(f"{name}: checkpoint shape {arrays[name].shape} "
                                 f"!= model shape {p.tensor.data.shape}")
            p.tensor.data = arrays[name].astype(np.float64).copy()

    # -- style plumbing --

    def _check_style(self, sp, batch):
        if sp is None:
            if self.cfg.injection_sites:
                raise ModelError("model has injection sites configured; pass a "
                                 "style vector (zeros for neutral)")
            return None
        if sp.data.ndim == 1:
            sp = ad.reshape(sp, (1, -1))
        if sp.data.shape != (batch, self.cfg.style_dim):
            raise ad.ShapeMismatch("style", (batch, self.cfg.style_dim), sp.data.shape)
        return sp

    def _site_inject(self, site, sp, y):
        if site not in self.cfg.injection_sites or sp is None:
            return y
        w = self.inject_w.get(site)
        return inject(sp, y, self.cfg.injection_type, w.tensor if w else None)

    # -- encoder --

    def encode(self, char_ids: np.ndarray, rng: ad.DropoutRng | None = None) -> ad.Tensor:
        """(B, L) int ids -> (B, L, encoder_out_dim) features."""
        char_ids = np.asarray(char_ids)
        if char_ids.ndim == 1:
            char_ids = char_ids[None, :]
        if char_ids.size == 0 or char_ids.shape[1] == 0:
            raise ModelError("encode: empty input")
        if char_ids.max() >= self.cfg.char_vocab_size or char_ids.min() < 0:
            raise ModelError(f"encode: character id out of range "
                             f"(vocab size {self.cfg.char_vocab_size})")
        B, L = char_ids.shape
        emb = ad.take(self.embed.tensor, char_ids)            # (B, L, E)
        flat = ad.reshape(emb, (B * L, self.cfg.embed_dim))
        h = ad.relu(_affine(flat, self.enc_pre_w0.tensor, self.enc_pre_b0.tensor))
        h = ad.dropout(h, self.cfg.dropout, rng)
        h = ad.relu(_affine(h, self.enc_pre_w1.tensor, self.enc_pre_b1.tensor))
        h = ad.dropout(h, self.cfg.dropout, rng)
        seq = ad.reshape(h, (B, L, self.cfg.embed_dim))
        fwd_states = []
        hf = ad.constant(np.zeros((B, self.cfg.encoder_dim)))
        for t in range(L):
            hf = self.enc_fwd.step(seq[:, t, :], hf)
            fwd_states.append(ad.reshape(hf, (B, 1, self.cfg.encoder_dim)))
        bwd_states = [None] * L
        hb = ad.constant(np.zeros((B, self.cfg.encoder_dim)))
        for t in reversed(range(L)):
            hb = self.enc_bwd.step(seq[:, t, :], hb)
            bwd_states[t] = ad.reshape(hb, (B, 1, self.cfg.encoder_dim))
        fwd = ad.concat(fwd_states, axis=1) if L > 1 else fwd_states[0]
        bwd = ad.concat(bwd_states, axis=1) if L > 1 else bwd_states[0]
        return ad.concat([fwd, bwd], axis=-1)                 # (B, L, 2*enc)

    # -- attention --

    def attention_scores(self, e_keys: ad.Tensor, attn_hidden: ad.Tensor,
                         alpha_prev: ad.Tensor) -> ad.Tensor:
        """v' tanh(Wq h + Wk e + Wf (conv * alpha_prev)): (B, T) logits."""
        B, T, A = e_keys.data.shape
        q = ad.matmul(attn_hidden, self.attn_wq.tensor)       # (B, A)
        q = ad.repeat(ad.reshape(q, (B, 1, A)), T, axis=1)
        loc = ad.conv1d(ad.reshape(alpha_prev, (B, T, 1)), self.attn_conv.tensor)
        loc = ad.matmul(loc, self.attn_wf.tensor)             # (B, T, A)
        scores = ad.matmul(ad.tanh(ad.add(ad.add(q, e_keys), loc)), self.attn_v.tensor)
        scores = ad.reshape(scores, (B, T))
        if np.any(np.isnan(scores.data)):
            raise AttentionCollapse("NaN in attention scores")
        return scores

    def attention_step(self, e: ad.Tensor, e_keys: ad.Tensor, state: dict,
                       prev_frame: ad.Tensor, sp: ad.Tensor | None,
                       rng: ad.DropoutRng | None = None) -> tuple[ad.Tensor, dict]:
        """One attention-RNN update; returns (alpha, new state).

        state holds alpha (B,T), attn_hidden (B,A), context (B,context_out).
        """
        pre = self.decoder_prenet(prev_frame, sp, rng)
        attn_in = ad.concat([pre, state["context"]], axis=-1)
        attn_in = self._site_inject("attn_rnn", sp, attn_in)
        h = ad.tanh(ad.add(_affine(attn_in, self.attn_rnn_wx.tensor, self.attn_rnn_b.tensor),
                           ad.matmul(state["attn_hidden"], self.attn_rnn_wh.tensor)))
        alpha = ad.softmax(self.attention_scores(e_keys, h, state["alpha"]))
        context = self._site_inject("attn_context", sp, context_vector(e, alpha))
        return alpha, {"alpha": alpha, "attn_hidden": h, "context": context}

    def decoder_prenet(self, frame: ad.Tensor, sp: ad.Tensor | None,
                       rng: ad.DropoutRng | None) -> ad.Tensor:
        h = ad.relu(_affine(frame, self.dec_pre_w0.tensor, self.dec_pre_b0.tensor))
        h = ad.dropout(h, self.cfg.dropout, rng)
        h = ad.relu(_affine(h, self.dec_pre_w1.tensor, self.dec_pre_b1.tensor))
        h = ad.dropout(h, self.cfg.dropout, rng)
        return self._site_inject("dec_prenet", sp, h)

    def initial_state(self, B: int, T: int, sp: ad.Tensor | None) -> dict:
        alpha0 = np.zeros((B, T))
        alpha0[:, 0] = 1.0
        raw_ctx = ad.constant(np.zeros((B, self.cfg.encoder_out_dim)))
        return {
            "alpha": ad.constant(alpha0),
            "attn_hidden": ad.constant(np.zeros((B, self.cfg.attention_dim))),
            "context": self._site_inject("attn_context", sp, raw_ctx),
            "h1": ad.constant(np.zeros((B, self.cfg.decoder_dim))),
            "h2": ad.constant(np.zeros((B, self.cfg.decoder_dim))),
        }

    def decoder_step(self, e: ad.Tensor, e_keys: ad.Tensor, state: dict,
                     prev_frame: ad.Tensor, sp: ad.Tensor | None,
                     rng: ad.DropoutRng | None = None) -> tuple[ad.Tensor, ad.Tensor, dict]:
        """One full step: returns (mel frames (B, r, n_mels), alpha, new state)."""
        B = prev_frame.data.shape[0]
        alpha, attn_state = self.attention_step(e, e_keys, state, prev_frame, sp, rng)
        proj_in = ad.concat([attn_state["attn_hidden"], attn_state["context"]], axis=-1)
        proj = _affine(proj_in, self.dec_proj_w.tensor, self.dec_proj_b.tensor)
        g1_in = self._site_inject("dec_rnn1", sp, proj)
        h1 = ad.add(proj, self.gru1.step(g1_in, state["h1"]))
        g2_in = self._site_inject("dec_rnn2", sp, h1)
        h2 = ad.add(h1, self.gru2.step(g2_in, state["h2"]))
        frames = _affine(h2, self.mel_w.tensor, self.mel_b.tensor)
        frames = ad.reshape(frames, (B, self.cfg.reduction_factor, self.cfg.n_mels))
        if not np.all(np.isfinite(frames.data)):
            raise ModelError("decoder produced a non-finite activation")
        new_state = dict(attn_state)
        new_state["h1"] = h1
        new_state["h2"] = h2
        return frames, alpha, new_state

    def post_project(self, mel: ad.Tensor) -> ad.Tensor:
        """Per-frame linear map from mel features to full-width features."""
        return _affine(mel, self.post_w.tensor, self.post_b.tensor)

    # -- full passes --

    def teacher_forced(self, char_ids: np.ndarray, sp_batch: ad.Tensor | None,
                       mel_target: np.ndarray, rng: ad.DropoutRng | None = None
                       ) -> tuple[ad.Tensor, ad.Tensor, np.ndarray]:
        """Run the decoder against ground-truth previous frames.

        mel_target: (B, T, n_mels) with T a multiple of r. Returns
        (mel (B,T,n_mels), linear (B,T,linear_bins), alignments (steps,B,T_in)).
        """
        cfg = self.cfg
        mel_target = np.asarray(mel_target)
        B, T = mel_target.shape[0], mel_target.shape[1]
        r = cfg.reduction_factor
        if T == 0 or T % r != 0:
            raise ModelError(f"target frame count {T} not a positive multiple of r={r}")
        sp_batch = self._check_style(sp_batch, B)
        e = self.encode(char_ids, rng)
        e_keys = ad.matmul(e, self.attn_wk.tensor)
        state = self.initial_state(B, e.data.shape[1], sp_batch)
        outputs = []
        alignments = []
        for step in range(T // r):
            if step == 0:
                prev = ad.constant(np.zeros((B, cfg.n_mels)))
            else:
                prev = ad.constant(mel_target[:, step * r - 1, :])
            frames, alpha, state = self.decoder_step(e, e_keys, state, prev, sp_batch, rng)
            outputs.append(frames)
            alignments.append(alpha.data.copy())
        mel = ad.concat(outputs, axis=1) if len(outputs) > 1 else outputs[0]
        linear = self.post_project(mel)
        return mel, linear, np.array(alignments)

    def free_running(self, char_ids: np.ndarray, sp: ad.Tensor | None,
                     max_steps: int | None = None) -> DecoderOutput:
        """Autoregressive decoding on the model's own outputs (single text)."""
        cfg = self.cfg
        char_ids = np.asarray(char_ids).reshape(1, -1)
        max_steps = max_steps or cfg.max_decoder_steps
        sp = self._check_style(sp, 1)
        e = self.encode(char_ids, None)
        e_keys = ad.matmul(e, self.attn_wk.tensor)
        state = self.initial_state(1, char_ids.shape[1], sp)
        prev = ad.constant(np.zeros((1, cfg.n_mels)))
        frames_out = []
        alignments = []
        quiet_run = 0
        truncated = True
        for _ in range(max_steps):
            frames, alpha, state = self.decoder_step(e, e_keys, state, prev, sp, None)
            frames_out.append(frames)
            alignments.append(alpha.data[0].copy())
            prev = ad.reshape(frames[:, -1, :], (1, cfg.n_mels))
            step_mags = dsp.expand(frames.data[0])
            for f in range(cfg.reduction_factor):
                quiet_run = quiet_run + 1 if step_mags[f].mean() < STOP_LEVEL else 0
            if quiet_run >= STOP_FRAMES:
                truncated = False
                break
        mel = ad.concat(frames_out, axis=1) if len(frames_out) > 1 else frames_out[0]
        linear = self.post_project(mel)
        return DecoderOutput(
            mel=mel.data[0].copy(), linear=linear.data[0].copy(),
            alignments=np.array(alignments), truncated=truncated,
            mel_tensor=mel, linear_tensor=linear)

    def synthesize(self, char_ids: np.ndarray, sp: ad.Tensor | None, mode: str,
                   mel_target: np.ndarray | None = None,
                   max_steps: int | None = None) -> DecoderOutput:
        """Single-utterance synthesis in either decoding mode."""
        if mode == "teacher_forced":
            if mel_target is None:
                raise ModelError("teacher_forced mode needs a target mel")
            target = np.asarray(mel_target)
            r = self.cfg.reduction_factor
            T = target.shape[0]
            T_pad = ((T + r - 1) // r) * r
            padded = np.zeros((1, T_pad, self.cfg.n_mels))
            padded[0, :T] = target
            mel, linear, align = self.teacher_forced(char_ids, sp, padded, None)
            return DecoderOutput(mel=mel.data[0].copy(), linear=linear.data[0].copy(),
                                 alignments=align[:, 0, :], truncated=False,
                                 mel_tensor=mel, linear_tensor=linear)
        if mode == "free_running":
            return self.free_running(char_ids, sp, max_steps)
        raise ModelError(f"unknown mode {mode!r}")


def save_model_config(path, cfg: SynthConfig) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model_config(path) -> SynthConfig:
    with open(path) as f:
        return SynthConfig.from_dict(json.load(f))
