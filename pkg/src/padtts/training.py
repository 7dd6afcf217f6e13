"""Training loop and the staged style-adjustment schedule.

Three stages, run strictly in order:

  base        synthesizer and style map W2 train together; the PAD table W1
              stays frozen at its initial values.
  tune_w2     only W2 trains; everything else is frozen.
  adjust_pad  W1 and W2 train while the synthesizer is frozen; the final W1
              columns are the adjusted per-emotion PAD coordinates.

Teacher forcing is used for every training step; free-running decoding is an
evaluation-time concern. Each step appends one {"step", "stage", "loss"}
record to the stage's JSON-lines log.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import data as datamod
from . import style as stylemod
from .synthesizer import SynthConfig, SynthModel, batch_styles

STAGES = ("base", "tune_w2", "adjust_pad")
DEFAULT_STEPS = {"base": 2000, "tune_w2": 400, "adjust_pad": 400}
DEFAULT_LRS = {"base": 1e-3, "tune_w2": 1e-3, "adjust_pad": 1e-4}


class TrainError(ValueError):
    pass


class StageOrderError(TrainError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    steps: dict = field(default_factory=lambda: dict(DEFAULT_STEPS))
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LRS))
    seed: int = 0
    checkpoint_every: int = 500
    grad_clip: float = 5.0
    use_dropout: bool = True
    teacher_forcing: bool = True

    def __post_init__(self):
        for stage in STAGES:
            if stage not in self.steps:
                raise TrainError(f"steps missing stage {stage!r}")
            if int(self.steps[stage]) < 1:
                raise TrainError(f"steps[{stage!r}] must be >= 1")
            if stage not in self.learning_rates:
                raise TrainError(f"learning_rates missing stage {stage!r}")
            if float(self.learning_rates[stage]) <= 0.0:
                raise TrainError(f"learning_rates[{stage!r}] must be > 0")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.checkpoint_every < 1:
            raise TrainError("checkpoint_every must be >= 1")
        if not self.teacher_forcing:
            raise TrainError("free-running training is unsupported; "
                             "teacher_forcing must stay enabled")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "steps": dict(self.steps),
            "learning_rates": {k: float(v) for k, v in self.learning_rates.items()},
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "grad_clip": self.grad_clip,
            "use_dropout": self.use_dropout,
            "teacher_forcing": self.teacher_forcing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class ModelBundle:
    """A synthesizer, its style projector, and the vocabulary they share."""

    def __init__(self, synth_cfg: SynthConfig, pad_init: np.ndarray,
                 vocab: datamod.Vocab, seed: int = 0, stage: str | None = None):
        self.synth_cfg = synth_cfg
        self.vocab = vocab
        self.model = SynthModel(synth_cfg, seed=seed)
        self.projector = stylemod.StyleProjector(pad_init, seed=seed + 1)
        self.stage = stage

    def parameters(self) -> list[ad.Parameter]:
        return self.model.parameters() + self.projector.parameters()

    def styles_for(self, emotions) -> ad.Tensor:
        """(B, style_dim) graph tensor for a batch's emotion labels."""
        rows = [self.projector.project_from_onehot(stylemod.OneHotStyle(e))[1]
                for e in emotions]
        return batch_styles(rows)

    def config_dict(self) -> dict:
        return {
            "synth": self.synth_cfg.to_dict(),
            "pad_init": self.projector.pad_init.tolist(),
            "vocab_chars": "".join(self.vocab.chars),
        }


def new_bundle(synth_cfg: SynthConfig, pad_table: np.ndarray,
               utterances, seed: int = 0) -> ModelBundle:
    """Fresh bundle for a corpus; the corpus vocabulary sets the embedding size."""
    if pad_table is None:
        raise TrainError("missing PAD table; training needs initial per-emotion "
                         "PAD coordinates")
    vocab = datamod.build_vocab(utterances)
    if synth_cfg.char_vocab_size != vocab.size:
        d = synth_cfg.to_dict()
        d["char_vocab_size"] = vocab.size
        synth_cfg = SynthConfig.from_dict(d)
    return ModelBundle(synth_cfg, pad_table, vocab, seed=seed)


def save_bundle(path, bundle: ModelBundle, stage: str, extra: dict | None = None) -> None:
    ckpt.save_checkpoint(path, bundle.parameters(), bundle.config_dict(),
                         stage=stage, extra=extra)


def load_bundle(path) -> ModelBundle:
    cp = ckpt.load_checkpoint(path)
    synth_cfg = SynthConfig.from_dict(cp.config["synth"])
    pad_init = np.array(cp.config["pad_init"], dtype=np.float64)
    vocab = datamod.Vocab(cp.config["vocab_chars"])
    bundle = ModelBundle(synth_cfg, pad_init, vocab, seed=0, stage=cp.stage)
    bundle.model.load_state(cp.params)
    bundle.projector.w1.tensor.data = cp.params["style.W1"].copy()
    bundle.projector.w2.tensor.data = cp.params["style.W2"].copy()
    return bundle


def sequence_loss(mel_pred: ad.Tensor, linear_pred: ad.Tensor,
                  mel_target: np.ndarray, linear_target: np.ndarray,
                  frame_lengths: np.ndarray | None = None) -> ad.Tensor:
    """L1(mel) + L1(linear), equally weighted.

    With frame_lengths given, padding frames past each utterance's true
    length carry zero weight in both terms.
    """
    mel_target = np.asarray(mel_target)
    linear_target = np.asarray(linear_target)
    if mel_pred.data.shape != mel_target.shape:
        raise ad.ShapeMismatch("loss/mel", mel_pred.data.shape, mel_target.shape)
    if linear_pred.data.shape != linear_target.shape:
        raise ad.ShapeMismatch("loss/linear", linear_pred.data.shape, linear_target.shape)
    w_mel = w_lin = None
    if frame_lengths is not None:
        B, T = mel_target.shape[0], mel_target.shape[1]
        mask = (np.arange(T)[None, :] < np.asarray(frame_lengths)[:, None]).astype(np.float64)
        w_mel = np.repeat(mask[:, :, None], mel_target.shape[2], axis=2)
        w_lin = np.repeat(mask[:, :, None], linear_target.shape[2], axis=2)
    mel_term = ad.l1_loss(mel_pred, ad.constant(mel_target), w_mel)
    lin_term = ad.l1_loss(linear_pred, ad.constant(linear_target), w_lin)
    return ad.add(mel_term, lin_term)


def apply_freeze(bundle: ModelBundle, stage: str) -> None:
    """Set the per-stage freeze flags on every parameter.

    A model without injection sites never lets style reach the loss, so its
    projector stays frozen outright; training such a model only updates the
    synthesizer (base stage).
    """
    if stage not in STAGES:
        raise TrainError(f"unknown stage {stage!r}; valid: {STAGES}")
    synth_frozen = stage != "base"
    for p in bundle.model.parameters():
        p.frozen = synth_frozen
    style_dead = not bundle.synth_cfg.injection_sites
    bundle.projector.w1.frozen = style_dead or stage != "adjust_pad"
    bundle.projector.w2.frozen = style_dead


def _batch_loss(bundle: ModelBundle, batch: datamod.Batch,
                rng: ad.DropoutRng | None) -> ad.Tensor:
    sp = bundle.styles_for(batch.emotions)
    mel_pred, lin_pred, _ = bundle.model.teacher_forced(batch.char_ids, sp,
                                                        batch.mel, rng)
    return sequence_loss(mel_pred, lin_pred, batch.mel, batch.linear,
                         batch.frame_lengths)


def evaluate_loss(bundle: ModelBundle, batches) -> float:
    """Deterministic (dropout-off) mean teacher-forced loss over batches."""
    vals = [float(_batch_loss(bundle, b, None).data) for b in batches]
    return float(np.mean(vals))


@dataclass
class StageResult:
    stage: str
    checkpoint: ckpt.Checkpoint
    losses: list
    initial_loss: float
    final_loss: float
    log_path: str | None = None
    checkpoint_path: str | None = None


def run_stage(bundle: ModelBundle, stage: str, utterances, cfg: TrainConfig,
              out_dir=None, n_steps: int | None = None,
              cache_dir=None) -> StageResult:
    """Train one stage and return its result (checkpoint included).

    Stages must run in order; the bundle records the last completed stage.
    n_steps overrides cfg.steps[stage] and, unlike the config field, may be
    zero so an untrained stage can still be exported and inspected.
    """
    if stage not in STAGES:
        raise TrainError(f"unknown stage {stage!r}; valid: {STAGES}")
    idx = STAGES.index(stage)
    expected = None if idx == 0 else STAGES[idx - 1]
    if bundle.stage != expected:
        have = bundle.stage or "an untrained model"
        need = expected or "no prior stage"
        raise StageOrderError(
            f"stage {stage!r} must follow {need!r}, but the bundle is at {have!r}")
    if not utterances:
        raise TrainError("no training utterances")
    steps = int(cfg.steps[stage]) if n_steps is None else int(n_steps)
    if steps < 0:
        raise TrainError("n_steps must be >= 0")

    apply_freeze(bundle, stage)
    stage_seed = cfg.seed * len(STAGES) + idx
    features = {u.id: datamod.utterance_features(u, cache_dir=cache_dir)
                for u in utterances}
    batches = datamod.make_batches(utterances, features, bundle.vocab,
                                   cfg.batch_size, bundle.synth_cfg.reduction_factor,
                                   seed=stage_seed)
    params = bundle.parameters()
    opt = ad.Adam(params, lr=float(cfg.learning_rates[stage]))
    order_rng = np.random.default_rng(stage_seed)

    log_path = None
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, f"train_{stage}.jsonl")
        log_file = open(log_path, "w")

    initial_loss = evaluate_loss(bundle, batches)
    losses = []
    clip_snapshot = stage == "adjust_pad"
    try:
        step = 0
        while step < steps:
            for bi in order_rng.permutation(len(batches)):
                if step >= steps:
                    break
                opt.zero_grad()
                rng = ad.DropoutRng(stage_seed, step=step) if cfg.use_dropout else None
                loss = _batch_loss(bundle, batches[int(bi)], rng)
                ad.backward(loss)
                ad.clip_gradients(params, cfg.grad_clip)
                opt.step()
                if clip_snapshot:
                    w1 = bundle.projector.w1.tensor.data
                    np.clip(w1, -1.0, 1.0, out=w1)
                val = float(loss.data)
                losses.append(val)
                if log_file is not None:
                    log_file.write(json.dumps({"step": step, "stage": stage,
                                               "loss": val}) + "\n")
                step += 1
                if out_dir is not None and step % cfg.checkpoint_every == 0 and step < steps:
                    save_bundle(os.path.join(out_dir, f"{stage}-{step:06d}.zip"),
                                bundle, stage)
    finally:
        if log_file is not None:
            log_file.close()

    final_loss = evaluate_loss(bundle, batches)
    bundle.stage = stage
    extra = {"initial_loss": initial_loss, "final_loss": final_loss, "steps": steps}
    cp = ckpt.Checkpoint(stage=stage, config=bundle.config_dict(),
                         params={p.name: p.tensor.data.copy() for p in bundle.parameters()},
                         frozen={p.name: p.frozen for p in bundle.parameters()},
                         extra=extra)
    ckpt_path = None
    if out_dir is not None:
        ckpt_path = os.path.join(out_dir, f"{stage}.zip")
        save_bundle(ckpt_path, bundle, stage, extra=extra)
    return StageResult(stage=stage, checkpoint=cp, losses=losses,
                       initial_loss=initial_loss, final_loss=final_loss,
                       log_path=log_path, checkpoint_path=ckpt_path)


def run_schedule(bundle: ModelBundle, utterances, cfg: TrainConfig,
                 out_dir=None, cache_dir=None) -> list[StageResult]:
    """All three stages back to back."""
    return [run_stage(bundle, stage, utterances, cfg, out_dir=out_dir,
                      cache_dir=cache_dir) for stage in STAGES]


def export_adjusted_pad(checkpoint, table_path, report_path=None
                        ) -> tuple[np.ndarray, stylemod.SignReport]:
    """Write the adjusted PAD table from a finished run and its sign report.

    The report compares the final W1 against the initial table: adjustment
    should move magnitudes, not flip the meaning of the axes.
    """
    cp = checkpoint if isinstance(checkpoint, ckpt.Checkpoint) else ckpt.load_checkpoint(checkpoint)
    if cp.stage != "adjust_pad":
        raise TrainError(f"adjusted PAD comes from an 'adjust_pad' checkpoint; "
                         f"this one is at stage {cp.stage!r}")
    w1 = np.asarray(cp.params["style.W1"], dtype=np.float64)
    pad_init = np.array(cp.config["pad_init"], dtype=np.float64)
    stylemod.save_pad_table(table_path, w1)
    stylemod.load_pad_table(table_path)   # self-check: exported table is valid
    report = stylemod.sign_compatibility(pad_init, w1)
    if report_path is not None:
        with open(report_path, "w") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    return w1, report
