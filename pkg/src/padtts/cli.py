"""Command-line entry points.

Commands: gen-data, train, synth, eval, export-pad, serve. Every command
validates its inputs before touching the filesystem and writes artifacts
under --out. Exit codes: 0 success, 1 usage, 2 bad configuration or inputs,
3 runtime failure. Diagnostics go to standard error.

A JSON config file may supply defaults for training and model construction,
given either via --config or the PADTTS_CONFIG environment variable:

    {"train": {"batch_size": 8, ...}, "synth": {"preset": "SUM-4", ...}}
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import data as datamod
from . import dsp
from . import evaluation as ev
from . import style as stylemod
from . import training as tr
from .synthesizer import ModelError, SynthConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_ERRORS = (tr.TrainError, stylemod.StyleError, datamod.CorpusError,
                 ckpt.CheckpointError, ModelError, ev.MetricError,
                 FileNotFoundError, IsADirectoryError, NotADirectoryError,
                 json.JSONDecodeError)

STAGE_FLAGS = {"base": "base", "tune-w2": "tune_w2", "adjust-pad": "adjust_pad"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path) -> dict:
    if path is None:
        path = os.environ.get("PADTTS_CONFIG")
    if not path:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise tr.TrainError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - {"train", "synth"}
    if unknown:
        raise tr.TrainError(f"config file has unknown sections: {', '.join(sorted(unknown))}")
    return cfg


def _train_config(args, file_cfg: dict) -> tr.TrainConfig:
    section = dict(file_cfg.get("train", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    if args.batch_size is not None:
        section["batch_size"] = args.batch_size
    try:
        return tr.TrainConfig(**section)
    except TypeError as e:
        raise tr.TrainError(f"bad train config: {e}") from None


def _synth_config(args, file_cfg: dict) -> SynthConfig:
    section = dict(file_cfg.get("synth", {}))
    preset = getattr(args, "preset", None) or section.pop("preset", None)
    if preset is None and "injection_sites" not in section:
        preset = "SUM-4"
    section.setdefault("char_vocab_size", 2)   # resized from the corpus
    try:
        if preset:
            section.pop("injection_type", None)
            section.pop("injection_sites", None)
            vocab = section.pop("char_vocab_size")
            return SynthConfig.from_preset(preset, char_vocab_size=vocab, **section)
        return SynthConfig(**section)
    except TypeError as e:
        raise tr.TrainError(f"bad synth config: {e}") from None


def _parse_pad_flag(text: str) -> stylemod.PadVector:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--pad expects 'p,a,d', got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"--pad components must be numbers, got {text!r}") from None
    return stylemod.PadVector(*vals)


# -- commands --

def cmd_gen_data(args):
    table = stylemod.load_pad_table(args.pad_table)
    utts = datamod.generate_synthetic_corpus(args.out, table, seed=args.seed or 0,
                                             n_per_emotion=args.per_emotion)
    print(f"wrote {len(utts)} utterances under {args.out}")
    return EXIT_OK


def cmd_train(args):
    file_cfg = _load_config_file(args.config)
    cfg = _train_config(args, file_cfg)
    stage = STAGE_FLAGS[args.stage]
    utts = datamod.load_manifest(args.data)
    os.makedirs(args.out, exist_ok=True)
    if stage == "base":
        if not args.pad_table:
            raise tr.TrainError("stage 'base' needs --pad-table with initial "
                                "per-emotion PAD coordinates")
        table = stylemod.load_pad_table(args.pad_table)
        bundle = tr.new_bundle(_synth_config(args, file_cfg), table, utts,
                               seed=cfg.seed)
    else:
        prev = tr.STAGES[tr.STAGES.index(stage) - 1]
        prev_path = os.path.join(args.out, f"{prev}.zip")
        if not os.path.exists(prev_path):
            raise tr.StageOrderError(
                f"stage '{args.stage}' must follow '{prev}', but no {prev_path} "
                f"exists; run --stage {prev.replace('_', '-')} first")
        bundle = tr.load_bundle(prev_path)
    cache = args.cache_dir or os.path.join(args.out, "feature_cache")
    res = tr.run_stage(bundle, stage, utts, cfg, out_dir=args.out,
                       n_steps=args.steps, cache_dir=cache)
    print(f"stage {stage}: {len(res.losses)} steps, "
          f"loss {res.initial_loss:.4f} -> {res.final_loss:.4f}")
    print(f"checkpoint: {res.checkpoint_path}")
    return EXIT_OK


def _load_bundle_checked(path) -> tr.ModelBundle:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}")
    return tr.load_bundle(path)


def _styled_projection(bundle, pad, emotion):
    if pad is not None:
        return bundle.projector.project_from_pad(pad)
    if emotion is not None:
        return bundle.projector.project(stylemod.OneHotStyle(emotion))
    return ad.constant(np.zeros(bundle.synth_cfg.style_dim))


def cmd_synth(args):
    if args.pad is not None and args.emotion is not None:
        raise UsageError("--pad and --emotion are mutually exclusive")
    bundle = _load_bundle_checked(args.model)
    if not args.text:
        raise tr.TrainError("--text must be non-empty")
    pad = _parse_pad_flag(args.pad) if args.pad is not None else None
    sp = _styled_projection(bundle, pad, args.emotion)
    ids = bundle.vocab.encode(args.text)
    out = bundle.model.free_running(ids, sp, max_steps=args.max_steps)
    linear_mag = dsp.expand(out.linear)
    samples = dsp.peak_normalize(dsp.griffin_lim(linear_mag))
    os.makedirs(args.out, exist_ok=True)
    wav_path = os.path.join(args.out, "synth.wav")
    with open(wav_path, "wb") as f:
        f.write(dsp.encode_wav(samples))
    dsp.save_spectrogram(os.path.join(args.out, "synth.mel.spec"), out.mel, kind="mel")
    dsp.save_spectrogram(os.path.join(args.out, "synth.lin.spec"), out.linear, kind="linear")
    note = " (truncated at step limit)" if out.truncated else ""
    print(f"{wav_path}: {samples.size / dsp.SAMPLE_RATE:.2f}s, "
          f"{out.mel.shape[0]} frames{note}")
    return EXIT_OK


def _synth_fn(bundle):
    """Evaluation adapter: (utterance, mode) -> linear magnitude spectrogram."""
    def fn(utt, mode):
        ids = bundle.vocab.encode(utt.text)
        sp = bundle.projector.project(stylemod.OneHotStyle(utt.emotion))
        if mode == "teacher_forced":
            mel_t, _ = datamod.utterance_features(utt)
            out = bundle.model.synthesize(ids, sp, "teacher_forced", mel_target=mel_t)
        else:
            out = bundle.model.free_running(ids, sp)
        return dsp.expand(out.linear)
    return fn


def cmd_eval(args):
    models = {}
    for spec_arg in args.model:
        if "=" not in spec_arg:
            raise UsageError(f"--model expects NAME=CHECKPOINT, got {spec_arg!r}")
        name, path = spec_arg.split("=", 1)
        models[name] = _synth_fn(_load_bundle_checked(path))
    modes = []
    for m in args.modes.split(","):
        key = m.strip().replace("-", "_")
        if key not in ("teacher_forced", "free_running"):
            raise UsageError(f"unknown mode {m!r}")
        modes.append(key)
    utts = datamod.load_manifest(args.data)
    report = ev.evaluate_models(models, utts, modes, args.out)
    sys.stdout.write(ev.format_report_table(report))
    if report["n_failed"]:
        print(f"{report['n_failed']} utterance(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_export_pad(args):
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "pad_adjusted.json")
    report_path = os.path.join(args.out, "sign_report.json")
    _, report = tr.export_adjusted_pad(args.model, table_path, report_path)
    print(f"{table_path}: sign compatibility {report.fraction:.1%} "
          f"over {report.n_compared} entries")
    return EXIT_OK


def cmd_serve(args):
    from .service import create_app
    import uvicorn
    bundle = _load_bundle_checked(args.model)
    app = create_app(bundle, model_id=args.model_id)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="padtts",
                     description="continuous-emotion speech synthesis laboratory")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None,
                       help="JSON config file (or set PADTTS_CONFIG)")

    p = sub.add_parser("gen-data", help="render the deterministic synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--pad-table", required=True,
                   help="JSON PAD table steering the corpus acoustics")
    p.add_argument("--per-emotion", type=int, default=50)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", required=True, choices=sorted(STAGE_FLAGS))
    p.add_argument("--data", required=True, help="manifest.jsonl path")
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.add_argument("--pad-table", default=None, help="initial PAD table (base stage)")
    p.add_argument("--preset", default=None,
                   help="model preset: SUM-4, CAT-1, CAT-2 or CAT-4")
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize one utterance to wav")
    common(p)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--text", required=True)
    p.add_argument("--pad", default=None, help="p,a,d in [-1,1]")
    p.add_argument("--emotion", default=None)
    p.add_argument("--out", default=".")
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="objective metrics over a test manifest")
    common(p)
    p.add_argument("--model", action="append", required=True,
                   metavar="NAME=CHECKPOINT")
    p.add_argument("--data", required=True, help="manifest.jsonl path")
    p.add_argument("--out", required=True)
    p.add_argument("--modes", default="teacher-forced,free-running")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-pad", help="write the adjusted PAD table")
    common(p)
    p.add_argument("--model", required=True, help="adjust_pad checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_pad)

    p = sub.add_parser("serve", help="HTTP synthesis service")
    common(p)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--model-id", default="default")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("no command given")
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CONFIG_ERRORS as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
