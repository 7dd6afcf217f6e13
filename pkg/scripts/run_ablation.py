#!/usr/bin/env python3
"""Train every injection preset on one synthetic corpus and tabulate metrics.

Each preset gets an identically seeded model and the same base-stage budget,
so the only difference between table rows is where and how style enters the
network. Held-out utterances (the last text of every emotion) are scored in
both decoding modes; the aligned table is printed and persisted.
"""

import argparse
import os
import sys
import time

import padtts.data as datamod
import padtts.dsp as dsp
import padtts.evaluation as ev
import padtts.style as stylemod
import padtts.synthesizer as sy
import padtts.training as tr


def build_parser():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--pad-table", default="configs/pad_demo.json")
    p.add_argument("--presets", default="SUM-4,CAT-1,CAT-2,CAT-4",
                   help="comma-separated preset names")
    p.add_argument("--n-per-emotion", type=int, default=6)
    p.add_argument("--steps", type=int, default=200,
                   help="base-stage steps per preset")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-decoder-steps", type=int, default=120)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    table = stylemod.load_pad_table(args.pad_table)
    cache = os.path.join(args.out, "feature_cache")
    utts = datamod.generate_synthetic_corpus(os.path.join(args.out, "corpus"),
                                             table, seed=args.seed,
                                             n_per_emotion=args.n_per_emotion)
    last = f"-{args.n_per_emotion - 1:04d}"
    held = [u for u in utts if u.id.endswith(last)]
    train = [u for u in utts if not u.id.endswith(last)]
    print(f"corpus: {len(train)} training / {len(held)} held-out utterances")

    def synth_fn(bundle):
        def fn(utt, mode):
            mel, _ = datamod.utterance_features(utt, cache_dir=cache)
            sp = bundle.projector.project_from_onehot(
                stylemod.OneHotStyle(utt.emotion))[1]
            out = bundle.model.synthesize(bundle.vocab.encode(utt.text), sp,
                                          mode, mel_target=mel)
            return dsp.expand(out.linear)
        return fn

    models = {}
    for preset in [s.strip() for s in args.presets.split(",") if s.strip()]:
        t0 = time.time()
        cfg = sy.SynthConfig.from_preset(preset, char_vocab_size=2,
                                         max_decoder_steps=args.max_decoder_steps)
        bundle = tr.new_bundle(cfg, table, utts, seed=args.seed)
        tcfg = tr.TrainConfig(batch_size=args.batch_size, seed=args.seed)
        res = tr.run_stage(bundle, "base", train, tcfg, n_steps=args.steps,
                           cache_dir=cache)
        print(f"{preset}: loss {res.initial_loss:.4f} -> {res.final_loss:.4f} "
              f"in {time.time() - t0:.0f}s")
        models[preset] = synth_fn(bundle)

    report = ev.evaluate_models(models, held,
                                ("teacher_forced", "free_running"),
                                os.path.join(args.out, "report"))
    print()
    print(ev.format_report_table(report))
    if report["n_failed"]:
        print(f"warning: {report['n_failed']} synthesis failures, see report.json")
    print(f"report written to {os.path.join(args.out, 'report')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
