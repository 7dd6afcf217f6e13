#!/usr/bin/env python3
"""Full three-stage schedule on one preset, ending in an adjusted PAD export.

Stage one trains the synthesizer plus the style projection against the
categorical table, stage two refines the projection alone, stage three
unfreezes the table itself with everything else held fixed. The final
table columns are written back out as PAD presets next to a
sign-compatibility report.
"""

import argparse
import os
import sys

import numpy as np

import padtts.data as datamod
import padtts.style as stylemod
import padtts.synthesizer as sy
import padtts.training as tr


def build_parser():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/adjust")
    p.add_argument("--pad-table", default="configs/pad_demo.json")
    p.add_argument("--preset", default="SUM-4")
    p.add_argument("--n-per-emotion", type=int, default=6)
    p.add_argument("--steps-base", type=int, default=400)
    p.add_argument("--steps-w2", type=int, default=100)
    p.add_argument("--steps-adjust", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    table = stylemod.load_pad_table(args.pad_table)
    utts = datamod.generate_synthetic_corpus(os.path.join(args.out, "corpus"),
                                             table, seed=args.seed,
                                             n_per_emotion=args.n_per_emotion)
    cfg = sy.SynthConfig.from_preset(args.preset, char_vocab_size=2)
    bundle = tr.new_bundle(cfg, table, utts, seed=args.seed)
    tcfg = tr.TrainConfig(batch_size=args.batch_size, seed=args.seed,
                          steps={"base": args.steps_base,
                                 "tune_w2": args.steps_w2,
                                 "adjust_pad": args.steps_adjust})
    results = tr.run_schedule(bundle, utts, tcfg, out_dir=args.out,
                              cache_dir=os.path.join(args.out, "feature_cache"))
    for res in results:
        print(f"{res.stage}: loss {res.initial_loss:.4f} -> {res.final_loss:.4f} "
              f"({len(res.losses)} steps, checkpoint {res.checkpoint_path})")

    adjusted, rep = tr.export_adjusted_pad(
        results[-1].checkpoint,
        os.path.join(args.out, "pad_adjusted.json"),
        os.path.join(args.out, "sign_report.json"))
    print()
    for j, label in enumerate(stylemod.LABELS):
        moved = float(np.linalg.norm(adjusted[:, j] - table[:, j]))
        print(f"{label:<9} moved {moved:.4f}   "
              f"now p={adjusted[0, j]:+.3f} a={adjusted[1, j]:+.3f} d={adjusted[2, j]:+.3f}")
    print(f"\nsign compatibility {rep.fraction:.1%} "
          f"over {rep.n_compared} decisive entries")
    print(f"adjusted table written to {os.path.join(args.out, 'pad_adjusted.json')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
