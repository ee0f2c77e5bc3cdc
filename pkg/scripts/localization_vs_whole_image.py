#!/usr/bin/env python3
"""Localized two-stage model vs whole-image baseline on the same data.

Runs both variants end to end on one seed and prints the full-test report
plus the per-clutter-band slices (the localization claim lives on the
cluttered slice). --profile smoke shrinks everything to a few minutes;
--profile desk is the real comparison and takes ~20 min per seed on CPU.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from comploc import pipeline
from comploc.config import (CcConfig, DatasetConfig, ExperimentConfig,
                            LfeConfig, load_config)

PROFILES = {
    "smoke": lambda seed: ExperimentConfig(
        dataset=DatasetConfig(train_images=128, test_images=96, image_size=64,
                              seed=0),
        lfe=LfeConfig(epochs=3, batch_size=16),
        cc=CcConfig(epochs=3, batch_size=16),
        seed=seed),
    "desk": lambda seed: ExperimentConfig(
        dataset=DatasetConfig(image_size=128, seed=0),
        lfe=LfeConfig(lr=3e-4, epochs=14, lr_decay_every=16, alpha=0.5,
                      beta=0.5, text_lr_multiplier=0.2),
        cc=CcConfig(lr=1e-3, lfe_lr=1e-3, lr_decay_every=30, epochs=45),
        seed=seed),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=sorted(PROFILES), default="smoke")
    ap.add_argument("--config", help="JSON config overriding the profile")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    if args.config:
        cfg = load_config(args.config)
        cfg = dataclasses.replace(cfg, seed=args.seed)
    else:
        cfg = PROFILES[args.profile](args.seed)
    cfg = cfg.validate()
    out = args.out or os.path.join(pipeline.artifact_root(),
                                   f"compare-{args.profile}-{args.seed}")

    t0 = time.time()
    data_dir = os.path.join(out, "dataset")
    pipeline.run_generate_data(cfg, data_dir, log=print)
    pipeline.run_compare_variants(cfg, data_dir, out, log=print)

    table = json.load(open(os.path.join(out, "comparison.json")))
    print(f"\n{'':14s} {'unseen':>8s} {'auc_pct':>8s} {'seen':>8s} {'attr':>8s}")
    for name, rep in table["variants"].items():
        print(f"{name:14s} {rep['best_unseen']:8.4f} {rep['auc_pct']:8.4f} "
              f"{rep['best_seen']:8.4f} {rep['attribute_top1']:8.4f}")
    for band, entry in table["clutter_bands"].items():
        d = entry["deltas"]
        print(f"{band}: delta unseen {d['best_unseen']:+.4f} "
              f"auc {d['auc']:+.6f} (n={entry['localized']['num_instances']})")
    print(f"done in {time.time() - t0:.0f}s -> {out}")


if __name__ == "__main__":
    main()
