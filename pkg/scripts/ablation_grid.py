#!/usr/bin/env python3
"""Sweep the standard ablation knobs, one full run per grid value.

Defaults to toy scale so the whole set of grids finishes in tens of minutes;
pass --knob to sweep a single grid, --config for a bigger base config.
Each sweep writes an ablation/v1 table under the artifact root.
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


def toy_config(seed):
    return ExperimentConfig(
        dataset=DatasetConfig(train_images=96, test_images=48, image_size=64,
                              seed=0),
        lfe=LfeConfig(epochs=2, batch_size=16),
        cc=CcConfig(epochs=2, batch_size=16),
        seed=seed,
    ).validate()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--knob", choices=sorted(pipeline.ABLATION_GRIDS),
                    help="sweep only this knob (default: all)")
    ap.add_argument("--config", help="JSON config to use as the base")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=os.path.join(pipeline.artifact_root(),
                                                  "ablations"))
    args = ap.parse_args()

    cfg = (load_config(args.config) if args.config
           else toy_config(args.seed)).validate()
    data_dir = os.path.join(args.out, "dataset")
    pipeline.run_generate_data(cfg, data_dir, log=print)

    knobs = [args.knob] if args.knob else sorted(pipeline.ABLATION_GRIDS)
    for knob in knobs:
        t0 = time.time()
        rows = pipeline.run_ablate(cfg, data_dir, knob, None,
                                   os.path.join(args.out, knob), log=print)
        print(f"\n{knob} ({time.time() - t0:.0f}s):")
        for row in rows:
            print(f"  {row['value']!r:14} auc {row['auc']:.6f} "
                  f"unseen {row['best_unseen']:.4f} seen {row['best_seen']:.4f}")
    print(f"tables under {args.out}")


if __name__ == "__main__":
    main()
