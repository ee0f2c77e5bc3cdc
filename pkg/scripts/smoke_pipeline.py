#!/usr/bin/env python3
"""End-to-end smoke run at toy scale: generate data, pretrain, train, evaluate.

Finishes in a couple of minutes on one CPU core. The numbers are not meant
to be good, only to prove the chain holds together; use the default config
(comploc CLI) for a real run.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from comploc import pipeline
from comploc.config import CcConfig, DatasetConfig, ExperimentConfig, LfeConfig


def smoke_config(seed):
    return ExperimentConfig(
        dataset=DatasetConfig(train_images=96, test_images=48, image_size=64,
                              seed=seed),
        lfe=LfeConfig(epochs=2, batch_size=16),
        cc=CcConfig(epochs=2, batch_size=16),
        seed=seed,
    ).validate()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=os.path.join(pipeline.artifact_root(),
                                                  "smoke"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = smoke_config(args.seed)
    t0 = time.time()
    data_dir = pipeline.run_generate_data(cfg, os.path.join(args.out, "dataset"),
                                          log=print)
    data_dir = os.path.dirname(data_dir)
    report = pipeline.run_pipeline(cfg, data_dir, os.path.join(args.out, "run"),
                                   log=print)
    print(json.dumps({k: round(v, 4) for k, v in report.to_dict().items()
                      if isinstance(v, (int, float))}, indent=2))
    print(f"smoke chain done in {time.time() - t0:.0f}s -> {args.out}")


if __name__ == "__main__":
    main()
