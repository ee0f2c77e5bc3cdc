"""Command-line entry points.

Exit codes: 0 success, 1 validation/usage error, 2 missing upstream artifact,
3 training divergence. Default artifact locations live under the directory
named by COMPLOC_ARTIFACT_ROOT (falling back to ./artifacts).
"""

import argparse
import dataclasses
import os
import sys

from . import pipeline
from .config import ExperimentConfig, load_config
from .errors import DivergenceError, MissingArtifactError, ValidationError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would exit(2); 2 means missing-artifact here, so remap
        raise ValidationError(message)


def _root():
    return pipeline.artifact_root()


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, seed=args.seed,
            dataset=dataclasses.replace(cfg.dataset, seed=args.seed))
    if getattr(args, "device", None):
        cfg = dataclasses.replace(cfg, device=args.device)
    return cfg.validate()


def _add_common(sub, out_default):
    sub.add_argument("--config", help="JSON config file (defaults used if omitted)")
    sub.add_argument("--seed", type=int, help="override the experiment seed")
    sub.add_argument("--out", default=out_default, help="output directory")
    sub.add_argument("--device", help="torch device, e.g. cpu")


def build_parser():
    root = _root()
    p = _Parser(prog="comploc",
                description="Localized compositional recognition experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-data", help="render the synthetic dataset")
    _add_common(s, os.path.join(root, "dataset"))

    s = sub.add_parser("pretrain-lfe", help="contrastive pretraining of the extractor")
    _add_common(s, os.path.join(root, "pretrain"))
    s.add_argument("--data", default=os.path.join(root, "dataset"),
                   help="dataset directory (with manifest.json)")

    s = sub.add_parser("train", help="train the composition classifier")
    _add_common(s, os.path.join(root, "train"))
    s.add_argument("--data", default=os.path.join(root, "dataset"))
    s.add_argument("--lfe", default=os.path.join(root, "pretrain", "lfe.pt"),
                   help="pretraining checkpoint")

    s = sub.add_parser("evaluate", help="run the generalized evaluation protocol")
    _add_common(s, os.path.join(root, "eval"))
    s.add_argument("--data", default=os.path.join(root, "dataset"))
    s.add_argument("--checkpoint", default=os.path.join(root, "train", "cc.pt"))

    s = sub.add_parser("ablate", help="sweep one knob, full run per value")
    _add_common(s, None)
    s.add_argument("--data", default=os.path.join(root, "dataset"))
    s.add_argument("--knob", required=True,
                   help=f"one of {sorted(pipeline.ABLATION_GRIDS)}")
    s.add_argument("--values",
                   help="comma-separated values; alpha_beta pairs as a:b "
                        "(default: the built-in grid)")

    s = sub.add_parser("dump-proposals", help="export top-r boxes and scores")
    _add_common(s, os.path.join(root, "proposals.json"))
    s.add_argument("--data", default=os.path.join(root, "dataset"))
    s.add_argument("--checkpoint", default=os.path.join(root, "pretrain", "lfe.pt"))
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--limit", type=int, help="only the first N images")
    return p


def _parse_values(knob, text):
    if text is None:
        return None
    items = [v for v in text.split(",") if v]
    if knob == "alpha_beta":
        out = []
        for item in items:
            parts = item.split(":")
            if len(parts) != 2:
                raise ValidationError(
                    f"alpha_beta values look like 0.6:0.4, got {item!r}")
            out.append((float(parts[0]), float(parts[1])))
        return out
    if knob in ("r", "l"):
        return [int(v) for v in items]
    if knob == "margin":
        return [float(v) for v in items]
    return items


def run(args):
    cfg = _load_cfg(args)
    log = print
    if args.command == "generate-data":
        path = pipeline.run_generate_data(cfg, args.out, log=log)
        log(f"manifest: {path}")
    elif args.command == "pretrain-lfe":
        ckpt = pipeline.run_pretrain(cfg, args.data, args.out, log=log)
        log(f"checkpoint: {ckpt}")
    elif args.command == "train":
        ckpt = pipeline.run_train(cfg, args.data, args.lfe, args.out, log=log)
        log(f"checkpoint: {ckpt}")
    elif args.command == "evaluate":
        report = pipeline.run_evaluate(cfg, args.data, args.checkpoint, args.out,
                                       log=log)
        log(f"report: {os.path.join(args.out, 'report.json')} "
            f"(auc {report.auc:.4f})")
    elif args.command == "ablate":
        out = args.out or os.path.join(_root(), "ablate", args.knob)
        rows = pipeline.run_ablate(cfg, args.data, args.knob,
                                   _parse_values(args.knob, args.values), out,
                                   log=log)
        for row in rows:
            log(f"{row['knob']}={row['value']}: auc {row['auc']:.4f} "
                f"unseen {row['best_unseen']:.3f}")
    elif args.command == "dump-proposals":
        path = pipeline.run_dump_proposals(cfg, args.data, args.checkpoint, args.out,
                                           split=args.split, limit=args.limit)
        log(f"proposals: {path}")
    return 0


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
