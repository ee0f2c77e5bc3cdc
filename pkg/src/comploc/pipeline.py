"""Stage orchestration and artifact plumbing.

Every stage writes into a directory: artifacts carry the config hash and
seed, checkpoints carry a model-shape signature checked on load, and all
files are written atomically (temp + rename). Report files contain no
wall-clock data so identical runs produce identical bytes; timing lives in
the separate run_record.json.
"""

import dataclasses
import json
import os
import tempfile
import time

import numpy as np
import torch

from .classifier import CompositionClassifier, predict_probs, train_cc
from .config import config_hash, config_to_dict, model_signature
from .encoders import images_to_tensor
from .errors import MissingArtifactError, ValidationError
from .evaluation import compute_report, make_instances, save_curve_csv, save_report
from .manifest import generate_dataset, load_image, load_manifest, load_split_arrays
from .pretrain import pretrain_lfe
from .regions import LfeModel, extract_top_proposals
from .seeding import seed_torch

ARTIFACT_ROOT_ENV = "COMPLOC_ARTIFACT_ROOT"
_EVAL_BATCH = 64

ABLATION_GRIDS = {
    "r": [5, 10, 15, 20],
    "l": [5, 10, 20, 40],
    "margin": [0.5, 1.0, 3.0, 7.0],
    "alpha_beta": [(0.3, 0.7), (0.4, 0.6), (0.5, 0.5), (0.6, 0.4), (0.7, 0.3)],
    "refinement": ["add", "multiply", "concat"],
    "text_input": ["obj_attr", "obj"],
}


def artifact_root():
    return os.environ.get(ARTIFACT_ROOT_ENV, os.path.join(os.getcwd(), "artifacts"))


def _atomic_write(path, write_fn):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               prefix=".tmp-", suffix=os.path.basename(path))
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_json(data, path):
    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")
    _atomic_write(path, write)


def write_history_csv(history, path):
    if not history:
        return
    cols = list(history[0])

    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for row in history:
                fh.write(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in cols) + "\n")
    _atomic_write(path, write)


def write_run_record(out_dir, stage, cfg, seed, outputs, started):
    atomic_json({"stage": stage, "config_hash": config_hash(cfg), "seed": seed,
                 "artifact_version": 1, "wall_clock_sec": round(time.time() - started, 3),
                 "outputs": sorted(outputs)}, os.path.join(out_dir, "run_record.json"))


def save_checkpoint(path, kind, cfg, lfe_model, cc_model=None):
    payload = {"kind": kind, "config": config_to_dict(cfg),
               "config_hash": config_hash(cfg),
               "model_signature": model_signature(cfg),
               "lfe_state": lfe_model.state_dict(),
               "cc_state": cc_model.state_dict() if cc_model is not None else None}
    _atomic_write(path, lambda tmp: torch.save(payload, tmp))


def load_checkpoint(path, cfg, want_cc=False, required_by=""):
    if not os.path.isfile(path):
        hint = f"; run {required_by} first" if required_by else ""
        raise MissingArtifactError(f"checkpoint {path} not found{hint}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("model_signature") != model_signature(cfg):
        raise ValidationError(
            f"checkpoint {path} was trained with an incompatible model shape "
            f"(signature {payload.get('model_signature')} != {model_signature(cfg)})")
    if want_cc and payload.get("cc_state") is None:
        raise MissingArtifactError(
            f"checkpoint {path} holds no classifier weights; run train first")
    return payload


def build_lfe(cfg, device="cpu"):
    seed_torch(cfg.seed, "lfe-init")
    return LfeModel(cfg).to(device)


def build_cc(cfg, device="cpu"):
    seed_torch(cfg.seed, "cc-init")
    return CompositionClassifier(cfg).to(device)


def run_generate_data(cfg, out_dir, seed=None, log=None):
    cfg.validate()
    started = time.time()
    os.makedirs(out_dir, exist_ok=True)
    manifest = generate_dataset(cfg.dataset, out_dir, seed=seed)
    if log:
        log(f"wrote {len(manifest.records)} images under {out_dir}")
    write_run_record(out_dir, "generate-data", cfg,
                     manifest.seed, ["manifest.json"], started)
    return os.path.join(out_dir, "manifest.json")


def run_pretrain(cfg, data_dir, out_dir, device=None, log=None):
    cfg.validate()
    device = device or cfg.device
    started = time.time()
    manifest = load_manifest(data_dir)
    _check_data_matches(cfg, manifest)
    model = build_lfe(cfg, device)
    history = pretrain_lfe(data_dir, manifest, model, cfg, device=device, log=log)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "lfe.pt")
    save_checkpoint(ckpt, "lfe", cfg, model)
    write_history_csv(history, os.path.join(out_dir, "pretrain_history.csv"))
    write_run_record(out_dir, "pretrain-lfe", cfg, cfg.seed,
                     ["lfe.pt", "pretrain_history.csv"], started)
    return ckpt


def run_train(cfg, data_dir, lfe_ckpt, out_dir, device=None, log=None,
              epochs=None, skip_pretrained=False):
    """Classifier training. skip_pretrained starts the extractor from scratch
    (whole-image baseline path); otherwise the pretraining checkpoint is
    required."""
    cfg.validate()
    device = device or cfg.device
    started = time.time()
    manifest = load_manifest(data_dir)
    _check_data_matches(cfg, manifest)
    lfe = build_lfe(cfg, device)
    if skip_pretrained:
        if lfe_ckpt:
            raise ValidationError("skip_pretrained given together with a checkpoint")
    else:
        payload = load_checkpoint(lfe_ckpt, cfg, required_by="pretrain-lfe")
        lfe.load_state_dict(payload["lfe_state"])
    cc = build_cc(cfg, device)
    history = train_cc(data_dir, manifest, lfe, cc, cfg, device=device, log=log,
                       epochs=epochs)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "cc.pt")
    save_checkpoint(ckpt, "cc", cfg, lfe, cc)
    write_history_csv(history, os.path.join(out_dir, "cc_history.csv"))
    write_run_record(out_dir, "train", cfg, cfg.seed,
                     ["cc.pt", "cc_history.csv"], started)
    return ckpt


def _check_data_matches(cfg, manifest):
    d = cfg.dataset
    if manifest.image_size != d.image_size:
        raise ValidationError(
            f"dataset images are {manifest.image_size}px but the config expects "
            f"{d.image_size}px")
    if (len(manifest.vocabulary.attributes) != d.num_attributes
            or len(manifest.vocabulary.objects) != d.num_objects):
        raise ValidationError("dataset vocabulary sizes do not match the config")


def load_models(cfg, ckpt_path, device="cpu"):
    payload = load_checkpoint(ckpt_path, cfg, want_cc=True, required_by="train")
    lfe = build_lfe(cfg, device)
    lfe.load_state_dict(payload["lfe_state"])
    cc = build_cc(cfg, device)
    cc.load_state_dict(payload["cc_state"])
    lfe.eval()
    cc.eval()
    return lfe, cc


def predict_split(cfg, lfe, cc, data_dir, manifest, split="test", device=None):
    device = device or cfg.device
    images, labels = load_split_arrays(data_dir, manifest, split)
    attr_chunks, obj_chunks = [], []
    with torch.no_grad():
        for start in range(0, len(images), _EVAL_BATCH):
            x = images_to_tensor(images[start:start + _EVAL_BATCH], device)
            pa, po = predict_probs(lfe, cc, x, cfg)
            attr_chunks.append(pa.cpu().numpy())
            obj_chunks.append(po.cpu().numpy())
    return np.concatenate(attr_chunks), np.concatenate(obj_chunks), labels


def run_evaluate(cfg, data_dir, ckpt_path, out_dir, device=None, log=None):
    cfg.validate()
    device = device or cfg.device
    started = time.time()
    manifest = load_manifest(data_dir)
    _check_data_matches(cfg, manifest)
    lfe, cc = load_models(cfg, ckpt_path, device)
    attr_probs, obj_probs, labels = predict_split(cfg, lfe, cc, data_dir, manifest,
                                                  "test", device)
    inst = make_instances(attr_probs, obj_probs, labels, manifest.split)
    report = compute_report(inst, cfg.eval.sweep_points,
                            config_hash=config_hash(cfg), seed=cfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "report.json"),
                  lambda tmp: save_report(report, tmp))
    _atomic_write(os.path.join(out_dir, "curve.csv"),
                  lambda tmp: save_curve_csv(report.curve, tmp))
    dump = _prediction_dump(cfg, manifest, inst)
    atomic_json(dump, os.path.join(out_dir, "predictions.json"))
    write_run_record(out_dir, "evaluate", cfg, cfg.seed,
                     ["report.json", "curve.csv", "predictions.json"], started)
    if log:
        log(f"AUC {report.auc:.4f} seen {report.best_seen:.3f} "
            f"unseen {report.best_unseen:.3f}")
    return report


def _prediction_dump(cfg, manifest, inst):
    vocab = manifest.vocabulary
    recs = manifest.records_for("test")
    k = cfg.eval.top_k_dump
    out = []
    order = np.argsort(-inst.scores, axis=1, kind="stable")
    for row, rec in enumerate(recs):
        top = []
        for col in order[row, :k]:
            a, o = inst.candidate_pairs[col]
            top.append({"attribute": int(a), "object": int(o),
                        "attribute_name": vocab.attributes[a],
                        "object_name": vocab.objects[o],
                        "score": float(inst.scores[row, col])})
        out.append({"path": rec.path,
                    "truth": {"attribute": rec.attribute, "object": rec.object},
                    "seen": bool(inst.seen_mask[row]), "top": top})
    return {"schema": "predictions/v1", "config_hash": config_hash(cfg),
            "top_k": k, "samples": out}


def run_pipeline(cfg, data_dir, out_dir, device=None, log=None):
    """pretrain -> train -> evaluate into one directory; returns the report."""
    ckpt = run_pretrain(cfg, data_dir, out_dir, device=device, log=log)
    cc_ckpt = run_train(cfg, data_dir, ckpt, out_dir, device=device, log=log)
    return run_evaluate(cfg, data_dir, cc_ckpt, out_dir, device=device, log=log)


def effective_pretrain_epochs(cfg):
    return min(cfg.lfe.epochs, cfg.lfe.early_stop_epochs)


def whole_image_config(cfg):
    """Single-stage end-to-end control: same total epoch budget, classifier
    rate for the whole network, no pretraining stage."""
    cc = dataclasses.replace(cfg.cc, feature_source="whole_image", lfe_lr=cfg.cc.lr)
    return dataclasses.replace(cfg, cc=cc)


def run_whole_image_baseline(cfg, data_dir, out_dir, device=None, log=None):
    wcfg = whole_image_config(cfg)
    epochs = wcfg.cc.epochs + effective_pretrain_epochs(cfg)
    ckpt = run_train(wcfg, data_dir, None, out_dir, device=device, log=log,
                     epochs=epochs, skip_pretrained=True)
    return run_evaluate(wcfg, data_dir, ckpt, out_dir, device=device, log=log)


# Test images sample clutter uniformly, so slicing by the recorded level gives
# matched subsets: clutter0 isolates single-object scenes where whole-image
# pooling is not handicapped, clutter3plus keeps the heavily cluttered ones.
CLUTTER_BANDS = {"clutter0": (0, 0), "clutter3plus": (3, None)}


def evaluate_clutter_bands(cfg, data_dir, ckpt_path, bands=None, device=None):
    """GCZSL reports restricted to clutter slices of the test split.

    bands maps name -> (lo, hi) inclusive clutter bounds, hi=None open-ended.
    Returns {name: report}; one forward pass over the test set, shared by all
    bands."""
    bands = CLUTTER_BANDS if bands is None else bands
    device = device or cfg.device
    manifest = load_manifest(data_dir)
    _check_data_matches(cfg, manifest)
    lfe, cc = load_models(cfg, ckpt_path, device)
    attr_probs, obj_probs, labels = predict_split(cfg, lfe, cc, data_dir, manifest,
                                                  "test", device)
    recs = manifest.records_for("test")
    out = {}
    for name, (lo, hi) in bands.items():
        keep = np.array([i for i, r in enumerate(recs)
                         if r.clutter >= lo and (hi is None or r.clutter <= hi)],
                        dtype=int)
        if keep.size == 0:
            raise ValidationError(f"clutter band {name!r} matched no test images")
        inst = make_instances(attr_probs[keep], obj_probs[keep], labels[keep],
                              manifest.split)
        out[name] = compute_report(inst, cfg.eval.sweep_points,
                                   config_hash=config_hash(cfg), seed=cfg.seed)
    return out


def run_compare_variants(cfg, data_dir, out_dir, device=None, log=None):
    """The localization control experiment: identical data and seed, localized
    two-stage model vs whole-image single-stage baseline. Besides the full-test
    reports, emits per-clutter-band reports: the localization claim lives on
    the cluttered slice, while clutter0 checks the gap on clean scenes."""
    reports = {}
    reports["localized"] = run_pipeline(
        cfg, data_dir, os.path.join(out_dir, "localized"), device=device, log=log)
    reports["whole_image"] = run_whole_image_baseline(
        cfg, data_dir, os.path.join(out_dir, "whole_image"), device=device, log=log)
    table = {name: r.to_dict() for name, r in reports.items()}
    deltas = {key: reports["localized"].to_dict()[key] - reports["whole_image"].to_dict()[key]
              for key in ("auc", "best_seen", "best_unseen", "object_top1",
                          "attribute_top1")}
    # only bands the test split actually populates (a clutter_max=2 dataset
    # has no clutter3plus slice)
    recs = load_manifest(data_dir).records_for("test")
    live = {name: (lo, hi) for name, (lo, hi) in CLUTTER_BANDS.items()
            if any(r.clutter >= lo and (hi is None or r.clutter <= hi)
                   for r in recs)}
    bands = {}
    if live:
        band_reports = {
            "localized": evaluate_clutter_bands(
                cfg, data_dir, os.path.join(out_dir, "localized", "cc.pt"),
                bands=live, device=device),
            "whole_image": evaluate_clutter_bands(
                whole_image_config(cfg), data_dir,
                os.path.join(out_dir, "whole_image", "cc.pt"), bands=live,
                device=device),
        }
        bands = {band: {"localized": band_reports["localized"][band].to_dict(),
                        "whole_image": band_reports["whole_image"][band].to_dict()}
                 for band in live}
        for band, entry in bands.items():
            entry["deltas"] = {key: entry["localized"][key] - entry["whole_image"][key]
                               for key in ("auc", "best_unseen", "best_seen")}
    atomic_json({"schema": "comparison/v1", "variants": table, "deltas": deltas,
                 "clutter_bands": bands},
                os.path.join(out_dir, "comparison.json"))
    return reports


def apply_ablation(cfg, knob, value):
    if knob == "r":
        return dataclasses.replace(cfg, cc=dataclasses.replace(cfg.cc, top_r=int(value)))
    if knob == "l":
        return dataclasses.replace(
            cfg, lfe=dataclasses.replace(cfg.lfe, num_pseudo_labels=int(value)))
    if knob == "margin":
        return dataclasses.replace(
            cfg, lfe=dataclasses.replace(cfg.lfe, margin=float(value)))
    if knob == "alpha_beta":
        a, b = value
        return dataclasses.replace(
            cfg, lfe=dataclasses.replace(cfg.lfe, alpha=float(a), beta=float(b)))
    if knob == "refinement":
        return dataclasses.replace(
            cfg, cc=dataclasses.replace(cfg.cc, refinement=str(value)))
    if knob == "text_input":
        return dataclasses.replace(
            cfg, lfe=dataclasses.replace(cfg.lfe, text_input=str(value).replace("-", "_")))
    raise ValidationError(
        f"unknown ablation knob {knob!r}; valid knobs: {sorted(ABLATION_GRIDS)}")


def _value_slug(value):
    if isinstance(value, (tuple, list)):
        return "-".join(str(v) for v in value)
    return str(value)


def run_ablate(cfg, data_dir, knob, values, out_dir, device=None, log=None):
    """One full (pretrain, train, evaluate) run per knob value, shared seed."""
    if knob not in ABLATION_GRIDS:
        raise ValidationError(
            f"unknown ablation knob {knob!r}; valid knobs: {sorted(ABLATION_GRIDS)}")
    if values is None:
        values = ABLATION_GRIDS[knob]
    rows = []
    for value in values:
        vcfg = apply_ablation(cfg, knob, value).validate()
        vdir = os.path.join(out_dir, f"{knob}_{_value_slug(value)}")
        if log:
            log(f"ablation {knob}={value}")
        report = run_pipeline(vcfg, data_dir, vdir, device=device, log=log)
        row = {"knob": knob, "value": _value_slug(value),
               "config_hash": config_hash(vcfg)}
        row.update({k: report.to_dict()[k] for k in
                    ("auc", "best_seen", "best_unseen", "object_top1",
                     "attribute_top1")})
        rows.append(row)
    atomic_json({"schema": "ablation/v1", "knob": knob, "rows": rows},
                os.path.join(out_dir, "ablation.json"))
    write_history_csv(rows, os.path.join(out_dir, "ablation.csv"))
    return rows


def run_dump_proposals(cfg, data_dir, ckpt_path, out_path, split="test",
                       device=None, limit=None):
    cfg.validate()
    device = device or cfg.device
    manifest = load_manifest(data_dir)
    _check_data_matches(cfg, manifest)
    payload = load_checkpoint(ckpt_path, cfg, required_by="pretrain-lfe")
    lfe = build_lfe(cfg, device)
    lfe.load_state_dict(payload["lfe_state"])
    lfe.eval()
    recs = manifest.records_for(split)
    if limit:
        recs = recs[:limit]
    images = np.stack([load_image(data_dir, r, dtype=np.uint8) for r in recs])
    out = []
    with torch.no_grad():
        for start in range(0, len(recs), _EVAL_BATCH):
            x = images_to_tensor(images[start:start + _EVAL_BATCH], device)
            _, props = lfe(x)
            feats, scores, boxes = extract_top_proposals(
                props.objectness, props.features, cfg.cc.top_r, boxes=props.boxes)
            for i, rec in enumerate(recs[start:start + _EVAL_BATCH]):
                out.append({"path": rec.path,
                            "boxes": [[round(float(v), 2) for v in b]
                                      for b in boxes[i].cpu().numpy()],
                            "scores": [float(s) for s in scores[i].cpu().numpy()]})
    atomic_json({"schema": "proposals/v1", "config_hash": config_hash(cfg),
                 "top_r": cfg.cc.top_r, "images": out}, out_path)
    return out_path


def localization_diagnostic(cfg, lfe, data_dir, manifest, split="test",
                            device=None, limit=None):
    """Mean objectness over anchors that touch the true object box vs the rest.

    Diagnostic only: this is the one code path allowed to read object boxes.
    """
    device = device or cfg.device
    images, _, boxes = load_split_arrays(data_dir, manifest, split, include_boxes=True)
    if limit:
        images, boxes = images[:limit], boxes[:limit]
    anchors = lfe.anchors
    lfe.eval()
    in_vals, out_vals = [], []
    with torch.no_grad():
        for start in range(0, len(images), _EVAL_BATCH):
            x = images_to_tensor(images[start:start + _EVAL_BATCH], device)
            _, props = lfe(x)
            obj = props.objectness.cpu().numpy()
            for i, box in enumerate(boxes[start:start + _EVAL_BATCH]):
                ix = np.minimum(anchors[:, 2], box[2]) - np.maximum(anchors[:, 0], box[0])
                iy = np.minimum(anchors[:, 3], box[3]) - np.maximum(anchors[:, 1], box[1])
                hit = (ix > 0) & (iy > 0)
                if hit.any():
                    in_vals.append(obj[i][hit])
                if (~hit).any():
                    out_vals.append(obj[i][~hit])
    mean_in = float(np.concatenate(in_vals).mean()) if in_vals else float("nan")
    mean_out = float(np.concatenate(out_vals).mean()) if out_vals else float("nan")
    gain = (mean_in - mean_out) / mean_out if mean_out > 0 else float("nan")
    return {"mean_overlapping": mean_in, "mean_non_overlapping": mean_out,
            "relative_gain": gain}
