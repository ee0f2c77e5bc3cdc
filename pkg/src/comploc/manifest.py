"""Dataset manifests: generation to disk, JSON round-trip, validation, loading.

Layout under a dataset root:
    manifest.json
    images/<split>_<index>.png     8-bit RGB, lossless

Ground-truth object boxes are stored for diagnostics but the sample loader
drops them unless explicitly asked; no training code path may request them.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import MissingArtifactError, ValidationError
from .scenes import Vocabulary, default_vocabulary, generate_scene
from .seeding import derive_seed, rng_for
from .splits import PairSplit, build_split

MANIFEST_VERSION = 1
_SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRecord:
    path: str
    attribute: int
    object: int
    split: str
    clutter: int
    scene_seed: int
    object_box: tuple

    def to_json(self):
        return {"path": self.path, "attribute": self.attribute, "object": self.object,
                "split": self.split, "clutter": self.clutter,
                "scene_seed": self.scene_seed, "object_box": list(self.object_box)}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(path=data["path"], attribute=int(data["attribute"]),
                       object=int(data["object"]), split=data["split"],
                       clutter=int(data["clutter"]), scene_seed=int(data["scene_seed"]),
                       object_box=tuple(data["object_box"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed sample record {data!r}: {exc}") from exc


@dataclass
class DatasetManifest:
    vocabulary: Vocabulary
    split: PairSplit
    records: list
    seed: int
    image_size: int
    version: int = MANIFEST_VERSION

    def validate(self):
        self.split.check_against(self.vocabulary)
        seen = self.split.train_pairs
        for rec in self.records:
            if rec.split not in _SPLIT_TAGS:
                raise ValidationError(f"record {rec.path}: unknown split tag {rec.split!r}")
            pair = (rec.attribute, rec.object)
            self.vocabulary.check_pair(pair)
            if rec.split == "train" and pair not in seen:
                raise ValidationError(
                    f"record {rec.path}: train image labeled with held-out pair {pair}")
            if rec.split == "val" and pair not in self.split.val_pairs:
                raise ValidationError(
                    f"record {rec.path}: val image labeled with non-val pair {pair}")
            if rec.split == "test" and pair not in seen | self.split.test_pairs:
                raise ValidationError(
                    f"record {rec.path}: test image labeled with unknown pair {pair}")
        return self

    def records_for(self, split):
        return [r for r in self.records if r.split == split]


def _pairs_to_json(pairs):
    return sorted([list(p) for p in pairs])


def manifest_to_dict(m: DatasetManifest) -> dict:
    return {
        "version": m.version,
        "seed": m.seed,
        "image_size": m.image_size,
        "vocabulary": {"objects": list(m.vocabulary.objects),
                       "attributes": list(m.vocabulary.attributes)},
        "splits": {"train_pairs": _pairs_to_json(m.split.train_pairs),
                   "val_pairs": _pairs_to_json(m.split.val_pairs),
                   "test_pairs": _pairs_to_json(m.split.test_pairs)},
        "records": [r.to_json() for r in m.records],
    }


def manifest_from_dict(data: dict) -> DatasetManifest:
    required = {"version", "seed", "image_size", "vocabulary", "splits", "records"}
    missing = required - set(data)
    if missing:
        raise ValidationError(f"manifest missing keys: {sorted(missing)}")
    if data["version"] != MANIFEST_VERSION:
        raise ValidationError(f"unsupported manifest version {data['version']!r}")
    vocab = Vocabulary(objects=data["vocabulary"]["objects"],
                       attributes=data["vocabulary"]["attributes"])
    sp = data["splits"]
    split = PairSplit(train_pairs=frozenset(map(tuple, sp["train_pairs"])),
                      test_pairs=frozenset(map(tuple, sp["test_pairs"])),
                      val_pairs=frozenset(map(tuple, sp.get("val_pairs", []))))
    records = [SampleRecord.from_json(r) for r in data["records"]]
    return DatasetManifest(vocabulary=vocab, split=split, records=records,
                           seed=int(data["seed"]), image_size=int(data["image_size"]),
                           version=int(data["version"])).validate()


def write_manifest(manifest: DatasetManifest, root) -> str:
    manifest.validate()
    path = os.path.join(root, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(root, check_images=True) -> DatasetManifest:
    path = os.path.join(root, "manifest.json")
    if not os.path.isfile(path):
        raise MissingArtifactError(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    manifest = manifest_from_dict(data)
    if check_images:
        for rec in manifest.records:
            img_path = os.path.join(root, rec.path)
            if not os.path.isfile(img_path):
                raise MissingArtifactError(f"manifest references missing image {img_path}")
    return manifest


def save_image(image, path):
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(root, record, dtype=np.float32):
    path = os.path.join(root, record.path)
    if not os.path.isfile(path):
        raise MissingArtifactError(f"missing image {path}")
    arr = np.asarray(Image.open(path).convert("RGB"))
    if dtype == np.uint8:
        return arr
    return arr.astype(dtype) / 255.0


def load_split_arrays(root, manifest, split, include_boxes=False):
    """Images (N,H,W,3 uint8) + labels (N,2). Boxes only on explicit request,
    and intended for diagnostics; training code must not pass include_boxes."""
    recs = manifest.records_for(split)
    if not recs:
        raise ValidationError(f"dataset at {root} has no {split!r} records")
    images = np.stack([load_image(root, r, dtype=np.uint8) for r in recs])
    labels = np.array([[r.attribute, r.object] for r in recs], dtype=np.int64)
    if include_boxes:
        boxes = np.array([r.object_box for r in recs], dtype=np.float64)
        return images, labels, boxes
    return images, labels


def _sample_records(rng, tag, count, pair_pool, dcfg, start_seed_labels):
    out = []
    pool = sorted(pair_pool)
    for idx in range(count):
        a, o = pool[int(rng.integers(len(pool)))]
        clutter = int(rng.integers(dcfg.clutter_min, dcfg.clutter_max + 1))
        scene_seed = derive_seed(*start_seed_labels, tag, idx)
        out.append((tag, idx, (a, o), clutter, scene_seed))
    return out


def generate_dataset(dcfg, root, seed=None) -> DatasetManifest:
    """Render a full dataset under `root` and write its manifest."""
    seed = dcfg.seed if seed is None else seed
    vocab = default_vocabulary(dcfg.num_attributes, dcfg.num_objects)
    split = build_split(vocab, dcfg.unseen_fraction, derive_seed(seed, "pairs"),
                        val_fraction=dcfg.val_fraction)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)

    plan = []
    rng = rng_for(seed, "dataset-plan")
    plan += _sample_records(rng, "train", dcfg.train_images, split.train_pairs, dcfg,
                            (seed, "scene"))
    if dcfg.val_images:
        if not split.val_pairs:
            raise ValidationError("val_images > 0 but the split holds no val pairs")
        plan += _sample_records(rng, "val", dcfg.val_images, split.val_pairs, dcfg,
                                (seed, "scene"))
    n_seen = int(round(dcfg.test_images * dcfg.test_seen_ratio))
    test_plan = _sample_records(rng, "test", n_seen, split.train_pairs, dcfg,
                                (seed, "scene"))
    more = _sample_records(rng, "test", dcfg.test_images - n_seen, split.test_pairs, dcfg,
                           (seed, "scene", "unseen"))
    for tag, idx, pair, clutter, sseed in more:
        test_plan.append((tag, idx + n_seen, pair, clutter, sseed))
    plan += test_plan

    records = []
    for tag, idx, pair, clutter, scene_seed in plan:
        sample = generate_scene(vocab, pair, clutter, scene_seed,
                                image_size=dcfg.image_size, max_clutter=dcfg.max_clutter)
        rel = os.path.join("images", f"{tag}_{idx:05d}.png")
        save_image(sample.image, os.path.join(root, rel))
        records.append(SampleRecord(path=rel, attribute=pair[0], object=pair[1],
                                    split=tag, clutter=clutter, scene_seed=scene_seed,
                                    object_box=sample.object_box))

    manifest = DatasetManifest(vocabulary=vocab, split=split, records=records,
                               seed=seed, image_size=dcfg.image_size)
    write_manifest(manifest, root)
    return manifest
