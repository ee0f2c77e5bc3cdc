import dataclasses
import hashlib
import os

import numpy as np
import pytest

from comploc.config import DatasetConfig
from comploc.errors import MissingArtifactError, ValidationError
from comploc.manifest import (DatasetManifest, SampleRecord, generate_dataset,
                              load_manifest, load_split_arrays, manifest_from_dict,
                              manifest_to_dict, write_manifest)


def small_cfg(seed=0):
    return DatasetConfig(image_size=32, num_attributes=3, num_objects=3,
                         unseen_fraction=0.25, train_images=6, test_images=4,
                         clutter_max=1, seed=seed)


@pytest.fixture()
def small_root(tmp_path):
    root = str(tmp_path / "data")
    manifest = generate_dataset(small_cfg(), root)
    return root, manifest


def test_generated_manifest_proportions(small_root):
    root, m = small_root
    assert len(m.records_for("train")) == 6
    assert len(m.records_for("test")) == 4
    seen = sum(1 for r in m.records_for("test")
               if (r.attribute, r.object) in m.split.train_pairs)
    assert seen == 2  # test_seen_ratio 0.5


def test_round_trip_structural_identity(small_root):
    root, m = small_root
    loaded = load_manifest(root)
    assert loaded == m
    assert manifest_from_dict(manifest_to_dict(m)) == m


def test_generation_deterministic(tmp_path):
    paths = []
    for name in ("a", "b"):
        root = str(tmp_path / name)
        generate_dataset(small_cfg(), root)
        paths.append(root)
    h = [hashlib.sha256(open(os.path.join(p, "manifest.json"), "rb").read()).hexdigest()
         for p in paths]
    assert h[0] == h[1]
    img = "images/train_00000.png"
    b = [open(os.path.join(p, img), "rb").read() for p in paths]
    assert b[0] == b[1]


def test_split_violation_rejected(small_root):
    root, m = small_root
    bad_pair = sorted(m.split.test_pairs)[0]
    bad = dataclasses.replace(m.records[0], attribute=bad_pair[0], object=bad_pair[1])
    broken = DatasetManifest(vocabulary=m.vocabulary, split=m.split,
                             records=[bad] + m.records[1:], seed=m.seed,
                             image_size=m.image_size)
    with pytest.raises(ValidationError, match="held-out pair"):
        broken.validate()


def test_missing_image_listed(small_root):
    root, m = small_root
    victim = os.path.join(root, m.records[0].path)
    os.unlink(victim)
    with pytest.raises(MissingArtifactError, match=m.records[0].path.replace("\\", ".")):
        load_manifest(root)


def test_missing_manifest_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_manifest(str(tmp_path / "nowhere"))


def test_malformed_record_rejected():
    with pytest.raises(ValidationError, match="malformed"):
        SampleRecord.from_json({"path": "x.png"})


def test_load_split_arrays_shapes(small_root):
    root, m = small_root
    images, labels = load_split_arrays(root, m, "train")
    assert images.shape == (6, 32, 32, 3) and images.dtype == np.uint8
    assert labels.shape == (6, 2)
    out = load_split_arrays(root, m, "train", include_boxes=True)
    assert len(out) == 3 and out[2].shape == (6, 4)


def test_images_survive_png_round_trip(small_root):
    root, m = small_root
    images, _ = load_split_arrays(root, m, "train")
    # quantized to 8 bits, but structure intact: backgrounds light, shapes darker
    assert images.mean() > 100


def test_manifest_rejects_unknown_version(small_root):
    _, m = small_root
    data = manifest_to_dict(m)
    data["version"] = 99
    with pytest.raises(ValidationError, match="version"):
        manifest_from_dict(data)


def test_write_then_load_unconsumed_dir(tmp_path, small_root):
    root, m = small_root
    other = str(tmp_path / "copy")
    os.makedirs(other)
    write_manifest(m, other)
    with pytest.raises(MissingArtifactError):  # images were not copied
        load_manifest(other)
    loaded = load_manifest(other, check_images=False)
    assert loaded == m
