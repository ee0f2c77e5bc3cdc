import numpy as np
import pytest
import torch

from comploc.config import (CcConfig, DatasetConfig, EncoderConfig, EvalConfig,
                            ExperimentConfig, LfeConfig)
from comploc.manifest import generate_dataset


def tiny_config(seed=0, **dataset_kw):
    """Small everything: 64px images, 4x4 vocabulary, thin networks."""
    dkw = dict(image_size=64, num_attributes=4, num_objects=4, unseen_fraction=0.25,
               train_images=48, test_images=24, clutter_max=2, seed=seed)
    dkw.update(dataset_kw)
    return ExperimentConfig(
        dataset=DatasetConfig(**dkw),
        encoder=EncoderConfig(channels=32, base_width=8, text_hidden=32),
        lfe=LfeConfig(lr=1e-3, num_pseudo_labels=6, epochs=2, early_stop_epochs=2,
                      batch_size=16),
        cc=CcConfig(top_r=4, epochs=2, batch_size=16),
        eval=EvalConfig(sweep_points=11),
        seed=seed).validate()


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_cfg):
    root = tmp_path_factory.mktemp("tinydata")
    manifest = generate_dataset(tiny_cfg.dataset, str(root))
    return str(root), manifest


@pytest.fixture(autouse=True)
def _fixed_torch_state():
    torch.manual_seed(0)
    np.random.seed(0)
