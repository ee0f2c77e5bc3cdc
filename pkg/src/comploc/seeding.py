"""Hierarchical, stage-scoped seed derivation.

Every stage (data generation, pretraining, classifier training, evaluation)
derives its own seed from the experiment base seed plus a stage label, so
paired runs that differ in one knob share identical randomness everywhere
else.
"""

import hashlib

import numpy as np
import torch


def derive_seed(base_seed: int, *labels) -> int:
    """Stable 63-bit seed from a base seed and a label path."""
    key = "/".join([str(int(base_seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(base_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *labels))


def seed_torch(base_seed: int, *labels) -> None:
    torch.manual_seed(derive_seed(base_seed, *labels))
