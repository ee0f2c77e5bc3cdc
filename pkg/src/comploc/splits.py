"""Seen/unseen pair splits over the attribute x object lattice.

Unseen (test) pairs are never trained; every individual attribute and object
must still occur in some train pair, otherwise that primitive is unlearnable.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .seeding import derive_seed

_RESTARTS = 64


@dataclass(frozen=True)
class PairSplit:
    train_pairs: frozenset
    test_pairs: frozenset
    val_pairs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "train_pairs", frozenset(map(tuple, self.train_pairs)))
        object.__setattr__(self, "test_pairs", frozenset(map(tuple, self.test_pairs)))
        object.__setattr__(self, "val_pairs", frozenset(map(tuple, self.val_pairs)))
        if not self.train_pairs:
            raise ValidationError("split has no train pairs")
        if self.train_pairs & self.test_pairs:
            raise ValidationError("train and test pairs overlap")
        if self.val_pairs & (self.train_pairs | self.test_pairs):
            raise ValidationError("val pairs overlap train or test")

    def check_against(self, vocab):
        for a, o in self.train_pairs | self.test_pairs | self.val_pairs:
            vocab.check_pair((a, o))
        return self

    def split_of(self, pair):
        pair = tuple(pair)
        if pair in self.train_pairs:
            return "train"
        if pair in self.test_pairs:
            return "test"
        if pair in self.val_pairs:
            return "val"
        return None


def _covered(train, num_attrs, num_objs):
    attrs = {a for a, _ in train}
    objs = {o for _, o in train}
    for a in range(num_attrs):
        if a not in attrs:
            return f"attribute {a}"
    for o in range(num_objs):
        if o not in objs:
            return f"object {o}"
    return None


def build_split(vocab, unseen_fraction, rng_seed, val_fraction=0.0):
    """Hold out ~unseen_fraction of all pairs while keeping primitive coverage."""
    num_attrs, num_objs = len(vocab.attributes), len(vocab.objects)
    total = num_attrs * num_objs
    if total < 4:
        raise ValidationError(f"need at least 4 pairs to split, vocabulary has {total}")
    if not (0.0 < unseen_fraction < 1.0):
        raise ValidationError(f"unseen_fraction must be in (0, 1), got {unseen_fraction}")
    if val_fraction < 0.0 or unseen_fraction + val_fraction >= 1.0:
        raise ValidationError("val_fraction invalid or leaves no train pairs")

    n_test = max(1, int(round(unseen_fraction * total)))
    n_val = int(round(val_fraction * total))
    # train must keep one pair in every lattice row and column
    if total - n_test - n_val < max(num_attrs, num_objs):
        raise ValidationError(
            f"cannot hold out {n_test}+{n_val} of {total} pairs and still cover "
            f"{num_attrs} attributes and {num_objs} objects")

    all_pairs = [(a, o) for a in range(num_attrs) for o in range(num_objs)]
    last_failure = None
    for attempt in range(_RESTARTS):
        rng = np.random.default_rng(derive_seed(rng_seed, "split", attempt))
        order = list(all_pairs)
        rng.shuffle(order)
        row = {a: num_objs for a in range(num_attrs)}
        col = {o: num_attrs for o in range(num_objs)}
        held = []
        for a, o in order:
            if len(held) == n_test + n_val:
                break
            # removing (a, o) must leave its row and column non-empty in train
            if row[a] > 1 and col[o] > 1:
                held.append((a, o))
                row[a] -= 1
                col[o] -= 1
        if len(held) == n_test + n_val:
            test = frozenset(held[:n_test])
            val = frozenset(held[n_test:])
            train = frozenset(all_pairs) - test - val
            missing = _covered(train, num_attrs, num_objs)
            if missing is None:
                return PairSplit(train_pairs=train, test_pairs=test, val_pairs=val)
            last_failure = missing
        else:
            train = frozenset(all_pairs) - frozenset(held)
            last_failure = _covered(train, num_attrs, num_objs) or "hold-out quota"
    raise ValidationError(
        f"no coverage-preserving split found after {_RESTARTS} restarts "
        f"(last blocker: {last_failure})")
