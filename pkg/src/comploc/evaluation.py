"""Generalized evaluation protocol over seen and unseen pairs.

Candidate pairs are the closed world train ∪ test pairs. A single calibration
scalar added to every unseen-pair score sweeps operating points from
all-seen to all-unseen; the seen-vs-unseen accuracy curve is summarized by
its trapezoidal area. Primitive accuracies are read off the uncalibrated
argmax. All computations are pure numpy over immutable score matrices.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class EvalInstances:
    scores: np.ndarray  # (N, P) pair scores, columns follow candidate_pairs
    candidate_pairs: list  # P (attr, obj) tuples, lexicographically sorted
    truth: np.ndarray  # (N,) candidate index of the true pair
    seen_mask: np.ndarray  # (N,) bool, True when the true pair is a train pair
    unseen_cols: np.ndarray  # (P,) bool, True for columns that are test pairs

    def __post_init__(self):
        if list(self.candidate_pairs) != sorted(map(tuple, self.candidate_pairs)):
            raise ValidationError("candidate pairs must be lexicographically sorted")
        n, p = self.scores.shape
        if not (len(self.truth) == len(self.seen_mask) == n and len(self.unseen_cols) == p):
            raise ValidationError("instance array lengths disagree")
        if n == 0:
            raise ValidationError("no evaluation instances")


def make_instances(attr_probs, obj_probs, labels, split):
    """Score matrix from per-primitive probabilities and a pair split.

    attr_probs (N, i), obj_probs (N, j), labels (N, 2) as (attr, obj) indices.
    score(a, o) = log p_a + log p_o restricted to train ∪ test pairs.
    """
    candidates = sorted(split.train_pairs | split.test_pairs)
    if not candidates:
        raise ValidationError("empty candidate pair set")
    la = np.log(np.clip(np.asarray(attr_probs, dtype=np.float64), 1e-12, None))
    lo = np.log(np.clip(np.asarray(obj_probs, dtype=np.float64), 1e-12, None))
    cols_a = np.array([a for a, _ in candidates])
    cols_o = np.array([o for _, o in candidates])
    scores = la[:, cols_a] + lo[:, cols_o]
    index = {pair: k for k, pair in enumerate(candidates)}
    truth = np.empty(len(labels), dtype=np.int64)
    for row, (a, o) in enumerate(map(tuple, np.asarray(labels))):
        if (a, o) not in index:
            raise ValidationError(f"true pair {(a, o)} not in the candidate set")
        truth[row] = index[(a, o)]
    seen = np.array([candidates[t] in split.train_pairs for t in truth])
    unseen_cols = np.array([pair in split.test_pairs for pair in candidates])
    return EvalInstances(scores=scores, candidate_pairs=candidates, truth=truth,
                         seen_mask=seen, unseen_cols=unseen_cols)


def _predict(inst, c):
    shifted = inst.scores + c * inst.unseen_cols[None, :]
    # argmax takes the first maximum, i.e. the lexicographically smallest pair
    return np.argmax(shifted, axis=1)


def calibrated_top1(inst, c):
    """(seen_top1, unseen_top1) with calibration c added to unseen-pair scores."""
    if not inst.seen_mask.any() or inst.seen_mask.all():
        raise ValidationError("need at least one seen and one unseen instance")
    pred = _predict(inst, c)
    hit = pred == inst.truth
    return float(hit[inst.seen_mask].mean()), float(hit[~inst.seen_mask].mean())


def sweep_curve(inst, num_points):
    """[(c, seen_top1, unseen_top1)] over c in [-Δ, Δ], Δ = max score gap + 1.

    The extra +1 makes both endpoints strictly saturated (no ties): unseen
    accuracy is 0 at the left end, seen accuracy 0 at the right.
    """
    if num_points < 2:
        raise ValidationError("sweep needs at least 2 points")
    gap = float((inst.scores.max(axis=1) - inst.scores.min(axis=1)).max())
    delta = gap + 1.0
    curve = []
    for c in np.linspace(-delta, delta, num_points):
        seen, unseen = calibrated_top1(inst, float(c))
        curve.append((float(c), seen, unseen))
    return curve


def auc(curve):
    """Trapezoidal area of seen_top1 over unseen_top1, duplicate x -> max y."""
    if len(curve) < 2:
        raise ValidationError("AUC needs at least 2 curve points")
    best = {}
    for _, seen, unseen in curve:
        best[unseen] = max(best.get(unseen, 0.0), seen)
    xs = sorted(best)
    if len(xs) < 2:
        return 0.0
    ys = [best[x] for x in xs]
    return float(np.trapezoid(ys, xs))


def primitive_accuracy(inst):
    """(object_top1, attribute_top1) of the uncalibrated argmax pair."""
    pred = _predict(inst, 0.0)
    pairs = np.asarray(inst.candidate_pairs)
    pred_a, pred_o = pairs[pred, 0], pairs[pred, 1]
    true_a, true_o = pairs[inst.truth, 0], pairs[inst.truth, 1]
    return float((pred_o == true_o).mean()), float((pred_a == true_a).mean())


@dataclass
class GczslReport:
    auc: float
    auc_pct: float
    best_seen: float
    best_unseen: float
    object_top1: float
    attribute_top1: float
    num_instances: int
    num_seen: int
    num_unseen: int
    curve: list
    config_hash: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"auc": self.auc, "auc_pct": self.auc_pct,
                "best_seen": self.best_seen, "best_unseen": self.best_unseen,
                "object_top1": self.object_top1, "attribute_top1": self.attribute_top1,
                "num_instances": self.num_instances, "num_seen": self.num_seen,
                "num_unseen": self.num_unseen, "curve": [list(p) for p in self.curve],
                "config_hash": self.config_hash, "seed": self.seed, "extra": self.extra}


def compute_report(inst, sweep_points, config_hash="", seed=0):
    curve = sweep_curve(inst, sweep_points)
    area = auc(curve)
    object_top1, attribute_top1 = primitive_accuracy(inst)
    return GczslReport(
        auc=area, auc_pct=100.0 * area,
        best_seen=max(p[1] for p in curve),
        best_unseen=max(p[2] for p in curve),
        object_top1=object_top1, attribute_top1=attribute_top1,
        num_instances=len(inst.truth), num_seen=int(inst.seen_mask.sum()),
        num_unseen=int((~inst.seen_mask).sum()), curve=curve,
        config_hash=config_hash, seed=seed)


def save_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_curve_csv(curve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["calibration", "seen_top1", "unseen_top1"])
        for c, seen, unseen in curve:
            writer.writerow([repr(c), repr(seen), repr(unseen)])
