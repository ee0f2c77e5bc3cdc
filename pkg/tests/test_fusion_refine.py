import dataclasses
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from comploc.classifier import (CompositionClassifier, classify, fuse_proposals,
                                pair_score, refine)
from comploc.errors import ValidationError

from conftest import tiny_config


def t64(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def test_fuse_zero_weights_is_uniform_mean():
    feats = t64([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = fuse_proposals(feats, torch.zeros(3))
    np.testing.assert_allclose(out.numpy(), [3.0, 4.0], atol=1e-9)


def test_fuse_large_weight_saturates_to_one_row():
    feats = t64([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    w = torch.tensor([30.0, 0.0, 0.0])
    out = fuse_proposals(feats, w)
    np.testing.assert_allclose(out.numpy(), [1.0, 2.0], atol=1e-9)


def test_fuse_batched_matches_loop():
    g = torch.Generator().manual_seed(3)
    feats = torch.randn(4, 5, 7, generator=g, dtype=torch.float64)
    w = torch.randn(5, generator=g, dtype=torch.float64)
    batched = fuse_proposals(feats, w)
    for b in range(4):
        np.testing.assert_allclose(batched[b].numpy(),
                                   fuse_proposals(feats[b], w).numpy(), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_fuse_stays_in_convex_hull(data):
    r = data.draw(st.integers(1, 6))
    vals = data.draw(st.lists(st.floats(-5, 5), min_size=r, max_size=r))
    ws = data.draw(st.lists(st.floats(-10, 10), min_size=r, max_size=r))
    feats = t64([[v] for v in vals])
    out = float(fuse_proposals(feats, t64(ws)))
    assert min(vals) - 1e-9 <= out <= max(vals) + 1e-9


def test_fuse_weight_count_mismatch():
    with pytest.raises(ValidationError):
        fuse_proposals(t64([[1.0], [2.0]]), torch.zeros(3))


def test_refine_multiply_hand_value():
    out = refine(t64([1.0, 2.0]), t64([[3.0, 4.0]]), "multiply")
    np.testing.assert_allclose(out.numpy(), [[3.0, 8.0]], atol=1e-12)


def test_refine_add_hand_value():
    out = refine(t64([1.0, 2.0]), t64([[3.0, 4.0]]), "add")
    np.testing.assert_allclose(out.numpy(), [[4.0, 6.0]], atol=1e-12)


def test_refine_multiply_zero_visual_is_zero():
    out = refine(torch.zeros(3, dtype=torch.float64), t64([[1.0, 2.0, 3.0]]), "multiply")
    assert torch.count_nonzero(out) == 0


def test_refine_concat_doubles_width():
    out = refine(t64([1.0, 2.0]), t64([[3.0, 4.0], [5.0, 6.0]]), "concat")
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out.numpy(), [[1, 2, 3, 4], [1, 2, 5, 6]], atol=0)


def test_refine_batched_shapes():
    v = torch.randn(5, 8, dtype=torch.float64)
    s = torch.randn(3, 8, dtype=torch.float64)
    assert refine(v, s, "multiply").shape == (5, 3, 8)
    assert refine(v, s, "add").shape == (5, 3, 8)
    assert refine(v, s, "concat").shape == (5, 3, 16)


def test_refine_multiply_is_bilinear():
    v = torch.randn(6, dtype=torch.float64)
    s = torch.randn(4, 6, dtype=torch.float64)
    np.testing.assert_allclose(refine(2.5 * v, s, "multiply").numpy(),
                               (2.5 * refine(v, s, "multiply")).numpy(), atol=1e-12)


def test_refine_rejects_bad_mode_and_width():
    with pytest.raises(ValidationError):
        refine(t64([1.0, 2.0]), t64([[3.0, 4.0]]), "subtract")
    with pytest.raises(ValidationError):
        refine(t64([1.0, 2.0, 3.0]), t64([[3.0, 4.0]]), "multiply")


def test_classify_softmax_properties():
    dec = torch.nn.Linear(1, 1)
    with torch.no_grad():
        dec.weight.fill_(1.0)
        dec.bias.fill_(0.0)
    refined = torch.tensor([[0.0], [math.log(3.0)]])
    probs, logits = classify(refined, dec)
    np.testing.assert_allclose(probs.detach().numpy(), [0.25, 0.75], atol=1e-6)
    np.testing.assert_allclose(logits.detach().numpy(), [0.0, math.log(3.0)], atol=1e-6)
    assert float(probs.detach().sum()) == pytest.approx(1.0, abs=1e-6)


def test_pair_score_hand_values():
    scores = pair_score(t64([0.6, 0.4]), t64([0.8, 0.2]), [(0, 0), (1, 0), (1, 1)])
    assert scores[(0, 0)] == pytest.approx(math.log(0.48), abs=1e-9)
    assert scores[(1, 0)] == pytest.approx(math.log(0.32), abs=1e-9)
    assert scores[(0, 0)] > scores[(1, 0)] > scores[(1, 1)]


def test_pair_score_zero_prob_clamped_finite():
    scores = pair_score(t64([1.0, 0.0]), t64([1.0, 0.0]), [(1, 1)])
    assert math.isfinite(scores[(1, 1)])
    assert scores[(1, 1)] == pytest.approx(2 * math.log(1e-12), rel=1e-9)


def test_pair_score_empty_candidates():
    with pytest.raises(ValidationError):
        pair_score(t64([1.0]), t64([1.0]), [])


def _tables(cfg, gen):
    c = cfg.encoder.channels
    return (torch.randn(cfg.dataset.num_attributes, c, generator=gen),
            torch.randn(cfg.dataset.num_objects, c, generator=gen))


@pytest.mark.parametrize("mode", ["multiply", "add", "concat"])
def test_classifier_forward_shapes(mode):
    cfg = tiny_config(0)
    cfg = dataclasses.replace(cfg, cc=dataclasses.replace(cfg.cc, refinement=mode))
    model = CompositionClassifier(cfg)
    g = torch.Generator().manual_seed(0)
    vis = torch.randn(5, cfg.cc.top_r, cfg.encoder.channels, generator=g)
    attr_logits, obj_logits = model(vis, _tables(cfg, g))
    assert attr_logits.shape == (5, cfg.dataset.num_attributes)
    assert obj_logits.shape == (5, cfg.dataset.num_objects)


def test_classifier_whole_image_input_contract():
    cfg = tiny_config(0)
    cfg = dataclasses.replace(cfg, cc=dataclasses.replace(cfg.cc,
                                                          feature_source="whole_image"))
    model = CompositionClassifier(cfg)
    g = torch.Generator().manual_seed(1)
    pooled = torch.randn(3, cfg.encoder.channels, generator=g)
    attr_logits, _ = model(pooled, _tables(cfg, g))
    assert attr_logits.shape == (3, cfg.dataset.num_attributes)
    with pytest.raises(ValidationError):
        model(pooled.unsqueeze(1), _tables(cfg, g))
