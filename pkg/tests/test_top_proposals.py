import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from comploc.errors import ValidationError
from comploc.regions import extract_top_proposals


def test_example_selection():
    obj = torch.tensor([0.1, 0.9, 0.5])
    feats = torch.arange(6.0).reshape(3, 2)
    top, scores = extract_top_proposals(obj, feats, 2)
    torch.testing.assert_close(scores, torch.tensor([0.9, 0.5]))
    torch.testing.assert_close(top, feats[[1, 2]])


def test_full_selection_sorted():
    obj = torch.tensor([0.3, 0.1, 0.8, 0.5])
    feats = torch.rand(4, 3)
    top, scores = extract_top_proposals(obj, feats, 4)
    torch.testing.assert_close(scores, torch.tensor([0.8, 0.5, 0.3, 0.1]))
    torch.testing.assert_close(top, feats[[2, 3, 0, 1]])
    assert (scores[:-1] >= scores[1:]).all()


def test_all_equal_scores_take_first_indices():
    obj = torch.full((6,), 0.25)
    feats = torch.arange(12.0).reshape(6, 2)
    top, scores = extract_top_proposals(obj, feats, 3)
    torch.testing.assert_close(top, feats[:3])


def test_r_out_of_range():
    obj = torch.rand(5)
    feats = torch.rand(5, 2)
    with pytest.raises(ValidationError):
        extract_top_proposals(obj, feats, 6)
    with pytest.raises(ValidationError):
        extract_top_proposals(obj, feats, 0)


def test_batched_selection_with_boxes():
    obj = torch.tensor([[0.2, 0.9], [0.7, 0.1]])
    feats = torch.rand(2, 2, 3)
    boxes = torch.rand(2, 2, 4)
    top, scores, bx = extract_top_proposals(obj, feats, 1, boxes=boxes)
    torch.testing.assert_close(top[0, 0], feats[0, 1])
    torch.testing.assert_close(top[1, 0], feats[1, 0])
    torch.testing.assert_close(bx[0, 0], boxes[0, 1])


def brute_force_top(scores, r):
    order = np.argsort(-np.asarray(scores), kind="stable")
    return order[:r]


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_matches_brute_force_argsort(data):
    n = data.draw(st.integers(1, 50))
    r = data.draw(st.integers(1, n))
    # coarse grid of values forces plenty of ties
    vals = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    scores = torch.tensor(vals, dtype=torch.float32) / 5.0
    feats = torch.arange(n, dtype=torch.float32).unsqueeze(-1)
    top, out_scores = extract_top_proposals(scores, feats, r)
    want = brute_force_top(scores.numpy(), r)
    np.testing.assert_array_equal(top.squeeze(-1).long().numpy(), want)
