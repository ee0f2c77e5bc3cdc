import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from comploc.config import LfeConfig
from comploc.errors import ValidationError
from comploc.pretrain import (contrastive_loss, cosine_similarity, objectness_bce,
                              total_pretrain_loss)

finite_floats = st.floats(-10.0, 10.0, allow_nan=False)


def arr(x):
    return np.asarray(x, dtype=np.float64)


def test_cosine_hand_values():
    # integer inputs promote to float64, so these are exact
    assert float(cosine_similarity([1, 0], [1, 0])) == pytest.approx(1.0, abs=1e-9)
    assert float(cosine_similarity([1, 0], [0, 1])) == pytest.approx(0.0, abs=1e-9)
    assert float(cosine_similarity([1, 1], [1, 0])) == pytest.approx(
        1 / math.sqrt(2), abs=1e-9)


def test_cosine_symmetry_and_degenerate_zero():
    u, v = arr([0.3, -0.7, 2.0]), arr([1.5, 0.1, -0.2])
    assert float(cosine_similarity(u, v)) == pytest.approx(float(cosine_similarity(v, u)))
    assert float(cosine_similarity(arr([0.0, 0.0]), arr([1.0, 2.0]))) == 0.0
    assert float(cosine_similarity(arr([1e-13, 0.0]), arr([1.0, 0.0]))) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(finite_floats, min_size=1, max_size=8), st.data())
def test_cosine_bounds_property(u, data):
    v = data.draw(st.lists(finite_floats, min_size=len(u), max_size=len(u)))
    val = float(cosine_similarity(arr(u), arr(v)))
    assert abs(val) <= 1.0 + 1e-9


def test_contrastive_closed_forms():
    assert float(contrastive_loss([1], arr([1.0]), 1.0)) == pytest.approx(0.0, abs=1e-9)
    assert float(contrastive_loss([0], arr([0.0]), 1.0)) == pytest.approx(0.0, abs=1e-9)
    # negative at 0.5 contributes 0.25; positive at 0.6 contributes 1 - 0.36
    assert float(contrastive_loss([0, 1], arr([0.5, 0.6]), 1.0)) == pytest.approx(
        0.89, abs=1e-9)


def test_contrastive_margin_generalization():
    # margin 3: a positive at d=1 is still inside the margin
    assert float(contrastive_loss([1], arr([1.0]), 3.0)) == pytest.approx(2.0, abs=1e-9)
    assert float(contrastive_loss([1], arr([2.0]), 3.0)) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_contrastive_non_negative(data):
    n = data.draw(st.integers(1, 12))
    y = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    d = data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n))
    m = data.draw(st.floats(0, 7))
    assert float(contrastive_loss(y, arr(d), m)) >= 0.0


def test_contrastive_zero_iff_condition():
    # zero exactly when positives clear the margin and negatives sit at zero
    assert float(contrastive_loss([1, 0], arr([1.0, 0.0]), 1.0)) == 0.0
    assert float(contrastive_loss([1, 0], arr([0.9, 0.0]), 1.0)) > 0.0
    assert float(contrastive_loss([1, 0], arr([1.0, 0.1]), 1.0)) > 0.0


def test_contrastive_distance_mode_swaps_roles():
    # as a distance, positives shrink d and negatives must exceed the margin
    val = float(contrastive_loss([1, 0], arr([0.0, 1.5]), 1.0,
                                 distance_mode="one_minus_cosine"))
    assert val == pytest.approx(0.0, abs=1e-9)
    val = float(contrastive_loss([1], arr([0.5]), 1.0, distance_mode="one_minus_cosine"))
    assert val == pytest.approx(0.25, abs=1e-9)
    with pytest.raises(ValidationError):
        contrastive_loss([1], arr([0.5]), 1.0, distance_mode="euclidean")


def test_contrastive_batched_rows():
    out = contrastive_loss(torch.tensor([[0, 1], [1, 0]]),
                           torch.tensor([[0.5, 0.6], [1.0, 0.0]], dtype=torch.float64),
                           1.0)
    assert out.shape == (2,)
    np.testing.assert_allclose(out.numpy(), [0.89, 0.0], atol=1e-9)


def test_contrastive_length_mismatch():
    with pytest.raises(ValidationError):
        contrastive_loss([1, 0], arr([0.5]), 1.0)


def test_bce_perfect_match_limits():
    one = torch.tensor([1.0], dtype=torch.float64)
    assert float(objectness_bce(one - 1e-9, one)) < 1e-6
    assert float(objectness_bce(torch.tensor([1e-9], dtype=torch.float64), -one)) < 1e-6


def test_bce_closed_form_half():
    half = torch.tensor([0.5], dtype=torch.float64)
    val = float(objectness_bce(half, torch.zeros(1, dtype=torch.float64)))
    assert val == pytest.approx(math.log(2), abs=1e-9)


def test_bce_finite_at_exact_endpoints():
    p = torch.tensor([1.0, 0.0], dtype=torch.float64)
    val = objectness_bce(p, torch.tensor([-1.0, 1.0], dtype=torch.float64))
    assert torch.isfinite(val)


def test_bce_is_mean_over_anchors():
    single = float(objectness_bce(torch.full((1,), 0.5, dtype=torch.float64),
                                  torch.zeros(1, dtype=torch.float64)))
    many = float(objectness_bce(torch.full((10,), 0.5, dtype=torch.float64),
                                torch.zeros(10, dtype=torch.float64)))
    assert many == pytest.approx(single, abs=1e-12)


def test_bce_target_keeps_gradient_path():
    phi = torch.tensor([0.2, -0.3], requires_grad=True)
    val = objectness_bce(torch.tensor([0.4, 0.6]), phi)
    val.backward()
    assert phi.grad is not None and phi.grad.abs().sum() > 0


def test_total_loss_weighting():
    cfg = LfeConfig()
    assert cfg.alpha == 0.6 and cfg.beta == 0.4
    one = torch.tensor(1.0, dtype=torch.float64)
    assert float(total_pretrain_loss(one, one, cfg)) == pytest.approx(1.0, abs=1e-9)
    assert float(total_pretrain_loss(2 * one, 0 * one, cfg)) == pytest.approx(
        1.2, abs=1e-9)
    zero = LfeConfig(alpha=0.0, beta=0.0)
    assert float(total_pretrain_loss(5 * one, 3 * one, zero)) == 0.0
