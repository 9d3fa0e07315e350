import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointlabel import losses
from jointlabel.autodiff import softmax
from jointlabel.errors import ConfigError, ContractError
from jointlabel.losses import Prior


def test_kl_half_half_is_ln2():
    assert losses.kl_classification_loss([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(math.log(2), abs=1e-9)


def test_kl_zero_label_entries_contribute_nothing():
    assert losses.kl_classification_loss([[0.0, 1.0]], [[1e-30, 1.0]]) == 0.0


def test_entropy_of_uniform_ten():
    assert losses.entropy_loss(np.full((3, 10), 0.1)) == pytest.approx(math.log(10), abs=1e-9)


def test_prior_three_quarter_split():
    # 0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25)
    expected = 0.5 * math.log(2 / 3) + 0.5 * math.log(2)
    assert expected == pytest.approx(0.143841, abs=1e-6)
    assert losses.prior_loss([[0.75, 0.25]], Prior.uniform(2)) == pytest.approx(0.143841, abs=1e-6)


def test_prior_uses_batch_mean():
    s = [[1.0, 0.0], [0.0, 1.0]]
    assert losses.prior_loss(s, Prior.uniform(2)) == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_hand_values():
    y = [[0, 1, 0], [1, 0, 0]]
    s = [[0.2, 0.6, 0.2], [0.4, 0.3, 0.3]]
    assert losses.cross_entropy_loss(y, s) == pytest.approx((-math.log(0.6) - math.log(0.4)) / 2, abs=1e-12)
    assert -math.log(0.6) == pytest.approx(0.510826, abs=1e-6)
    assert -math.log(0.4) == pytest.approx(0.916291, abs=1e-6)


def test_forward_corrected_identity_equals_cross_entropy(rng):
    s = softmax(rng.normal(size=(8, 4)))
    y = np.eye(4)[rng.integers(0, 4, 8)]
    assert losses.forward_corrected_loss(y, s, np.eye(4)) == pytest.approx(losses.cross_entropy_loss(y, s), abs=1e-12)
    np.testing.assert_allclose(losses.forward_corrected_grad(y, s, np.eye(4)), losses.cross_entropy_grad(y, s), atol=1e-12)


def test_forward_corrected_symmetric_two_class():
    t = [[0.6, 0.4], [0.4, 0.6]]
    assert losses.forward_corrected_loss([[1, 0]], [[1.0, 0.0]], t) == pytest.approx(0.510826, abs=1e-6)
    assert losses.forward_corrected_loss([[1, 0]], [[0.0, 1.0]], t) == pytest.approx(0.916291, abs=1e-6)


def test_forward_corrected_is_label_row_of_t_times_s():
    t = np.array([[0.8, 0.2], [0.3, 0.7]])
    # y^T T s for label 1: 0.3*0.9 + 0.7*0.1
    assert losses.forward_corrected_loss([[0, 1]], [[0.9, 0.1]], t) == pytest.approx(-math.log(0.34), abs=1e-12)


def test_contract_errors():
    with pytest.raises(ContractError):
        losses.kl_classification_loss([[1, 0]], [[0.5, 0.6]])
    with pytest.raises(ContractError):
        losses.cross_entropy_loss([[0.5, 0.5]], [[0.5, 0.5]])
    with pytest.raises(ContractError):
        losses.forward_corrected_loss([[1, 0]], [[0.5, 0.5]], [[0.5, 0.4], [0, 1]])
    with pytest.raises(ContractError):
        Prior([0.5, 0.6])
    with pytest.raises(ConfigError):
        losses.total_loss([[1, 0]], [[0.5, 0.5]], Prior.uniform(2), -1.0, 0.0)


def test_total_is_weighted_sum(rng):
    s = softmax(rng.normal(size=(5, 3)))
    y = softmax(rng.normal(size=(5, 3)))
    br = losses.total_loss(y, s, Prior.uniform(3), 1.2, 0.8)
    assert br.total == pytest.approx(br.l_c + 1.2 * br.l_p + 0.8 * br.l_e, abs=1e-14)


def _numeric(f, s, eps=1e-6):
    g = np.zeros_like(s)
    for idx in np.ndindex(s.shape):
        up, down = s.copy(), s.copy()
        up[idx] += eps
        down[idx] -= eps
        g[idx] = (f(up) - f(down)) / (2 * eps)
    return g


def test_prob_space_gradients_match_differences(rng):
    s = softmax(rng.normal(size=(4, 3)))
    y = softmax(rng.normal(size=(4, 3)))
    prior = Prior(np.array([0.5, 0.3, 0.2]))
    # the losses are smooth off the simplex too, so unconstrained differences apply
    pairs = [
        (lambda q: float((y * (np.log(y) - np.log(q))).sum() / 4), losses.kl_classification_grad(y, s)),
        (lambda q: float((prior.p * (np.log(prior.p) - np.log(q.mean(0)))).sum()), losses.prior_grad(s, prior)),
        (lambda q: float(-(q * np.log(q)).sum() / 4), losses.entropy_grad(s)),
    ]
    for f, analytic in pairs:
        np.testing.assert_allclose(analytic, _numeric(f, s), rtol=1e-6, atol=1e-8)


rows = arrays(np.float64, (6, 4), elements=st.floats(-8, 8)).map(softmax)


@given(rows, rows)
def test_losses_are_nonnegative(a, b):
    assert losses.kl_classification_loss(a, b) >= -1e-12
    assert losses.prior_loss(b, Prior.uniform(4)) >= -1e-12
    assert 0 <= losses.entropy_loss(b) <= math.log(4) + 1e-9


@given(rows)
def test_kl_to_itself_is_zero(a):
    assert losses.kl_classification_loss(a, a) == pytest.approx(0.0, abs=1e-9)
