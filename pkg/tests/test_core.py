import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metacal.core import (
    Dataset,
    LabeledSample,
    ProbVector,
    TieBreakPolicy,
    correctness,
    predict,
    predict_batch,
    softmax_from_logits,
    validate_prob_vector,
)
from metacal.errors import (
    DegenerateK,
    LabelOutOfRange,
    NonFiniteInput,
    NonPositiveProbability,
    NotOnSimplex,
)

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = st.lists(finite, min_size=2, max_size=12)


def test_validate_examples():
    p = validate_prob_vector([0.5, 0.5])
    assert p.k == 2
    with pytest.raises(NotOnSimplex):
        validate_prob_vector([0.5, 0.6])
    with pytest.raises(DegenerateK):
        validate_prob_vector([1.0])


def test_validate_rejects_negative_and_nonfinite():
    with pytest.raises(NotOnSimplex):
        validate_prob_vector([1.2, -0.2])
    with pytest.raises(NonFiniteInput):
        validate_prob_vector([np.nan, 1.0])


def test_within_tolerance_is_renormalized():
    p = validate_prob_vector([0.5 + 4e-10, 0.5])
    assert math.fsum(p.probs) == pytest.approx(1.0, abs=1e-15)
    assert p.probs[0] != 0.5 + 4e-10
    q = np.array([0.2, 0.7, 0.1])
    np.testing.assert_array_equal(validate_prob_vector(q).probs, q)
    with pytest.raises(NotOnSimplex):
        validate_prob_vector([0.5 + 1e-8, 0.5])


def test_softmax_examples():
    np.testing.assert_allclose(softmax_from_logits([0, 0, 0]).probs, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax_from_logits([math.log(2), 0]).probs, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_large_logits_against_mpmath():
    p = softmax_from_logits([1000, 0])
    mpmath.mp.dps = 50
    small = mpmath.exp(-1000) / (1 + mpmath.exp(-1000))
    assert p.probs[0] == pytest.approx(1.0, abs=1e-15)
    assert p.probs[1] == pytest.approx(float(small), rel=1e-12, abs=0)
    with pytest.raises(NonFiniteInput):
        softmax_from_logits([np.inf, 0])


def test_predict_examples():
    pr = predict(validate_prob_vector([0.2, 0.7, 0.1]), TieBreakPolicy.lowest())
    assert (pr.class_index, pr.confidence, pr.tie_count) == (1, 0.7, 1)
    pr = predict(validate_prob_vector([0.5, 0.5]), TieBreakPolicy.lowest())
    assert (pr.class_index, pr.tie_count) == (0, 2)
    u = ProbVector.uniform(3)
    picks = {predict(u, TieBreakPolicy.seeded(7)).class_index for _ in range(5)}
    assert len(picks) == 1


def test_seeded_ties_are_spread():
    probs = np.full((3000, 3), 1 / 3)
    classes, _, ties = predict_batch(probs, TieBreakPolicy.seeded(3))
    assert (ties == 3).all()
    counts = np.bincount(classes, minlength=3)
    assert counts.min() > 900


def test_expected_correctness_is_fractional():
    probs = np.array([[0.5, 0.5], [0.9, 0.1], [0.3, 0.7]])
    c = correctness(probs, np.array([1, 1, 1]), TieBreakPolicy.expected())
    np.testing.assert_allclose(c, [0.5, 0.0, 1.0])
    c4 = correctness(np.full((1, 4), 0.25), np.array([2]), TieBreakPolicy.expected())
    assert c4[0] == 0.25


@given(logit_vectors)
def test_softmax_never_errors_and_confidence_bound(z):
    p = softmax_from_logits(z)
    q = validate_prob_vector(p.probs)
    assert predict(q, TieBreakPolicy.lowest()).confidence >= 1 / q.k - 1e-15


@given(logit_vectors, st.integers(0, 2**32 - 1))
def test_seeded_predict_reproducible(z, seed):
    p = softmax_from_logits(np.round(z))
    pol = TieBreakPolicy.seeded(seed)
    assert predict(p, pol) == predict(p, pol)


@settings(max_examples=50)
@given(logit_vectors)
def test_prediction_attains_max(z):
    p = softmax_from_logits(np.round(np.asarray(z) / 10))
    for pol in (TieBreakPolicy.lowest(), TieBreakPolicy.seeded(1)):
        pr = predict(p, pol)
        assert p.probs[pr.class_index] == pr.confidence == p.probs.max()
        assert pr.tie_count == int((p.probs == p.probs.max()).sum())
    lowest = predict(p, TieBreakPolicy.lowest()).class_index
    assert lowest == int(np.argmax(p.probs))


def test_dataset_invariants():
    with pytest.raises(LabelOutOfRange):
        Dataset(np.array([[0.5, 0.5]]), [2])
    with pytest.raises(Exception):
        Dataset(np.empty((0, 2)), [])
    s = [LabeledSample(validate_prob_vector([0.3, 0.7]), 1), LabeledSample(validate_prob_vector([0.6, 0.4]), 1)]
    d = Dataset.from_samples(s)
    assert d.n == 2 and d.k == 2
    assert d.accuracy(TieBreakPolicy.lowest()) == 0.5
    assert d[0].label == 1
    with pytest.raises(ValueError):
        d.probs[0, 0] = 1.0


def test_log_probs_need_positive_probs():
    d = Dataset(np.array([[1.0, 0.0], [0.5, 0.5]]), [0, 1])
    with pytest.raises(NonPositiveProbability):
        d.log_probs()
    z = np.array([[2.0, -1.0, 0.0]])
    dl = Dataset.from_logits(z, [0])
    np.testing.assert_allclose(np.exp(dl.log_probs()), dl.probs)
