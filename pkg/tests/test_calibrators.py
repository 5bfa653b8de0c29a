import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metacal.binning import binned_ece
from metacal.calibrators import (
    ComposedMap,
    TemperatureModel,
    apply_temperature,
    calibrator_from_dict,
    fit_temperature,
    identity_calibrator,
)
from metacal.core import Dataset, TieBreakPolicy, validate_prob_vector
from metacal.errors import NonPositiveProbability, ValidationError
from metacal.binning import sup_binned_ece
from metacal.synthgen import GeneratorSpec, generate


def _argmax_set(p):
    return set(np.flatnonzero(p == p.max()))


def test_apply_examples():
    p = validate_prob_vector([0.8, 0.2])
    assert apply_temperature(TemperatureModel(1.0, 2), p) == p
    q = apply_temperature(TemperatureModel(2.0, 2), p).probs
    expected = np.sqrt([0.8, 0.2]) / np.sqrt([0.8, 0.2]).sum()
    np.testing.assert_allclose(q, expected, atol=1e-15)
    assert q[0] == pytest.approx(0.6667, abs=1e-4)
    flat = apply_temperature(TemperatureModel(100.0, 2), validate_prob_vector([0.9, 0.1])).probs
    assert abs(flat[0] - 0.5) < 0.02 and flat[0] > flat[1]


def test_zero_probability_rejected():
    with pytest.raises(NonPositiveProbability):
        apply_temperature(TemperatureModel(2.0, 2), validate_prob_vector([1.0, 0.0]))


def test_temperature_range():
    for T in (0.0, 1e-3, 101.0, float("nan")):
        with pytest.raises(ValidationError):
            TemperatureModel(T, 3)


def test_identity_examples():
    p = validate_prob_vector([0.3, 0.7])
    ident = identity_calibrator()
    assert ident.apply(p) == p and ident.accuracy_preserving
    ts = TemperatureModel(1.7, 2)
    np.testing.assert_array_equal(ComposedMap(ident, ts).apply(p).probs, ts.apply(p).probs)
    np.testing.assert_array_equal(ComposedMap(ts, ident).apply(p).probs, ts.apply(p).probs)
    data, _ = generate(GeneratorSpec(k=4, n=500, seed=2))
    after = data.with_probs(ident.apply_dataset(data))
    assert binned_ece(after).ece == binned_ece(data).ece


@pytest.mark.parametrize("T0", [2.5, 1.0])
def test_recovers_generative_temperature(T0):
    data, _ = generate(GeneratorSpec(k=10, n=50_000, distortion_temperature=1 / T0, seed=3))
    tol = 0.1 if T0 != 1.0 else 0.05
    assert abs(fit_temperature(data).T - T0) < tol


def test_clamps_to_lower_bound():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(200, 3))
    labels = z.argmax(axis=1)
    z[np.arange(200), labels] += 5.0
    data = Dataset.from_logits(z, labels)
    assert fit_temperature(data).T == 1e-2


def test_fit_is_order_invariant():
    data, _ = generate(GeneratorSpec(k=5, n=3000, seed=9))
    perm = np.random.default_rng(1).permutation(data.n)
    shuffled = Dataset(data.probs[perm], data.labels[perm])
    assert fit_temperature(shuffled).T == pytest.approx(fit_temperature(data).T, abs=1e-5)


def test_fit_from_probabilities_matches_logits():
    data, _ = generate(GeneratorSpec(k=5, n=3000, seed=4))
    probs_only = Dataset(data.probs, data.labels)
    assert fit_temperature(probs_only).T == pytest.approx(fit_temperature(data).T, abs=1e-4)


def test_serialization():
    m = TemperatureModel(1.234, 7)
    assert calibrator_from_dict(m.to_dict()) == m
    assert m.to_dict() == {"type": "temperature", "T": 1.234, "k": 7}


simplex_rows = st.integers(2, 8).flatmap(
    lambda k: arrays(np.float64, k, elements=st.floats(1e-3, 1.0))
).map(lambda a: a / a.sum())
temperatures = st.floats(1e-2, 1e2)


@given(simplex_rows, temperatures)
def test_argmax_preserved(p, T):
    q = TemperatureModel(T, p.size).apply_batch(p[None, :])[0]
    assert _argmax_set(p) <= _argmax_set(q)
    # Entries whose logs differ by more than the rounding noise of log p / T
    # stay strictly ordered, so the maximizing set is exactly preserved.
    logp = np.log(p)
    gap = np.sort(logp)[-1] - np.sort(logp)[-2]
    if gap > 1e-9 * max(1.0, T):
        assert _argmax_set(p) == _argmax_set(q)


@settings(max_examples=50)
@given(simplex_rows, temperatures)
def test_non_degenerate_output_confidence(p, T):
    if np.all(p == p[0]):
        return
    q = TemperatureModel(T, p.size).apply_batch(p[None, :])[0]
    assert 1 / p.size <= q.max() <= 1
    if np.ptp(np.log(p)) / T > 1e-9 and np.ptp(np.log(p)) / T < 30:
        assert 1 / p.size < q.max() < 1


@pytest.mark.parametrize("seed", range(5))
def test_lower_bound_witness(seed):
    data, _ = generate(GeneratorSpec(k=10, n=2000, seed=seed))
    ts = fit_temperature(data)
    cal = data.with_probs(ts.apply_dataset(data))
    acc = data.accuracy(TieBreakPolicy.lowest())
    assert acc < 1
    assert sup_binned_ece(cal, TieBreakPolicy.lowest()) > (1 - acc) / data.k


def test_fit_matches_bounded_scalar_oracle():
    from scipy.optimize import minimize_scalar

    from metacal.calibrators import temperature_nll

    data, _ = generate(GeneratorSpec(k=6, n=4000, distortion_temperature=0.7, seed=12))
    logp = data.log_probs()
    res = minimize_scalar(
        lambda lt: temperature_nll(logp, data.labels, np.exp(lt)),
        bounds=(np.log(1e-2), np.log(1e2)),
        method="bounded",
        options={"xatol": 1e-9},
    )
    assert np.log(fit_temperature(data).T) == pytest.approx(res.x, abs=1e-4)
