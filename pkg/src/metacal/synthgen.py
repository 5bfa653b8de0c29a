"""Synthetic miscalibrated classifier with known ground truth.

Latent logits ``z ~ N(0, logit_scale^2)^k`` define the true conditional
``p* = softmax(z)``; labels are drawn from ``p*``. The emitted "model output"
is ``softmax(z / T_d)``: ``T_d = 1`` is perfectly calibrated, ``T_d < 1``
overconfident. Temperature scaling with ``T = 1 / T_d`` recovers ``p*``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import entr, log_softmax

from .core import Dataset
from .errors import ValidationError

PROFILE_POINTS = 20


@dataclass(frozen=True)
class GeneratorSpec:
    k: int = 10
    n: int = 15000
    logit_scale: float = 4.0
    distortion_temperature: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValidationError(f"k must be at least 2, got {self.k}")
        if self.n < 1:
            raise ValidationError(f"n must be positive, got {self.n}")
        if not self.logit_scale > 0:
            raise ValidationError(f"logit_scale must be positive, got {self.logit_scale}")
        if not self.distortion_temperature > 0:
            raise ValidationError(f"distortion temperature must be positive, got {self.distortion_temperature}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorSpec:
        known = {f: d[f] for f in ("k", "n", "logit_scale", "distortion_temperature", "seed") if f in d}
        if "tdist" in d:
            known["distortion_temperature"] = d["tdist"]
        return cls(**known)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """What the generator knows and a real classifier would not.

    ``expected_correct`` is ``p*`` evaluated at the emitted prediction, i.e.
    the probability that each sample's prediction is right. The profile is a
    plug-in estimate of accuracy against output entropy on equal-width bins
    over ``[0, log k]`` (``nan`` where a bin is empty).
    """

    spec: GeneratorSpec
    true_probs: np.ndarray
    expected_correct: np.ndarray
    accuracy: float
    profile_entropy: np.ndarray
    profile_accuracy: np.ndarray

    def to_dict(self, include_probs: bool = False) -> dict:
        d = {
            "spec": self.spec.to_dict(),
            "population_accuracy": self.accuracy,
            "profile": {
                "entropy": self.profile_entropy.tolist(),
                "accuracy": [None if math.isnan(a) else a for a in self.profile_accuracy.tolist()],
            },
        }
        if include_probs:
            d["true_probs"] = self.true_probs.tolist()
        return d


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample_latent(spec: GeneratorSpec, n: int | None = None, rng: np.random.Generator | None = None):
    """``(emitted log-probs, true probs, labels)`` for ``n`` samples."""
    n = spec.n if n is None else n
    rng = rng or _rng(spec.seed)
    z = rng.normal(0.0, spec.logit_scale, size=(n, spec.k))
    true = np.exp(log_softmax(z, axis=1))
    u = rng.random(n)[:, None]
    labels = (np.cumsum(true, axis=1) < u).sum(axis=1)
    labels = np.minimum(labels, spec.k - 1)
    emitted = log_softmax(z / spec.distortion_temperature, axis=1)
    return emitted, true, labels


def accuracy_profile(scores, expected_correct, k: int, points: int = PROFILE_POINTS):
    edges = np.linspace(0.0, math.log(k), points + 1)
    idx = np.clip(np.searchsorted(edges, scores, side="left") - 1, 0, points - 1)
    counts = np.bincount(idx, minlength=points)
    sums = np.bincount(idx, weights=expected_correct, minlength=points)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return 0.5 * (edges[:-1] + edges[1:]), acc


def generate(spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    """Draw ``spec.n`` samples; identical ``spec`` gives an identical dataset."""
    emitted, true, labels = sample_latent(spec)
    data = Dataset.from_logits(emitted, labels)
    pred = np.argmax(emitted, axis=1)
    expected = true[np.arange(spec.n), pred]
    centers, acc = accuracy_profile(entr(data.probs).sum(axis=1), expected, spec.k)
    truth = GroundTruth(spec, true, expected, float(expected.mean()), centers, acc)
    return data, truth


def population_sample(spec: GeneratorSpec, size: int = 1_000_000, chunk: int = 200_000, seed: int | None = None):
    """Entropy scores and expected correctness for a large population draw.

    Used as the plug-in stand-in for population quantities such as the
    population miscoverage of a gate threshold.
    """
    rng = _rng(spec.seed if seed is None else seed)
    scores = np.empty(size)
    expected = np.empty(size)
    for start in range(0, size, chunk):
        m = min(chunk, size - start)
        emitted, true, _ = sample_latent(spec, m, rng)
        probs = np.exp(emitted)
        scores[start : start + m] = entr(probs).sum(axis=1)
        expected[start : start + m] = true[np.arange(m), np.argmax(emitted, axis=1)]
    return scores, expected
