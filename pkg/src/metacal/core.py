"""Domain types shared by every other module.

The toolkit only ever sees the classifier's outputs: a probability vector per
sample (or the logits behind it) and the ground-truth label. Batches are kept
as ``(n, k)`` arrays; the per-sample types exist for the scalar API and for
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np
from scipy.special import log_softmax

from .errors import (
    ClassCountMismatch,
    DegenerateK,
    LabelOutOfRange,
    NonFiniteInput,
    NonPositiveProbability,
    NotOnSimplex,
    ValidationError,
)

SIMPLEX_TOL = 1e-9

TieMode = Literal["seeded", "lowest", "expected"]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def validate_prob_matrix(raw, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate an ``(n, k)`` array of probability rows and renormalize them.

    Rows whose sum is within ``tol`` of one are divided by their sum so that
    they lie on the simplex up to rounding. Rows already summing to one up to
    the rounding noise of the sum itself are left untouched, which keeps
    repeated validation (and file round-trips) bit-exact.
    """
    arr = np.array(raw, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError("expected a non-empty 2-d array of probabilities", shape=list(arr.shape))
    k = arr.shape[1]
    if k < 2:
        raise DegenerateK(f"class count must be at least 2, got {k}", k=k)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("probabilities must be finite")
    bad = np.flatnonzero(np.any(arr < 0, axis=1) | np.any(arr > 1, axis=1))
    if bad.size:
        raise NotOnSimplex("probability entries must lie in [0, 1]", row=int(bad[0]))
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise NotOnSimplex(
            f"probabilities sum to {sums[bad[0]]!r}, not 1", row=int(bad[0]), sum=float(sums[bad[0]])
        )
    off = np.abs(sums - 1.0) > k * np.finfo(np.float64).eps
    arr[off] /= sums[off, None]
    return arr


@dataclass(frozen=True)
class ProbVector:
    """A point on the probability simplex with ``k >= 2`` classes."""

    probs: np.ndarray

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @property
    def confidence(self) -> float:
        return float(self.probs.max())

    def __len__(self) -> int:
        return self.k

    def __iter__(self) -> Iterator[float]:
        return iter(self.probs.tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbVector):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    @classmethod
    def uniform(cls, k: int) -> ProbVector:
        if k < 2:
            raise DegenerateK(f"class count must be at least 2, got {k}", k=k)
        return cls(_readonly(np.full(k, 1.0 / k)))


def validate_prob_vector(raw: Sequence[float]) -> ProbVector:
    """Check ``raw`` against the simplex and return it as a :class:`ProbVector`.

    Raises
    ------
    DegenerateK
        Fewer than two entries.
    NotOnSimplex
        A negative entry, or a sum further than 1e-9 from one.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("expected a non-empty 1-d sequence of probabilities")
    return ProbVector(_readonly(validate_prob_matrix(arr[None, :])[0]))


def softmax_from_logits(logits: Sequence[float]) -> ProbVector:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValidationError("expected a non-empty 1-d sequence of logits")
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("logits must be finite")
    if z.size < 2:
        raise DegenerateK(f"class count must be at least 2, got {z.size}", k=int(z.size))
    return validate_prob_vector(np.exp(log_softmax(z)))


@dataclass(frozen=True)
class TieBreakPolicy:
    """How ties for the largest probability are resolved.

    ``seeded`` draws uniformly among the maximizers from a generator seeded
    with ``seed``; ``lowest`` takes the smallest maximizing index;
    ``expected`` reports the lowest index but scores correctness as the
    probability that a uniform draw among the maximizers hits the label.
    """

    mode: TieMode = "seeded"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("seeded", "lowest", "expected"):
            raise ValidationError(f"unknown tie-break mode {self.mode!r}")

    @classmethod
    def seeded(cls, seed: int = 0) -> TieBreakPolicy:
        return cls("seeded", seed)

    @classmethod
    def lowest(cls) -> TieBreakPolicy:
        return cls("lowest")

    @classmethod
    def expected(cls) -> TieBreakPolicy:
        return cls("expected")


@dataclass(frozen=True)
class Prediction:
    class_index: int
    confidence: float
    tie_count: int


def predict_batch(probs: np.ndarray, policy: TieBreakPolicy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(class_index, confidence, tie_count)`` arrays for each row."""
    probs = np.asarray(probs, dtype=np.float64)
    conf = probs.max(axis=1)
    is_max = probs == conf[:, None]
    ties = is_max.sum(axis=1)
    classes = np.argmax(is_max, axis=1)
    if policy.mode == "seeded":
        tied = np.flatnonzero(ties > 1)
        if tied.size:
            rng = np.random.default_rng(policy.seed)
            keys = rng.random((tied.size, probs.shape[1]))
            keys[~is_max[tied]] = -1.0
            classes[tied] = np.argmax(keys, axis=1)
    return classes, conf, ties


def predict(p: ProbVector, policy: TieBreakPolicy | None = None) -> Prediction:
    policy = policy or TieBreakPolicy()
    classes, conf, ties = predict_batch(p.probs[None, :], policy)
    return Prediction(int(classes[0]), float(conf[0]), int(ties[0]))


def correctness(probs: np.ndarray, labels: np.ndarray, policy: TieBreakPolicy) -> np.ndarray:
    """Per-row correctness indicator of the top-label prediction.

    Values are 0/1 except under the ``expected`` policy, where a row whose
    label is among ``t`` tied maximizers scores ``1/t``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    classes, conf, ties = predict_batch(probs, policy)
    if policy.mode == "expected":
        hit = probs[np.arange(len(labels)), labels] == conf
        return np.where(hit, 1.0 / ties, 0.0)
    return (classes == labels).astype(np.float64)


@dataclass(frozen=True)
class LabeledSample:
    prob: ProbVector
    label: int

    def __post_init__(self) -> None:
        if not 0 <= self.label < self.prob.k:
            raise LabelOutOfRange(f"label {self.label} outside [0, {self.prob.k})", label=self.label)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Classifier outputs paired with labels.

    ``probs`` is an ``(n, k)`` array of simplex rows and ``labels`` holds
    0-based class indices. When the source carried logits they are kept in
    ``logits`` so log-probabilities stay finite where the softmax underflows.
    """

    probs: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...] | None = None
    logits: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        probs = _readonly(validate_prob_matrix(self.probs))
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
            raise ValidationError("labels must be 1-d with one entry per row", n=probs.shape[0])
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise ValidationError("labels must be integers")
            labels = as_int
        labels = labels.astype(np.int64)
        bad = np.flatnonzero((labels < 0) | (labels >= probs.shape[1]))
        if bad.size:
            raise LabelOutOfRange(
                f"label {labels[bad[0]]} outside [0, {probs.shape[1]})", row=int(bad[0])
            )
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", _readonly(labels))
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != probs.shape[0]:
                raise ValidationError("ids must have one entry per row")
            object.__setattr__(self, "ids", ids)
        if self.logits is not None:
            logits = np.array(self.logits, dtype=np.float64)
            if logits.shape != probs.shape:
                raise ClassCountMismatch("logits and probabilities differ in shape")
            if not np.all(np.isfinite(logits)):
                raise NonFiniteInput("logits must be finite")
            object.__setattr__(self, "logits", _readonly(logits))

    @classmethod
    def from_logits(cls, logits, labels, ids=None) -> Dataset:
        z = np.asarray(logits, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] == 0:
            raise ValidationError("expected a non-empty 2-d array of logits")
        if not np.all(np.isfinite(z)):
            raise NonFiniteInput("logits must be finite")
        if z.shape[1] < 2:
            raise DegenerateK(f"class count must be at least 2, got {z.shape[1]}")
        return cls(np.exp(log_softmax(z, axis=1)), labels, ids, logits=z)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample]) -> Dataset:
        if not samples:
            raise ValidationError("dataset must be non-empty")
        ks = {s.prob.k for s in samples}
        if len(ks) != 1:
            raise ClassCountMismatch("samples have differing class counts", ks=sorted(ks))
        return cls(np.stack([s.prob.probs for s in samples]), [s.label for s in samples])

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(ProbVector(self.probs[i]), int(self.labels[i]))

    def __iter__(self) -> Iterator[LabeledSample]:
        return (self[i] for i in range(self.n))

    @property
    def samples(self) -> list[LabeledSample]:
        return list(self)

    def log_probs(self) -> np.ndarray:
        """Log-probabilities, exact up to a per-row constant."""
        if self.logits is not None:
            return log_softmax(self.logits, axis=1)
        if np.any(self.probs <= 0):
            raise NonPositiveProbability(
                "probabilities must be strictly positive to recover logits",
                row=int(np.flatnonzero(np.any(self.probs <= 0, axis=1))[0]),
            )
        return np.log(self.probs)

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        ids = None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[index])
        logits = None if self.logits is None else self.logits[index]
        return Dataset(self.probs[index], self.labels[index], ids, logits=logits)

    def with_probs(self, probs: np.ndarray) -> Dataset:
        """Same labels and ids, new probability rows (logits dropped)."""
        return Dataset(probs, self.labels, self.ids)

    def predictions(self, policy: TieBreakPolicy) -> np.ndarray:
        return predict_batch(self.probs, policy)[0]

    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def correct(self, policy: TieBreakPolicy) -> np.ndarray:
        return correctness(self.probs, self.labels, policy)

    def accuracy(self, policy: TieBreakPolicy) -> float:
        return float(self.correct(policy).mean())
