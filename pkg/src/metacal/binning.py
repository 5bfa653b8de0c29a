"""Binning schemes over [0, 1] and the binned top-label ECE estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import Dataset, TieBreakPolicy, correctness
from .errors import TooFewValues, ValidationError

DEFAULT_BINS = 15

BinKind = Literal["equal-width", "uniform-mass", "custom"]


@dataclass(frozen=True, eq=False)
class BinningScheme:
    """Interval partition of [0, 1].

    Bins are left-open and right-closed, except the first which also holds 0.
    A value sitting exactly on an interior edge therefore falls in the bin to
    its left.
    """

    edges: np.ndarray
    kind: BinKind = "custom"

    def __post_init__(self) -> None:
        edges = np.array(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2:
            raise ValidationError("a binning scheme needs at least two edges")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValidationError("edges must start at 0 and end at 1", edges=edges.tolist())
        if np.any(np.diff(edges) <= 0):
            raise ValidationError("edges must be strictly increasing", edges=edges.tolist())
        edges.flags.writeable = False
        object.__setattr__(self, "edges", edges)

    @classmethod
    def equal_width(cls, b: int = DEFAULT_BINS) -> BinningScheme:
        if b < 1:
            raise ValidationError(f"bin count must be positive, got {b}")
        return cls(np.linspace(0.0, 1.0, b + 1), "equal-width")

    @classmethod
    def single(cls) -> BinningScheme:
        return cls(np.array([0.0, 1.0]))

    @classmethod
    def uniform_mass(cls, values, b: int) -> BinningScheme:
        """Uniform-mass scheme on confidences, widened to cover [0, 1]."""
        inner = uniform_mass_edges(values, b)[1:-1]
        inner = np.unique(inner[(inner > 0) & (inner < 1)])
        return cls(np.concatenate([[0.0], inner, [1.0]]), "uniform-mass")

    @property
    def b(self) -> int:
        return self.edges.size - 1

    def assign(self, values) -> np.ndarray:
        """Bin index of each value in ``[0, b)``."""
        idx = np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side="left") - 1
        return np.clip(idx, 0, self.b - 1)

    def refine(self, extra_edges) -> BinningScheme:
        """Scheme with additional interior edges inserted."""
        extra = np.asarray(extra_edges, dtype=np.float64)
        extra = extra[(extra > 0) & (extra < 1)]
        return BinningScheme(np.unique(np.concatenate([self.edges, extra])))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "edges": self.edges.tolist()}


@dataclass(frozen=True)
class BinRow:
    lower: float
    upper: float
    count: int
    mean_confidence: float | None
    accuracy: float | None

    @property
    def gap(self) -> float:
        if not self.count:
            return 0.0
        return abs(self.accuracy - self.mean_confidence)


@dataclass(frozen=True)
class BinReport:
    bins: tuple[BinRow, ...]
    n: int
    ece: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ece": self.ece,
            "bins": [
                {
                    "lower": r.lower,
                    "upper": r.upper,
                    "count": r.count,
                    "mean_confidence": r.mean_confidence,
                    "accuracy": r.accuracy,
                }
                for r in self.bins
            ],
        }


def bin_report(confidence, correct, scheme: BinningScheme) -> BinReport:
    """Binned ECE from per-sample confidences and correctness indicators."""
    conf = np.asarray(confidence, dtype=np.float64)
    hits = np.asarray(correct, dtype=np.float64)
    n = conf.size
    if n == 0:
        raise ValidationError("cannot bin an empty sample")
    idx = scheme.assign(conf)
    counts = np.bincount(idx, minlength=scheme.b)
    conf_sum = np.bincount(idx, weights=conf, minlength=scheme.b)
    hit_sum = np.bincount(idx, weights=hits, minlength=scheme.b)
    rows = []
    ece = 0.0
    for j in range(scheme.b):
        c = int(counts[j])
        if c:
            mean_conf = conf_sum[j] / c
            acc = hit_sum[j] / c
            ece += abs(hit_sum[j] - conf_sum[j]) / n
        else:
            mean_conf = acc = None
        rows.append(BinRow(float(scheme.edges[j]), float(scheme.edges[j + 1]), c, mean_conf, acc))
    return BinReport(tuple(rows), n, float(ece))


def binned_ece(
    data: Dataset,
    scheme: BinningScheme | None = None,
    policy: TieBreakPolicy | None = None,
) -> BinReport:
    """Binned estimator of the top-label expected calibration error.

    ``ECE = sum_j (n_j / n) |acc_j - conf_j|`` over the bins of ``scheme``
    (15 equal-width bins by default). Empty bins contribute nothing.
    """
    scheme = scheme or BinningScheme.equal_width(DEFAULT_BINS)
    policy = policy or TieBreakPolicy()
    hits = correctness(data.probs, data.labels, policy)
    return bin_report(data.confidences(), hits, scheme)


def sup_ece(confidence, correct) -> float:
    conf = np.asarray(confidence, dtype=np.float64)
    return float(np.mean(np.abs(np.asarray(correct, dtype=np.float64) - conf)))


def sup_binned_ece(data: Dataset, policy: TieBreakPolicy | None = None) -> float:
    """Supremum of the binned ECE over interval partitions.

    It is attained by giving every sample its own bin, which reduces the
    estimator to the mean of ``|1(correct) - confidence|``.
    """
    policy = policy or TieBreakPolicy()
    return sup_ece(data.confidences(), correctness(data.probs, data.labels, policy))


def uniform_mass_split(n: int, b: int) -> np.ndarray:
    """End offsets of ``b`` contiguous groups over ``n`` sorted items.

    Group sizes differ by at most one; the larger groups come first.
    """
    if b < 1:
        raise ValidationError(f"bin count must be positive, got {b}")
    if n < b:
        raise TooFewValues(f"{n} values cannot fill {b} bins", n=n, b=b)
    sizes = np.full(b, n // b)
    sizes[: n % b] += 1
    return np.cumsum(sizes)


def uniform_mass_edges(values, b: int) -> np.ndarray:
    """Edges of a uniform-mass partition of the range of ``values``.

    Returns ``b + 1`` edges: the minimum, the midpoints between the largest
    value of each group and the smallest of the next, and the maximum. With
    distinct values every bin holds ``floor(n/b)`` or ``ceil(n/b)`` of them.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise TooFewValues("no values to bin", n=0, b=b)
    ends = uniform_mass_split(v.size, b)
    mids = 0.5 * (v[ends[:-1] - 1] + v[ends[:-1]])
    return np.concatenate([[v[0]], mids, [v[-1]]])
