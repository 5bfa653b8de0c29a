"""The binary accept/reject gate built by thresholding a ranking score.

Two ways to pick the threshold are provided:

* ``order_statistic_threshold`` caps the fraction of correctly classified
  inputs that get rejected (miscoverage control);
* ``fit_coverage_transform`` + ``invert_transform`` estimate accuracy among
  accepted inputs as a decreasing function of the threshold and invert it
  (coverage-accuracy control).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .binning import uniform_mass_split
from .errors import (
    EmptyNegatives,
    SchemaError,
    ToleranceTooSmall,
    TooFewValues,
    UnreachableAccuracy,
    ValidationError,
)


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"

    @property
    def sign(self) -> int:
        """-1 for accept, +1 for reject."""
        return 1 if self is Decision.REJECT else -1


@dataclass(frozen=True)
class Gate:
    """Reject iff ``score > threshold``; ties at the threshold are accepted."""

    ranker_id: str
    threshold: float

    def accepts(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) <= self.threshold

    def to_dict(self) -> dict:
        thr = self.threshold if math.isfinite(self.threshold) else None
        return {"ranker_id": self.ranker_id, "threshold": thr, "comparison": "strict-greater"}

    @classmethod
    def from_dict(cls, d: dict) -> Gate:
        try:
            thr = d["threshold"]
            return cls(str(d["ranker_id"]), math.inf if thr is None else float(thr))
        except KeyError as exc:
            raise SchemaError(f"gate missing field {exc.args[0]!r}") from None


def classify(gate: Gate, score: float) -> Decision:
    return Decision.REJECT if score > gate.threshold else Decision.ACCEPT


def _check_unit_interval(name: str, x: float) -> None:
    if not 0.0 < x < 1.0:
        raise ValidationError(f"{name} must lie in (0, 1), got {x}")


def order_statistic_index(n1: int, alpha: float) -> int:
    """``v = ceil((n1 + 1)(1 - alpha))``.

    Evaluated on the decimal value of ``alpha`` so that e.g. ``alpha=0.05``
    with ``n1=19`` gives exactly 19 rather than rounding up past it.
    """
    _check_unit_interval("alpha", alpha)
    a = Fraction(repr(float(alpha)))
    return math.ceil((n1 + 1) * (1 - a))


def order_statistic_threshold(negative_scores, alpha: float) -> float:
    """The ``v``-th smallest score among correctly classified samples.

    Raises
    ------
    EmptyNegatives
        No scores given.
    ToleranceTooSmall
        ``v > n1``: ``alpha < 1/(n1+1)`` cannot be met with this many samples.
    """
    s = np.sort(np.asarray(negative_scores, dtype=np.float64), kind="stable")
    n1 = s.size
    if n1 == 0:
        raise EmptyNegatives("no correctly classified samples to threshold")
    v = order_statistic_index(n1, alpha)
    if v > n1:
        raise ToleranceTooSmall(
            f"alpha={alpha} needs at least {math.ceil(1 / alpha) - 1} correct samples, got {n1}",
            n1=n1,
            v=v,
            alpha=alpha,
        )
    return float(s[v - 1])


def pava(y, weights=None, *, increasing: bool = True) -> np.ndarray:
    """Weighted least-squares monotone fit by pooling adjacent violators."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if y.shape != w.shape:
        raise ValidationError("values and weights differ in length")
    if not increasing:
        return -pava(-y, w)
    vals: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, w2, s2 = vals.pop(), wts.pop(), sizes.pop()
            v1, w1, s1 = vals.pop(), wts.pop(), sizes.pop()
            wt = w1 + w2
            vals.append((v1 * w1 + v2 * w2) / wt)
            wts.append(wt)
            sizes.append(s1 + s2)
    return np.repeat(np.array(vals), sizes)


@dataclass(frozen=True, eq=False)
class IsotonicFit:
    """Decreasing step estimate of coverage accuracy versus score threshold.

    ``scores`` are strictly increasing knot positions and ``values`` the
    fitted (non-increasing) coverage accuracies. ``raw_values`` and
    ``weights`` are the pre-fit points and their regression weights.
    """

    scores: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    raw_values: np.ndarray
    b: int
    cumulative: bool = True
    counts: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "scores": self.scores.tolist(),
            "values": self.values.tolist(),
            "weights": self.weights.tolist(),
            "raw_values": self.raw_values.tolist(),
            "b": self.b,
            "cumulative": self.cumulative,
        }

    @classmethod
    def from_dict(cls, d: dict) -> IsotonicFit:
        try:
            return cls(
                np.asarray(d["scores"], dtype=np.float64),
                np.asarray(d["values"], dtype=np.float64),
                np.asarray(d["weights"], dtype=np.float64),
                np.asarray(d["raw_values"], dtype=np.float64),
                int(d["b"]),
                bool(d.get("cumulative", True)),
            )
        except KeyError as exc:
            raise SchemaError(f"isotonic fit missing field {exc.args[0]!r}") from None


def coverage_points(scores, correct_flags, b: int, *, cumulative: bool = True):
    """Knot inputs before the isotonic fit.

    Returns ``(mean score per bin, accuracy, weight)`` over ``b`` uniform-mass
    bins of the sorted scores. With ``cumulative`` the accuracy of bin ``j``
    is taken over bins ``1..j`` and weighted by their total count; otherwise
    it is the accuracy inside bin ``j`` weighted by its own count.
    """
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(correct_flags, dtype=np.float64)
    if s.shape != c.shape or s.ndim != 1:
        raise ValidationError("scores and correctness flags must be 1-d and equally long")
    if b < 2:
        raise TooFewValues(f"need at least 2 bins, got {b}", b=b)
    order = np.argsort(s, kind="stable")
    s, c = s[order], c[order]
    ends = uniform_mass_split(s.size, b)
    starts = np.concatenate([[0], ends[:-1]])
    counts = ends - starts
    mean_score = np.add.reduceat(s, starts) / counts
    if cumulative:
        acc = np.cumsum(c)[ends - 1] / ends
        weight = ends.astype(np.float64)
    else:
        acc = np.add.reduceat(c, starts) / counts
        weight = counts.astype(np.float64)
    return mean_score, acc, weight, counts


def fit_coverage_transform(
    scores,
    correct_flags,
    b: int,
    *,
    cumulative: bool = True,
) -> IsotonicFit:
    """Estimate coverage accuracy as a decreasing function of the threshold.

    Scores are split into ``b`` uniform-mass bins; each bin gives a knot at its
    mean score whose value is the accuracy over that bin and all bins below it.
    A weighted decreasing isotonic regression smooths the knots. Adjacent bins
    with identical mean scores are merged first so knot positions stay
    strictly increasing.
    """
    xs, ys, ws, counts = coverage_points(scores, correct_flags, b, cumulative=cumulative)
    keep = np.concatenate([[True], np.diff(xs) > 0])
    if not keep.all():
        group = np.cumsum(keep) - 1
        wsum = np.bincount(group, weights=ws)
        ys = np.bincount(group, weights=ys * ws) / wsum
        counts = np.bincount(group, weights=counts).astype(np.int64)
        xs, ws = xs[keep], wsum
    fitted = np.clip(pava(ys, ws, increasing=False), 0.0, 1.0)
    return IsotonicFit(xs, fitted, ws, ys, b, cumulative, counts)


def invert_transform(fit: IsotonicFit, beta: float, *, interpolate: bool = False) -> float:
    """Score threshold whose estimated coverage accuracy is at least ``beta``.

    Returns the largest knot score with fitted value ``>= beta``. With
    ``interpolate`` the threshold moves linearly toward the next knot until
    the interpolated value reaches ``beta``, which can overshoot the target.

    Raises
    ------
    UnreachableAccuracy
        ``beta`` exceeds the largest fitted value.
    """
    _check_unit_interval("beta", beta)
    vals = fit.values
    if beta > vals[0]:
        raise UnreachableAccuracy(
            f"coverage accuracy {beta} exceeds the best estimated value {vals[0]:.6g}",
            beta=beta,
            max_value=float(vals[0]),
        )
    j = int(np.count_nonzero(vals >= beta)) - 1
    s = float(fit.scores[j])
    if interpolate and j + 1 < vals.size and vals[j] > beta:
        a0, a1 = vals[j], vals[j + 1]
        s += (a0 - beta) / (a0 - a1) * (fit.scores[j + 1] - fit.scores[j])
    return float(s)
