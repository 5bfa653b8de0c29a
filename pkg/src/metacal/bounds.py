"""Gate error rates and the analytic guarantees that accompany them.

A sample is *positive* when the classifier got it wrong. The gate's Type I
error (rejecting a correct prediction) is the miscoverage rate; its precision
on the accept decision is the coverage accuracy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .binning import BinningScheme, BinReport, bin_report
from .core import Dataset, TieBreakPolicy, correctness
from .errors import ToleranceTooSmall, ValidationError
from .gate import Gate, order_statistic_index
from .model import MetaCalModel, naive_apply_batch
from .ranking import get_ranker


@dataclass(frozen=True)
class GateMetrics:
    """Empirical gate rates; a rate with an empty denominator is ``None``."""

    type1: float | None
    type2: float | None
    miscoverage: float | None
    coverage_accuracy: float | None
    accuracy: float
    accepted_count: int
    rejected_count: int
    correct_count: float
    accepted_correct: float

    @property
    def n(self) -> int:
        return self.accepted_count + self.rejected_count

    @property
    def undefined(self) -> tuple[str, ...]:
        return tuple(
            name
            for name in ("type1", "type2", "miscoverage", "coverage_accuracy")
            if getattr(self, name) is None
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n"] = self.n
        d["undefined"] = list(self.undefined)
        return d


def metrics_from_masks(accepted, correct) -> GateMetrics:
    """Rates from an accept mask and per-sample correctness.

    ``correct`` may be fractional (expected-value tie scoring), in which case
    every count is an expected count.
    """
    acc = np.asarray(accepted, dtype=bool)
    c = np.asarray(correct, dtype=np.float64)
    if acc.shape != c.shape or acc.size == 0:
        raise ValidationError("accept mask and correctness must be non-empty and equally long")
    n = acc.size
    n_correct = float(c.sum())
    n_wrong = n - n_correct
    n_acc = int(acc.sum())
    acc_correct = float(c[acc].sum())
    rej_correct = n_correct - acc_correct
    acc_wrong = n_acc - acc_correct

    def ratio(num: float, den: float) -> float | None:
        return num / den if den > 0 else None

    type1 = ratio(rej_correct, n_correct)
    return GateMetrics(
        type1=type1,
        type2=ratio(acc_wrong, n_wrong),
        miscoverage=type1,
        coverage_accuracy=ratio(acc_correct, n_acc),
        accuracy=n_correct / n,
        accepted_count=n_acc,
        rejected_count=n - n_acc,
        correct_count=n_correct,
        accepted_correct=acc_correct,
    )


def gate_metrics(gate: Gate | MetaCalModel, data: Dataset, policy: TieBreakPolicy | None = None) -> GateMetrics:
    """Type I/II error, miscoverage and coverage accuracy of a gate on ``data``.

    Correctness refers to the original classifier's prediction.
    """
    if isinstance(gate, MetaCalModel):
        gate = gate.gate
    policy = policy or TieBreakPolicy()
    scores = get_ranker(gate.ranker_id).score_batch(data.probs)
    return metrics_from_masks(gate.accepts(scores), data.correct(policy))


def miscoverage_tail(n1: int, alpha: float) -> float:
    """Probability that the population miscoverage exceeds ``alpha``.

    ``sum_{j=v}^{n1} C(n1, j) (1-alpha)^j alpha^(n1-j)`` with
    ``v = ceil((n1+1)(1-alpha))``, summed in the log domain.

    Raises
    ------
    ToleranceTooSmall
        ``v > n1``.
    """
    if n1 < 1:
        raise ValidationError(f"n1 must be positive, got {n1}")
    v = order_statistic_index(n1, alpha)
    if v > n1:
        raise ToleranceTooSmall(f"v={v} exceeds n1={n1}", n1=n1, v=v, alpha=alpha)
    j = np.arange(v, n1 + 1)
    log_comb = np.array([math.lgamma(n1 + 1) - math.lgamma(i + 1) - math.lgamma(n1 - i + 1) for i in j])
    terms = log_comb + j * math.log1p(-alpha) + (n1 - j) * math.log(alpha)
    return float(min(1.0, max(0.0, math.exp(logsumexp(terms)))))


def _clamp(x: float, clamp: bool) -> float:
    return min(1.0, x) if clamp else x


def gaussian_chernoff(delta: float, sigma2: float, *, clamp: bool = True) -> float:
    """``2 exp(-delta^2 / (2 sigma^2))``, clamped to 1 unless ``clamp=False``."""
    if delta < 0:
        raise ValidationError(f"delta must be non-negative, got {delta}")
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    return _clamp(2.0 * math.exp(-(delta**2) / (2.0 * sigma2)), clamp)


def miscoverage_deviation_bound(delta: float, miscoverage: float, m1: int, *, clamp: bool = True) -> float:
    """Gaussian bound on ``|F0_hat - F0| >= delta`` with ``m1`` correct test samples."""
    return gaussian_chernoff(delta, miscoverage * (1 - miscoverage) / m1, clamp=clamp)


def coverage_deviation_bound(delta: float, beta: float, m1: int, *, clamp: bool = True) -> float:
    """``2 exp(-m1 delta^2 / (2 beta (1-beta)))`` for ``m1`` accepted test samples."""
    if not 0 < beta < 1:
        raise ValidationError(f"beta must lie in (0, 1), got {beta}")
    if m1 < 1:
        raise ValidationError(f"m1 must be positive, got {m1}")
    return gaussian_chernoff(delta, beta * (1 - beta) / m1, clamp=clamp)


def _check_rate(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {x}")


def ece_lower_bound_acc_preserving(accuracy: float, k: int) -> float:
    """``(1 - accuracy) / k``: no accuracy-preserving map gets its sup-ECE this low."""
    _check_rate("accuracy", accuracy)
    if k < 2:
        raise ValidationError(f"k must be at least 2, got {k}")
    return (1.0 - accuracy) / k


class MetaCalBound(NamedTuple):
    bound: float
    w: float


def metacal_lower_bound(accuracy: float, R0: float, R1: float, k: int) -> MetaCalBound:
    """``w (1 - accuracy) / k`` with ``w = (1-R0) accuracy + R1 (1-accuracy)``."""
    for name, x in (("accuracy", accuracy), ("R0", R0), ("R1", R1)):
        _check_rate(name, x)
    w = (1.0 - R0) * accuracy + R1 * (1.0 - accuracy)
    return MetaCalBound(w * ece_lower_bound_acc_preserving(accuracy, k), w)


def naive_ece_identity(R1: float, accuracy: float) -> float:
    """Sup-ECE of the one-hot/uniform construction: ``R1 (1 - accuracy)``."""
    _check_rate("R1", R1)
    _check_rate("accuracy", accuracy)
    return R1 * (1.0 - accuracy)


def separates_atoms(edges, k: int) -> bool:
    """Whether ``1/k`` and ``1`` land in different bins of a right-closed scheme."""
    edges = np.asarray(edges, dtype=np.float64)
    inner = edges[1:-1]
    return bool(np.any((inner >= 1.0 / k) & (inner < 1.0)))


def naive_binned_ece(gate: Gate, data: Dataset, scheme: BinningScheme, policy: TieBreakPolicy | None = None) -> BinReport:
    """Binned ECE of the one-hot/uniform construction driven by ``gate``.

    Equals ``naive_ece_identity(R1, accuracy)`` under expected-value tie
    scoring whenever ``scheme`` puts ``1/k`` and ``1`` in different bins. A
    scheme that mixes them gets a warning, since the identity need not hold.
    """
    policy = policy or TieBreakPolicy.expected()
    if not separates_atoms(scheme.edges, data.k):
        warnings.warn(
            f"binning scheme does not separate 1/{data.k} from 1; the naive ECE identity may not hold",
            stacklevel=2,
        )
    out = naive_apply_batch(gate, data.probs)
    return bin_report(out.probs.max(axis=1), correctness(out.probs, data.labels, policy), scheme)
