"""The composed calibration map: a gate in front of a base calibrator.

Accepted inputs are passed through the base calibrator; rejected inputs are
mapped to the uniform distribution, so their top-label confidence is ``1/k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np

from .calibrators import CalibrationMap, IdentityCalibrator, calibrator_from_dict, fit_temperature
from .core import Dataset, ProbVector, TieBreakPolicy, predict_batch
from .errors import (
    ClassCountMismatch,
    EmptyAcceptedTrainingSet,
    NoCorrectPredictions,
    SchemaError,
    TooFewValues,
    ValidationError,
)
from .gate import (
    Gate,
    fit_coverage_transform,
    invert_transform,
    order_statistic_index,
    order_statistic_threshold,
)
from .ranking import EntropyRanker, RankingModel, get_ranker

Mode = Literal["miscoverage", "coverage", "none"]

MAX_GATE_SAMPLES = 500


@dataclass(frozen=True)
class CalibratedOutput:
    probs: ProbVector
    accepted: bool
    score: float


@dataclass(frozen=True)
class BatchOutput:
    probs: np.ndarray
    accepted: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, i: int) -> CalibratedOutput:
        return CalibratedOutput(ProbVector(self.probs[i]), bool(self.accepted[i]), float(self.scores[i]))


def uniform_rows(n: int, k: int) -> np.ndarray:
    return np.full((n, k), 1.0 / k)


@dataclass(frozen=True, eq=False)
class MetaCalModel:
    """Gate + base calibrator.

    ``mode`` records which constraint set the threshold and ``level`` its
    target (the miscoverage tolerance alpha or the coverage accuracy beta).
    ``mode="none"`` is a pass-through model whose gate accepts everything.
    """

    gate: Gate
    base: CalibrationMap
    k: int
    mode: Mode
    level: float | None = None
    split_seed: int = 0
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("miscoverage", "coverage", "none"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.mode == "coverage" and not self.base.accuracy_preserving:
            raise ValidationError("coverage-accuracy control needs an accuracy-preserving base map")
        k_base = getattr(self.base, "k", self.k)
        if k_base != self.k:
            raise ClassCountMismatch(f"base calibrator has k={k_base}, model has k={self.k}")

    @classmethod
    def passthrough(cls, base: CalibrationMap | None = None, k: int = 2, ranker_id: str = "entropy") -> MetaCalModel:
        return cls(Gate(ranker_id, math.inf), base or IdentityCalibrator(), k, "none")

    @property
    def ranker(self) -> RankingModel:
        return get_ranker(self.gate.ranker_id)

    @property
    def alpha(self) -> float | None:
        return self.level if self.mode == "miscoverage" else None

    @property
    def beta(self) -> float | None:
        return self.level if self.mode == "coverage" else None

    def _check_k(self, k: int) -> None:
        if k != self.k:
            raise ClassCountMismatch(f"model has k={self.k}, input has k={k}", model_k=self.k, input_k=k)

    def apply_batch(self, probs, log_probs=None) -> BatchOutput:
        probs = np.asarray(probs, dtype=np.float64)
        self._check_k(probs.shape[1])
        scores = self.ranker.score_batch(probs)
        accepted = self.gate.accepts(scores)
        out = uniform_rows(probs.shape[0], self.k)
        if accepted.any():
            lp = None if log_probs is None else np.asarray(log_probs)[accepted]
            out[accepted] = self.base.apply_batch(probs[accepted], lp)
        return BatchOutput(out, accepted, scores)

    def apply_dataset(self, data: Dataset) -> BatchOutput:
        self._check_k(data.k)
        log_probs = None
        if data.logits is not None or np.all(data.probs > 0):
            log_probs = data.log_probs()
        return self.apply_batch(data.probs, log_probs)

    def apply(self, p: ProbVector) -> CalibratedOutput:
        return self.apply_batch(p.probs[None, :])[0]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"mode": self.mode}
        if self.mode == "miscoverage":
            d["alpha"] = self.level
        elif self.mode == "coverage":
            d["beta"] = self.level
        d.update(
            gate=self.gate.to_dict(),
            base=self.base.to_dict(),
            k=self.k,
            seed=self.split_seed,
            fit=self.info,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetaCalModel:
        try:
            mode = d["mode"]
            level = d.get("alpha") if mode == "miscoverage" else d.get("beta")
            return cls(
                Gate.from_dict(d["gate"]),
                calibrator_from_dict(d["base"]),
                int(d["k"]),
                mode,
                None if level is None else float(level),
                int(d.get("seed", 0)),
                dict(d.get("fit", {})),
            )
        except KeyError as exc:
            raise SchemaError(f"model missing field {exc.args[0]!r}") from None


def apply(model: MetaCalModel, p: ProbVector) -> CalibratedOutput:
    return model.apply(p)


def naive_apply_batch(gate: Gate, probs, policy: TieBreakPolicy | None = None) -> BatchOutput:
    """Gate with the idealized rules: one-hot on accept, uniform on reject."""
    probs = np.asarray(probs, dtype=np.float64)
    policy = policy or TieBreakPolicy.lowest()
    scores = get_ranker(gate.ranker_id).score_batch(probs)
    accepted = gate.accepts(scores)
    n, k = probs.shape
    out = uniform_rows(n, k)
    classes = predict_batch(probs, policy)[0]
    rows = np.flatnonzero(accepted)
    out[rows] = 0.0
    out[rows, classes[rows]] = 1.0
    return BatchOutput(out, accepted, scores)


def naive_apply(gate: Gate, p: ProbVector, policy: TieBreakPolicy | None = None) -> CalibratedOutput:
    return naive_apply_batch(gate, p.probs[None, :], policy)[0]


def gate_split_size(n: int) -> int:
    """A tenth of the data, capped at 500 samples."""
    return min(n // 10, MAX_GATE_SAMPLES)


def gate_split(n: int, seed: int, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Random disjoint index sets (gate part, base-calibrator part)."""
    m = gate_split_size(n) if size is None else size
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:])


def default_coverage_bins(gate_size: int) -> int:
    """At least 20 gate samples per uniform-mass bin, and at least 2 bins."""
    return max(2, gate_size // 20)


BaseFitter = Callable[[Dataset], CalibrationMap]


def _fit_base(data: Dataset, accepted_idx: np.ndarray, base_fitter: BaseFitter, threshold: float) -> CalibrationMap:
    if accepted_idx.size == 0:
        raise EmptyAcceptedTrainingSet(
            "no base-calibrator training sample falls under the gate threshold", threshold=threshold
        )
    return base_fitter(data.subset(accepted_idx))


def fit_miscoverage(
    data: Dataset,
    alpha: float,
    ranker: RankingModel | None = None,
    seed: int = 0,
    *,
    policy: TieBreakPolicy | None = None,
    base_fitter: BaseFitter = fit_temperature,
    gate_size: int | None = None,
) -> MetaCalModel:
    """Fit a Meta-Cal map whose miscoverage rate is held under ``alpha``.

    The data is split at random. On the gate part only correctly classified
    samples are kept and the threshold is the ``ceil((n1+1)(1-alpha))``-th
    smallest of their ranking scores. The base calibrator is then fitted on
    the samples of the other part that the gate accepts.

    Raises
    ------
    NoCorrectPredictions
        The gate part has no correctly classified sample.
    ToleranceTooSmall
        Too few correct samples in the gate part to certify ``alpha``.
    EmptyAcceptedTrainingSet
        The gate rejects every sample meant for the base calibrator.
    """
    ranker = ranker or EntropyRanker()
    policy = policy or TieBreakPolicy.seeded(seed)
    gate_idx, base_idx = gate_split(data.n, seed, gate_size)
    scores = ranker.score_batch(data.probs)
    correct = data.correct(policy) > 0.5
    negatives = gate_idx[correct[gate_idx]]
    if negatives.size == 0:
        raise NoCorrectPredictions(
            "the gate split has no correctly classified samples", gate_size=int(gate_idx.size)
        )
    threshold = order_statistic_threshold(scores[negatives], alpha)
    gate = Gate(ranker.id, threshold)
    accepted = base_idx[gate.accepts(scores[base_idx])]
    base = _fit_base(data, accepted, base_fitter, threshold)
    info = {
        "n": data.n,
        "gate_size": int(gate_idx.size),
        "base_size": int(base_idx.size),
        "n1": int(negatives.size),
        "v": order_statistic_index(int(negatives.size), alpha),
        "base_accepted": int(accepted.size),
    }
    return MetaCalModel(gate, base, data.k, "miscoverage", float(alpha), seed, info)


def fit_coverage(
    data: Dataset,
    beta: float,
    ranker: RankingModel | None = None,
    b: int | None = None,
    seed: int = 0,
    *,
    policy: TieBreakPolicy | None = None,
    base_fitter: BaseFitter = fit_temperature,
    gate_size: int | None = None,
    interpolate: bool = True,
) -> MetaCalModel:
    """Fit a Meta-Cal map whose coverage accuracy targets ``beta``.

    The gate part estimates coverage accuracy as a decreasing function of the
    score threshold; the threshold is its inverse at ``beta``, interpolated
    linearly between knots unless ``interpolate=False`` (step inversion, which
    lands on a knot and overshoots ``beta`` by up to one knot's worth of
    accuracy). The base calibrator is fitted on the accepted samples of the
    other part.

    Raises
    ------
    TooFewValues
        The gate part has fewer than ``2 b`` samples.
    UnreachableAccuracy
        ``beta`` is above every estimated coverage accuracy.
    EmptyAcceptedTrainingSet
        The gate rejects every sample meant for the base calibrator.
    """
    ranker = ranker or EntropyRanker()
    policy = policy or TieBreakPolicy.seeded(seed)
    gate_idx, base_idx = gate_split(data.n, seed, gate_size)
    b = default_coverage_bins(gate_idx.size) if b is None else b
    if gate_idx.size < 2 * b:
        raise TooFewValues(
            f"gate split of {gate_idx.size} samples is too small for {b} bins", n=int(gate_idx.size), b=b
        )
    scores = ranker.score_batch(data.probs)
    correct = data.correct(policy) > 0.5
    fit = fit_coverage_transform(scores[gate_idx], correct[gate_idx], b)
    threshold = invert_transform(fit, beta, interpolate=interpolate)
    gate = Gate(ranker.id, threshold)
    accepted = base_idx[gate.accepts(scores[base_idx])]
    base = _fit_base(data, accepted, base_fitter, threshold)
    info = {
        "n": data.n,
        "gate_size": int(gate_idx.size),
        "base_size": int(base_idx.size),
        "b": b,
        "interpolate": interpolate,
        "base_accepted": int(accepted.size),
        "transform": fit.to_dict(),
    }
    return MetaCalModel(gate, base, data.k, "coverage", float(beta), seed, info)
