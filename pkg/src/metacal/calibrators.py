"""Base calibration maps: identity and temperature scaling."""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .core import Dataset, ProbVector, validate_prob_matrix
from .errors import ClassCountMismatch, NonPositiveProbability, SchemaError, ValidationError

T_MIN = 1e-2
T_MAX = 1e2
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _log_probs_of(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs <= 0):
        raise NonPositiveProbability("temperature scaling needs strictly positive probabilities")
    return np.log(probs)


class CalibrationMap(abc.ABC):
    """A map from the simplex to itself."""

    accuracy_preserving: bool = False

    @abc.abstractmethod
    def apply_batch(self, probs: np.ndarray, log_probs: np.ndarray | None = None) -> np.ndarray:
        """Calibrate an ``(n, k)`` array of probability rows.

        ``log_probs`` may be passed when the caller already holds finite
        log-probabilities (e.g. recovered from logits).
        """

    def apply(self, p: ProbVector) -> ProbVector:
        out = self.apply_batch(p.probs[None, :])[0]
        out.flags.writeable = False
        return ProbVector(out)

    def apply_dataset(self, data: Dataset) -> np.ndarray:
        return self.apply_batch(data.probs)

    @abc.abstractmethod
    def to_dict(self) -> dict: ...


class IdentityCalibrator(CalibrationMap):
    accuracy_preserving = True

    def apply_batch(self, probs, log_probs=None):
        return np.array(probs, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"type": "identity"}

    def __repr__(self) -> str:
        return "IdentityCalibrator()"


def identity_calibrator() -> IdentityCalibrator:
    return IdentityCalibrator()


@dataclass(frozen=True)
class ComposedMap(CalibrationMap):
    """``outer(inner(p))``."""

    inner: CalibrationMap
    outer: CalibrationMap

    @property
    def accuracy_preserving(self) -> bool:  # type: ignore[override]
        return self.inner.accuracy_preserving and self.outer.accuracy_preserving

    def apply_batch(self, probs, log_probs=None):
        return self.outer.apply_batch(self.inner.apply_batch(probs, log_probs))

    def to_dict(self) -> dict:
        return {"type": "composed", "inner": self.inner.to_dict(), "outer": self.outer.to_dict()}


@dataclass(frozen=True)
class TemperatureModel(CalibrationMap):
    """Temperature scaling: ``q ∝ p ** (1/T)``, i.e. ``softmax(log p / T)``.

    Dividing log-probabilities by a positive constant keeps their order, so
    the set of maximizing classes is preserved (up to floating resolution for
    entries that differ in the last few bits).
    """

    T: float
    k: int

    accuracy_preserving = True

    def __post_init__(self) -> None:
        if not (T_MIN <= self.T <= T_MAX) or not math.isfinite(self.T):
            raise ValidationError(f"temperature {self.T} outside [{T_MIN}, {T_MAX}]")
        if self.k < 2:
            raise ValidationError(f"class count must be at least 2, got {self.k}")

    def apply_batch(self, probs, log_probs=None):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape[-1] != self.k:
            raise ClassCountMismatch(f"model has k={self.k}, input has k={probs.shape[-1]}")
        if self.T == 1.0:
            return validate_prob_matrix(probs)
        logp = _log_probs_of(probs) if log_probs is None else np.asarray(log_probs, dtype=np.float64)
        return validate_prob_matrix(np.exp(log_softmax(logp / self.T, axis=1)))

    def apply_dataset(self, data: Dataset) -> np.ndarray:
        return self.apply_batch(data.probs, data.log_probs())

    def to_dict(self) -> dict:
        return {"type": "temperature", "T": self.T, "k": self.k}


def apply_temperature(model: TemperatureModel, p: ProbVector) -> ProbVector:
    return model.apply(p)


def temperature_nll(log_probs: np.ndarray, labels: np.ndarray, T: float) -> float:
    """Mean negative log-likelihood of ``softmax(log_probs / T)``."""
    lp = log_softmax(log_probs / T, axis=1)
    return float(-np.mean(lp[np.arange(labels.size), labels]))


def _golden_section(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fit_temperature(
    data: Dataset,
    *,
    n_starts: int = 8,
    tol: float = 1e-6,
) -> TemperatureModel:
    """Fit a temperature by minimizing the mean NLL over ``data``.

    The search runs on ``log T`` over ``[log 1e-2, log 1e2]``: the interval
    is cut into ``n_starts`` equal brackets, golden-section search runs in
    each, and the best point (bounds included) wins.

    Raises
    ------
    NonPositiveProbability
        Probabilities contain zeros and no logits are available.
    """
    logp = data.log_probs()
    labels = data.labels
    # Shifting each row by a constant leaves the NLL unchanged and keeps the
    # division by small T from overflowing.
    logp = logp - logp.max(axis=1, keepdims=True)
    # With every row maximum at 0, exp(logp / T) lies in [0, 1] and each row
    # sum is at least 1, so the log-normalizer needs no further shifting.
    mean_true = float(np.mean(logp[np.arange(labels.size), labels]))

    def nll(log_t: float) -> float:
        inv_t = math.exp(-log_t)
        return float(np.mean(np.log(np.exp(logp * inv_t).sum(axis=1)))) - mean_true * inv_t

    lo, hi = math.log(T_MIN), math.log(T_MAX)
    cuts = np.linspace(lo, hi, n_starts + 1)
    best_x, best_f = lo, nll(lo)
    f_hi = nll(hi)
    if f_hi < best_f:
        best_x, best_f = hi, f_hi
    for a, b in zip(cuts[:-1], cuts[1:]):
        x, fx = _golden_section(nll, float(a), float(b), tol)
        if fx < best_f:
            best_x, best_f = x, fx
    T = min(max(math.exp(best_x), T_MIN), T_MAX)
    if best_x == lo:
        T = T_MIN
    elif best_x == hi:
        T = T_MAX
    return TemperatureModel(T, data.k)


def calibrator_from_dict(d: dict) -> CalibrationMap:
    kind = d.get("type")
    if kind == "identity":
        return IdentityCalibrator()
    if kind == "temperature":
        try:
            return TemperatureModel(float(d["T"]), int(d["k"]))
        except KeyError as exc:
            raise SchemaError(f"temperature model missing field {exc.args[0]!r}") from None
    if kind == "composed":
        return ComposedMap(calibrator_from_dict(d["inner"]), calibrator_from_dict(d["outer"]))
    raise SchemaError(f"unknown calibrator type {kind!r}")
