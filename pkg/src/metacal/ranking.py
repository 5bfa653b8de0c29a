"""Ranking models scoring how likely a prediction is to be wrong."""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .core import ProbVector
from .errors import SchemaError


class RankingModel(abc.ABC):
    """Higher score means the prediction is more likely misclassified."""

    id: str

    @abc.abstractmethod
    def score_batch(self, probs: np.ndarray) -> np.ndarray: ...

    def score(self, p: ProbVector) -> float:
        return float(self.score_batch(p.probs[None, :])[0])


@dataclass(frozen=True)
class EntropyRanker(RankingModel):
    """Shannon entropy of the classifier output, ``-sum p log p``.

    Natural log by default; ``base`` rescales the score, which leaves every
    threshold-based decision unchanged.
    """

    base: float | None = None

    @property
    def id(self) -> str:  # type: ignore[override]
        return "entropy"

    def score_batch(self, probs: np.ndarray) -> np.ndarray:
        h = entr(np.asarray(probs, dtype=np.float64)).sum(axis=-1)
        if self.base is not None:
            h = h / math.log(self.base)
        return h


def entropy_score(p: ProbVector) -> float:
    return EntropyRanker().score(p)


RANKERS: dict[str, RankingModel] = {"entropy": EntropyRanker()}


def get_ranker(ranker_id: str) -> RankingModel:
    try:
        return RANKERS[ranker_id]
    except KeyError:
        raise SchemaError(f"unknown ranking model {ranker_id!r}", known=sorted(RANKERS)) from None
