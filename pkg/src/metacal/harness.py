"""Monte Carlo check of the miscoverage / coverage-accuracy guarantees.

Each run draws a fresh dataset from the synthetic generator, fits Meta-Cal on
the first ``n_fit`` samples and evaluates on the remaining ``n_eval``.
Population quantities (the true miscoverage or coverage accuracy of the fitted
threshold) are plug-in estimates on one large population draw shared by all
runs, using the known probability that each prediction is correct.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Literal

import numpy as np

from .binning import BinningScheme, bin_report, sup_ece
from .bounds import (
    coverage_deviation_bound,
    ece_lower_bound_acc_preserving,
    metacal_lower_bound,
    metrics_from_masks,
    miscoverage_deviation_bound,
    miscoverage_tail,
)
from .calibrators import fit_temperature
from .core import TieBreakPolicy, correctness
from .errors import MetaCalError, ValidationError
from .model import fit_coverage, fit_miscoverage
from .synthgen import GeneratorSpec, generate, population_sample

log = logging.getLogger(__name__)

_POP_STREAM = 2**31 - 1


@dataclass(frozen=True)
class VerifyConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    mode: Literal["miscoverage", "coverage"] = "miscoverage"
    alpha: float | None = 0.05
    beta: float | None = None
    beta_offset: float | None = None
    n_fit: int = 5000
    n_eval: int = 10000
    runs: int = 40
    seed: int = 0
    population_size: int = 1_000_000
    eval_bins: int = 15
    coverage_bins: int | None = None
    interpolate: bool = True
    deltas: tuple[float, ...] = (0.01, 0.02, 0.05)

    def __post_init__(self) -> None:
        if self.runs < 2:
            raise ValidationError(f"need at least 2 runs, got {self.runs}")
        if self.mode not in ("miscoverage", "coverage"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.mode == "miscoverage" and self.alpha is None:
            raise ValidationError("miscoverage mode needs alpha")
        if self.mode == "coverage" and (self.beta is None) == (self.beta_offset is None):
            raise ValidationError("coverage mode needs exactly one of beta and beta_offset")
        if self.n_fit < 1 or self.n_eval < 1:
            raise ValidationError("n_fit and n_eval must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> VerifyConfig:
        d = dict(d)
        gen = d.pop("generator", None)
        if gen is None:
            gen = {f: d.pop(f) for f in ("k", "logit_scale", "distortion_temperature", "tdist") if f in d}
        if "alpha" in d and "mode" not in d:
            d["mode"] = "miscoverage"
        if ("beta" in d or "beta_offset" in d) and "mode" not in d:
            d["mode"] = "coverage"
            d.setdefault("alpha", None)
        if "deltas" in d:
            d["deltas"] = tuple(float(x) for x in d["deltas"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config fields {sorted(unknown)}")
        return cls(generator=GeneratorSpec.from_dict(gen), **d)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["deltas"] = list(self.deltas)
        return d


@dataclass
class VerifyReport:
    config: VerifyConfig
    target: float
    population_accuracy: float
    runs: list[dict[str, Any]]
    failures: list[dict[str, Any]]
    summary: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "target": self.target,
            "population_accuracy": self.population_accuracy,
            "summary": self.summary,
            "runs": self.runs,
            "failures": self.failures,
        }

    def to_csv(self) -> str:
        """Long-format rows ``run,metric,value`` for external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "metric", "value"])
        for r in self.runs:
            for key, value in r.items():
                if key == "run" or isinstance(value, (dict, list)) or value is None:
                    continue
                w.writerow([r["run"], key, repr(float(value))])
        return buf.getvalue()


def _run_seeds(master: int, run: int) -> tuple[int, int, int]:
    a, b, c = np.random.SeedSequence([master, run]).generate_state(3)
    return int(a), int(b), int(c)


def _mean_sd(xs) -> tuple[float, float]:
    a = np.asarray(xs, dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def _one_run(config: VerifyConfig, run: int, target: float, pop_scores, pop_correct) -> dict[str, Any]:
    data_seed, split_seed, policy_seed = _run_seeds(config.seed, run)
    spec = replace(config.generator, n=config.n_fit + config.n_eval, seed=data_seed)
    data, _ = generate(spec)
    fit = data.subset(np.arange(config.n_fit))
    ev = data.subset(np.arange(config.n_fit, data.n))
    policy = TieBreakPolicy.seeded(policy_seed)

    if config.mode == "miscoverage":
        model = fit_miscoverage(fit, target, seed=split_seed)
    else:
        model = fit_coverage(
            fit, target, b=config.coverage_bins, seed=split_seed, interpolate=config.interpolate
        )
    threshold = model.gate.threshold
    out = model.apply_dataset(ev)
    correct = ev.correct(policy)
    gm = metrics_from_masks(out.accepted, correct)

    pop_accept = pop_scores <= threshold
    pop_miscoverage = float(pop_correct[~pop_accept].sum() / pop_correct.sum())
    n_pop_acc = int(pop_accept.sum())
    pop_coverage = float(pop_correct[pop_accept].sum() / n_pop_acc) if n_pop_acc else math.nan

    scheme = BinningScheme.equal_width(config.eval_bins)
    ts = fit_temperature(fit)
    ts_probs = ts.apply_dataset(ev)
    meta_hits = correctness(out.probs, ev.labels, policy)
    meta_conf = out.probs.max(axis=1)

    lb = metacal_lower_bound(gm.accuracy, gm.type1 or 0.0, gm.type2 if gm.type2 is not None else 1.0, ev.k)
    rec: dict[str, Any] = {
        "run": run,
        "threshold": threshold,
        "base_temperature": model.base.T,
        "miscoverage": gm.miscoverage,
        "coverage_accuracy": gm.coverage_accuracy,
        "type2": gm.type2,
        "accuracy": gm.accuracy,
        "accepted": gm.accepted_count,
        "population_miscoverage": pop_miscoverage,
        "population_coverage_accuracy": pop_coverage,
        "ece_uncal": bin_report(ev.confidences(), correct, scheme).ece,
        "ece_ts": bin_report(ts_probs.max(axis=1), correctness(ts_probs, ev.labels, policy), scheme).ece,
        "ece_metacal": bin_report(meta_conf, meta_hits, scheme).ece,
        "sup_ece_metacal": sup_ece(meta_conf, meta_hits),
        "metacal_lower_bound": lb.bound,
        "w": lb.w,
        "acc_preserving_lower_bound": ece_lower_bound_acc_preserving(gm.accuracy, ev.k),
    }
    if config.mode == "miscoverage":
        n1 = int(model.info["n1"])
        m1 = int(round(gm.correct_count))
        rec.update(n1=n1, v=int(model.info["v"]), tail=miscoverage_tail(n1, target), m1=m1)
        if 0 < pop_miscoverage < 1:
            for d in config.deltas:
                rec[f"deviation_bound_{d:g}"] = miscoverage_deviation_bound(d, pop_miscoverage, m1)
    else:
        m1 = gm.accepted_count
        rec["m1"] = m1
        if m1:
            for d in config.deltas:
                rec[f"deviation_bound_{d:g}"] = coverage_deviation_bound(d, target, m1)
    return rec


def monte_carlo_verify(config: VerifyConfig) -> VerifyReport:
    """Repeat fit/evaluate ``config.runs`` times and summarize the constraint.

    Failed runs are recorded with their error code and do not stop the loop.
    The summary holds mean and standard deviation of the held-out metric,
    the frequency with which the population metric violates the target, the
    matching analytic predictions, and mean ECE of the uncalibrated outputs,
    temperature scaling alone and Meta-Cal.
    """
    pop_seed = int(np.random.SeedSequence([config.seed, _POP_STREAM]).generate_state(1)[0])
    pop_scores, pop_correct = population_sample(config.generator, config.population_size, seed=pop_seed)
    pop_acc = float(pop_correct.mean())
    if config.mode == "miscoverage":
        target = float(config.alpha)
    else:
        target = float(config.beta) if config.beta is not None else pop_acc + float(config.beta_offset)
        if not 0 < target < 1:
            raise ValidationError(f"coverage target {target} outside (0, 1)")

    runs, failures = [], []
    for i in range(config.runs):
        try:
            runs.append(_one_run(config, i, target, pop_scores, pop_correct))
        except MetaCalError as exc:
            log.warning("run %d failed: %s", i, exc)
            failures.append({"run": i, **exc.to_dict()})

    summary: dict[str, Any] = {"completed": len(runs), "failed": len(failures), "target": target}
    if runs:
        metric = "miscoverage" if config.mode == "miscoverage" else "coverage_accuracy"
        values = [r[metric] for r in runs if r[metric] is not None]
        mean, sd = _mean_sd(values)
        summary.update(metric=metric, mean=mean, sd=sd, mean_minus_2sd=mean - 2 * sd, mean_plus_2sd=mean + 2 * sd)
        for key in ("ece_uncal", "ece_ts", "ece_metacal", "sup_ece_metacal", "metacal_lower_bound"):
            summary[f"mean_{key}"] = _mean_sd([r[key] for r in runs])[0]
        r_ok = len(runs)
        if config.mode == "miscoverage":
            pops = np.array([r["population_miscoverage"] for r in runs])
            freq = float(np.mean(pops > target))
            tail = float(np.mean([r["tail"] for r in runs]))
            deviation = {
                f"{d:g}": {
                    "observed": float(np.mean([abs(r["miscoverage"] - r["population_miscoverage"]) >= d for r in runs])),
                    "bound": _mean_sd([r.get(f"deviation_bound_{d:g}", 1.0) for r in runs])[0],
                }
                for d in config.deltas
            }
        else:
            pops = np.array([r["population_coverage_accuracy"] for r in runs])
            freq = float(np.mean(pops < target))
            tail = None
            deviation = {
                f"{d:g}": {
                    "observed": float(np.mean([abs(r["coverage_accuracy"] - target) >= d for r in runs])),
                    "bound": _mean_sd([r.get(f"deviation_bound_{d:g}", 1.0) for r in runs])[0],
                }
                for d in config.deltas
            }
        summary.update(
            population_violation_frequency=freq,
            mean_population_metric=float(np.nanmean(pops)),
            analytic_tail=tail,
            monte_carlo_se=None if tail is None else math.sqrt(tail * (1 - tail) / r_ok),
            deviation=deviation,
            mean_m1=float(np.mean([r["m1"] for r in runs])),
        )
    return VerifyReport(config, target, pop_acc, runs, failures, summary)
