"""Acceptance suite: one test per criterion, each with its runtime budget."""

import json
import time

import numpy as np
import pytest

from metacal.binning import BinningScheme, bin_report, sup_binned_ece, sup_ece
from metacal.bounds import (
    gate_metrics,
    metacal_lower_bound,
    miscoverage_tail,
    naive_binned_ece,
    naive_ece_identity,
)
from metacal.calibrators import TemperatureModel, fit_temperature
from metacal.cli import main
from metacal.core import TieBreakPolicy
from metacal.errors import ToleranceTooSmall
from metacal.gate import Gate, coverage_points, fit_coverage_transform
from metacal.harness import VerifyConfig, monte_carlo_verify
from metacal.io import read_dataset, read_model, read_outputs
from metacal.model import fit_miscoverage
from metacal.ranking import EntropyRanker
from metacal.synthgen import GeneratorSpec, generate

from oracles import binomial_tail_mp, monotone_lsq_bruteforce

GEN = GeneratorSpec(k=10, distortion_temperature=0.5)


def _report(record_property, n, detail, elapsed, budget):
    record_property("criterion", n)
    record_property("detail", f"{detail}; {elapsed:.2f}s (budget {budget}s)")


@pytest.fixture(scope="module")
def miscoverage_run():
    t0 = time.perf_counter()
    rep = monte_carlo_verify(VerifyConfig(generator=GEN, mode="miscoverage", alpha=0.05, runs=40, seed=0))
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def coverage_run():
    t0 = time.perf_counter()
    rep = monte_carlo_verify(
        VerifyConfig(generator=GEN, mode="coverage", alpha=None, beta_offset=0.03, runs=40, seed=0)
    )
    return rep, time.perf_counter() - t0


def test_criterion_01_trivial_construction(record_property):
    t0 = time.perf_counter()
    raw = np.array([0.6, 0.7, 0.8, 0.81])
    mapped = np.where(raw == 0.81, 0.9, raw)
    hits = np.array([1, 1, 1, 0])
    ece = bin_report(mapped, hits, BinningScheme.single()).ece
    sup = sup_ece(mapped, hits)
    elapsed = time.perf_counter() - t0
    _report(record_property, 1, f"single-bin ECE={ece:.3g}, sup ECE={sup:.12g}", elapsed, 1)
    assert abs(ece) <= 1e-12
    assert abs(sup - 0.45) <= 1e-12
    assert elapsed < 1


def test_criterion_02_naive_ece_identity(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    pol = TieBreakPolicy.expected()
    for i in range(20):
        k = (2, 5, 10)[i % 3]
        data, _ = generate(GeneratorSpec(k=k, n=2000, logit_scale=2.0, seed=100 + i))
        scores = EntropyRanker().score_batch(data.probs)
        gate = Gate("entropy", float(np.quantile(scores, 0.3 + 0.02 * i)))
        scheme = BinningScheme(np.array([0.0, 0.5 * (1 / k + 1), 1.0]))
        gm = gate_metrics(gate, data, pol)
        lhs = naive_binned_ece(gate, data, scheme, pol).ece
        worst = max(worst, abs(lhs - naive_ece_identity(gm.type2, gm.accuracy)))
    elapsed = time.perf_counter() - t0
    _report(record_property, 2, f"max |ECE - R1(1-acc)| = {worst:.2e} over 20 datasets", elapsed, 5)
    assert worst <= 1e-10
    assert elapsed < 5


def test_criterion_03_accuracy_preserving_lower_bound(record_property):
    t0 = time.perf_counter()
    margins = []
    pol = TieBreakPolicy.seeded(0)
    for seed in range(20):
        data, _ = generate(GeneratorSpec(k=10, n=2000, seed=200 + seed))
        cal = data.with_probs(fit_temperature(data).apply_dataset(data))
        conf = cal.confidences()
        acc = data.accuracy(pol)
        assert acc < 1 and np.all((conf > 1 / data.k) & (conf < 1))
        margins.append(sup_binned_ece(cal, pol) - (1 - acc) / data.k)
    elapsed = time.perf_counter() - t0
    _report(record_property, 3, f"min(sup ECE - (1-acc)/k) = {min(margins):.4f} over 20 seeds", elapsed, 5)
    assert min(margins) > 0
    assert elapsed < 5


def test_criterion_04_metacal_lower_bound(record_property):
    t0 = time.perf_counter()
    margins, ws = [], []
    for seed in range(20):
        data, _ = generate(GeneratorSpec(k=10, n=7000, seed=300 + seed))
        fit, held = data.subset(np.arange(2000)), data.subset(np.arange(2000, 7000))
        model = fit_miscoverage(fit, 0.05, seed=seed)
        pol = TieBreakPolicy.seeded(seed)
        gm = gate_metrics(model, held, pol)
        lb = metacal_lower_bound(gm.accuracy, gm.type1, gm.type2, held.k)
        out = held.with_probs(model.apply_dataset(held).probs)
        margins.append(sup_binned_ece(out, pol) - lb.bound)
        if gm.type1 > 0 or gm.type2 < 1:
            ws.append(lb.w)
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        4,
        f"min(sup ECE - bound) = {min(margins):.4f}, max w = {max(ws):.4f} over {len(ws)} gates",
        elapsed,
        10,
    )
    assert min(margins) > 0
    assert len(ws) == 20 and max(ws) < 1
    assert elapsed < 10


def test_criterion_05_miscoverage_control(record_property, miscoverage_run):
    rep, elapsed = miscoverage_run
    s = rep.summary
    allowed = s["analytic_tail"] + 3 * s["monte_carlo_se"]
    _report(
        record_property,
        5,
        f"mean={s['mean']:.4f} sd={s['sd']:.4f} (limit {0.05 + 2 * s['sd']:.4f}); "
        f"population exceedance {s['population_violation_frequency']:.3f} <= {allowed:.3f}",
        elapsed,
        120,
    )
    assert s["completed"] == 40
    assert s["mean"] <= 0.05 + 2 * s["sd"]
    assert s["population_violation_frequency"] <= allowed
    assert elapsed < 120


def test_criterion_06_coverage_accuracy_control(record_property, coverage_run):
    rep, elapsed = coverage_run
    s = rep.summary
    beta = rep.target
    _report(
        record_property,
        6,
        f"beta={beta:.4f} mean={s['mean']:.4f} sd={s['sd']:.4f} |mean-beta|={abs(s['mean'] - beta):.4f}",
        elapsed,
        120,
    )
    assert s["completed"] == 40
    assert abs(s["mean"] - beta) <= 2 * s["sd"]
    assert abs(s["mean"] - beta) <= 0.02
    assert elapsed < 120


def test_criterion_07_binomial_tail(record_property):
    t0 = time.perf_counter()
    worst, checked, refused = 0.0, 0, 0
    for alpha in (0.01, 0.05, 0.1):
        for n1 in range(10, 201):
            v, ref = binomial_tail_mp(n1, alpha)
            if v > n1:
                # The tail sum is empty: no order statistic certifies alpha.
                with pytest.raises(ToleranceTooSmall):
                    miscoverage_tail(n1, alpha)
                refused += 1
                continue
            worst = max(worst, abs(miscoverage_tail(n1, alpha) - float(ref)))
            checked += 1
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        7,
        f"max abs error {worst:.2e} on {checked} pairs; {refused} pairs with v > n1 raise ToleranceTooSmall",
        elapsed,
        10,
    )
    assert worst <= 1e-12
    assert elapsed < 10


def test_criterion_08_pava(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        b = int(rng.integers(2, 7))
        n = int(rng.integers(b, 80))
        scores = rng.random(n)
        flags = rng.random(n) < rng.uniform(0.3, 0.95)
        fit = fit_coverage_transform(scores, flags, b)
        _, ys, ws, _ = coverage_points(scores, flags, b)
        worst = max(worst, float(np.max(np.abs(fit.values - monotone_lsq_bruteforce(ys, ws)))))
    elapsed = time.perf_counter() - t0
    _report(record_property, 8, f"max deviation from exhaustive fit {worst:.2e} over 200 cases", elapsed, 10)
    assert worst <= 1e-9
    assert elapsed < 10


def test_criterion_09_temperature_recovery(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for T0 in (0.5, 1.0, 2.5):
        for seed in range(10):
            data, _ = generate(GeneratorSpec(k=10, n=50_000, distortion_temperature=1 / T0, seed=900 + seed))
            worst = max(worst, abs(fit_temperature(data).T - T0))
    rng = np.random.default_rng(9)
    violations = 0
    for _ in range(100):
        k = int(rng.integers(2, 20))
        probs = rng.dirichlet(np.full(k, rng.uniform(0.2, 3.0)), size=10_000)
        probs = np.clip(probs, 1e-300, None)
        probs /= probs.sum(axis=1, keepdims=True)
        q = TemperatureModel(float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2)))), k).apply_batch(probs)
        same = (probs == probs.max(axis=1, keepdims=True)) == (q == q.max(axis=1, keepdims=True))
        violations += int((~same.all(axis=1)).sum())
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        9,
        f"max |T - T0| = {worst:.4f} over 30 fits; {violations} argmax changes in 1e6 applications",
        elapsed,
        60,
    )
    assert worst <= 0.1
    assert violations == 0
    assert elapsed < 60


def test_criterion_10_ece_improvement(record_property, miscoverage_run):
    rep, elapsed = miscoverage_run
    s = rep.summary
    _report(
        record_property,
        10,
        f"mean ECE uncal={s['mean_ece_uncal']:.4f} TS={s['mean_ece_ts']:.5f} Meta-Cal={s['mean_ece_metacal']:.5f}",
        elapsed,
        120,
    )
    assert s["completed"] == 40
    assert s["mean_ece_metacal"] < s["mean_ece_ts"]
    assert elapsed < 120


def test_criterion_11_cli_roundtrip(record_property, tmp_path, capsys):
    t0 = time.perf_counter()
    d, m, o = tmp_path / "d.csv", tmp_path / "m.json", tmp_path / "o.csv"
    codes = [
        main(["synth", "--n", "5000", "--seed", "11", "--out", str(d)]),
        main(["fit", "--data", str(d), "--mode", "miscoverage", "--alpha", "0.05", "--seed", "3", "--out", str(m)]),
        main(["apply", "--model", str(m), "--data", str(d), "--out", str(o)]),
        main(["evaluate", "--model", str(m), "--data", str(d), "--out", str(tmp_path / "e.json")]),
    ]
    capsys.readouterr()
    data = read_dataset(d)
    in_memory = fit_miscoverage(data, 0.05, seed=3)
    sample = data.subset(np.arange(1000))
    expected = in_memory.apply_dataset(sample)
    loaded = read_model(m).apply_dataset(sample)
    _, written = read_outputs(o)
    exact = (
        np.array_equal(loaded.probs, expected.probs)
        and np.array_equal(loaded.accepted, expected.accepted)
        and np.array_equal(written.probs[:1000], expected.probs)
    )
    report = json.loads((tmp_path / "e.json").read_text())
    elapsed = time.perf_counter() - t0
    _report(record_property, 11, f"exit codes {codes}; bit-exact on 1000 samples: {exact}", elapsed, 30)
    assert codes == [0, 0, 0, 0]
    assert exact
    assert {"before", "after", "gate_metrics", "bounds"} <= set(report)
    assert elapsed < 30
