"""Command-line interface.

Exit codes: 0 success, 2 invalid input or usage, 3 the method could not
produce a result. Errors go to stderr as JSON ``{code, message, context}``;
stdout carries only the result document.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import io as mio
from .binning import BinningScheme, binned_ece, bin_report, sup_ece
from .bounds import ece_lower_bound_acc_preserving, gate_metrics, metacal_lower_bound, miscoverage_tail
from .core import TieBreakPolicy, correctness
from .errors import AllRunsFailed, MetaCalError, SchemaError, ValidationError
from .harness import VerifyConfig, monte_carlo_verify
from .model import MetaCalModel, fit_coverage, fit_miscoverage, gate_split
from .synthgen import GeneratorSpec, generate

log = logging.getLogger("metacal")


class UsageError(ValidationError):
    code = "USAGE"


class FlagMismatch(ValidationError):
    code = "FLAG_MISMATCH"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message, prog=self.prog)


def _emit(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _policy(name: str, seed: int) -> TieBreakPolicy:
    return {"seeded": TieBreakPolicy.seeded(seed), "lowest": TieBreakPolicy.lowest(), "expected": TieBreakPolicy.expected()}[name]


def cmd_synth(args) -> int:
    spec = GeneratorSpec(k=args.k, n=args.n, logit_scale=args.logit_scale, distortion_temperature=args.tdist, seed=args.seed)
    data, truth = generate(spec)
    out = Path(args.out)
    mio.write_dataset(out, data, logits=args.logits)
    sidecar = out.with_suffix(".truth.json")
    mio.write_json(sidecar, truth.to_dict())
    _emit({"dataset": str(out), "ground_truth": str(sidecar), "n": data.n, "k": data.k,
           "population_accuracy": truth.accuracy})
    return 0


def _fit_summary(model: MetaCalModel, data, seed: int) -> dict[str, Any]:
    _, base_idx = gate_split(data.n, seed)
    doc: dict[str, Any] = {"mode": model.mode}
    if model.mode == "miscoverage":
        doc["alpha"] = model.alpha
    else:
        doc["beta"] = model.beta
    doc.update(
        threshold=model.gate.threshold,
        ranker=model.gate.ranker_id,
        base_temperature=getattr(model.base, "T", None),
        **{k: v for k, v in model.info.items() if k != "transform"},
    )
    if base_idx.size:
        doc["training_metrics"] = gate_metrics(model, data.subset(base_idx), TieBreakPolicy.seeded(seed)).to_dict()
    return doc


def cmd_fit(args) -> int:
    if args.mode == "miscoverage":
        if args.alpha is None or args.beta is not None:
            raise FlagMismatch("--mode miscoverage takes --alpha and not --beta")
    elif args.alpha is not None or args.beta is None:
        raise FlagMismatch("--mode coverage takes --beta and not --alpha")
    data = mio.read_dataset(args.data, one_based_labels=args.one_based_labels)
    if args.mode == "miscoverage":
        model = fit_miscoverage(data, args.alpha, seed=args.seed)
    else:
        model = fit_coverage(data, args.beta, b=args.bins, seed=args.seed, interpolate=not args.step_inversion)
    mio.write_model(args.out, model)
    _emit(_fit_summary(model, data, args.seed))
    return 0


def cmd_apply(args) -> int:
    model = mio.read_model(args.model)
    data = mio.read_dataset(args.data, one_based_labels=args.one_based_labels)
    out = model.apply_dataset(data)
    mio.atomic_write_text(args.out, mio.outputs_csv(out, data.ids))
    _emit({"out": args.out, "n": data.n, "accepted": int(out.accepted.sum()), "rejected": int((~out.accepted).sum())})
    return 0


def evaluation_report(model: MetaCalModel, data, bins: int, policy: TieBreakPolicy) -> dict[str, Any]:
    """ECE before/after, gate metrics and the analytic bounds for ``data``."""
    scheme = BinningScheme.equal_width(bins)
    out = model.apply_dataset(data)
    before = binned_ece(data, scheme, policy)
    hits_after = correctness(out.probs, data.labels, policy)
    conf_after = out.probs.max(axis=1)
    after = bin_report(conf_after, hits_after, scheme)
    gm = gate_metrics(model, data, policy)
    bounds: dict[str, Any] = {
        "ece_lower_bound_acc_preserving": ece_lower_bound_acc_preserving(gm.accuracy, data.k),
        "metacal_lower_bound": None,
        "w": None,
        "miscoverage_tail": None,
    }
    if gm.type1 is not None and gm.type2 is not None:
        lb = metacal_lower_bound(gm.accuracy, gm.type1, gm.type2, data.k)
        bounds.update(metacal_lower_bound=lb.bound, w=lb.w)
    n1 = model.info.get("n1")
    if model.mode == "miscoverage" and n1:
        try:
            bounds["miscoverage_tail"] = miscoverage_tail(int(n1), model.alpha)
        except MetaCalError:
            pass
    return {
        "n": data.n,
        "k": data.k,
        "bins": bins,
        "policy": policy.mode,
        "mode": model.mode,
        "before": {**before.to_dict(), "sup_ece": sup_ece(data.confidences(), data.correct(policy))},
        "after": {**after.to_dict(), "sup_ece": sup_ece(conf_after, hits_after)},
        "gate_metrics": gm.to_dict(),
        "bounds": bounds,
    }


def cmd_evaluate(args) -> int:
    model = mio.read_model(args.model)
    data = mio.read_dataset(args.data, one_based_labels=args.one_based_labels)
    report = evaluation_report(model, data, args.bins, _policy(args.policy, args.seed))
    if args.out:
        mio.write_json(args.out, report)
    _emit(report)
    return 0


def cmd_verify_bounds(args) -> int:
    doc = mio.read_json(args.spec)
    if not isinstance(doc, dict):
        raise SchemaError("verification spec must be a JSON object", path=args.spec)
    doc["runs"] = args.runs
    doc["seed"] = args.seed
    if args.population_size is not None:
        doc["population_size"] = args.population_size
    try:
        config = VerifyConfig.from_dict(doc)
    except TypeError as exc:
        raise SchemaError(f"bad verification spec: {exc}", path=args.spec) from None
    report = monte_carlo_verify(config)
    out = Path(args.out)
    mio.write_json(out, report.to_dict())
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    mio.atomic_write_text(csv_path, report.to_csv())
    _emit({"report": str(out), "csv": str(csv_path), "summary": report.summary})
    if not report.runs:
        raise AllRunsFailed("every Monte Carlo run failed", failures=report.failures[:5])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="metacal", description="Meta-Cal post-hoc calibration toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic miscalibrated dataset")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--n", type=int, default=15000)
    s.add_argument("--tdist", type=float, default=0.5, help="distortion temperature of the emitted outputs")
    s.add_argument("--logit-scale", type=float, default=GeneratorSpec.logit_scale)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--logits", action="store_true", help="write z columns instead of p columns")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a Meta-Cal model")
    f.add_argument("--data", required=True)
    f.add_argument("--mode", choices=["miscoverage", "coverage"], required=True)
    f.add_argument("--alpha", type=float)
    f.add_argument("--beta", type=float)
    f.add_argument("--bins", type=int, default=None, help="uniform-mass bins for the coverage transform")
    f.add_argument("--step-inversion", action="store_true", help="invert the coverage transform at knots only")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--one-based-labels", action="store_true")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("apply", help="calibrate a dataset with a fitted model")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--one-based-labels", action="store_true")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_apply)

    e = sub.add_parser("evaluate", help="ECE, gate metrics and bounds for a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--bins", type=int, default=15)
    e.add_argument("--policy", choices=["seeded", "lowest", "expected"], default="seeded")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--one-based-labels", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    vb = sub.add_parser("verify-bounds", help="Monte Carlo check of the constraint guarantees")
    vb.add_argument("--spec", required=True, help="JSON generator spec plus alpha, beta or beta_offset")
    vb.add_argument("--runs", type=int, default=40)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--population-size", type=int, default=None)
    vb.add_argument("--out", required=True)
    vb.add_argument("--csv", help="plot-ready CSV path (default: --out with .csv suffix)")
    vb.set_defaults(func=cmd_verify_bounds)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        return args.func(args)
    except MetaCalError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), default=str) + "\n")
        return exc.exit_code
    except OSError as exc:
        err = {"code": "IO_ERROR", "message": str(exc), "context": {"path": getattr(exc, "filename", None)}}
        sys.stderr.write(json.dumps(err, default=str) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
