"""Meta-Cal: post-hoc multi-class calibration with a ranking-based gate.

A base calibrator (temperature scaling by default) handles inputs the gate
accepts; rejected inputs are mapped to the uniform distribution. The gate
threshold is chosen to control either the miscoverage rate or the coverage
accuracy of the composed map.
"""

from .binning import BinningScheme, BinReport, binned_ece, sup_binned_ece, uniform_mass_edges
from .bounds import (
    GateMetrics,
    coverage_deviation_bound,
    ece_lower_bound_acc_preserving,
    gate_metrics,
    gaussian_chernoff,
    metacal_lower_bound,
    miscoverage_tail,
    naive_ece_identity,
)
from .calibrators import (
    CalibrationMap,
    IdentityCalibrator,
    TemperatureModel,
    apply_temperature,
    fit_temperature,
    identity_calibrator,
)
from .core import (
    Dataset,
    LabeledSample,
    Prediction,
    ProbVector,
    TieBreakPolicy,
    predict,
    softmax_from_logits,
    validate_prob_vector,
)
from .gate import (
    Decision,
    Gate,
    IsotonicFit,
    classify,
    fit_coverage_transform,
    invert_transform,
    order_statistic_threshold,
)
from .harness import VerifyConfig, VerifyReport, monte_carlo_verify
from .model import CalibratedOutput, MetaCalModel, apply, fit_coverage, fit_miscoverage, naive_apply
from .ranking import EntropyRanker, RankingModel, entropy_score
from .synthgen import GeneratorSpec, GroundTruth, generate

__version__ = "0.1.0"
