"""Classes of FWER- and FDR-controlling multiple decision functions.

Any admissible multiple-decision size family turns a battery of tests into a
step-down rule that strongly controls the FWER (``reject_dagger``) and a
step-up rule that controls the FDR (``reject_star``). Sidak sizes recover the
step-down Sidak and Benjamini-Hochberg procedures.
"""
__version__ = "0.1.0"

from .errmetrics import ErrorCounts, GroundTruth, RateEstimates, count_errors, estimate_rates
from .optsize import RocModel, WeightSolution, build_optimal_family, optimize_weights_at_alpha, roc_normal_shift
from .procedures import (
    ProcedureOutcome,
    alpha_dagger,
    alpha_star,
    bh_stepup,
    holm_sidak_stepdown,
    j_dagger,
    j_star,
    reject,
    reject_dagger,
    reject_star,
)
from .pvalues import GeneralizedPValues, TestBattery, anti_ranks, generalized_pvalues, randomized_pvalue, read_battery_csv
from .simlab import SimConfig, SimResult, check_bounds, gen_replicate, run_experiment
from .sizefam import (
    SizeFamily,
    SizeFunction,
    ValidationReport,
    bonferroni_size,
    invert_size,
    load_family,
    sidak_size,
    validate_family,
    weighted_size,
)
