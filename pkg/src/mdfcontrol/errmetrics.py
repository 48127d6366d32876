"""False discoveries, discoveries, FDP and missed-discovery proportion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GroundTruth:
    null_set: frozenset
    alt_set: frozenset

    def __post_init__(self):
        object.__setattr__(self, "null_set", frozenset(self.null_set))
        object.__setattr__(self, "alt_set", frozenset(self.alt_set))
        if self.null_set & self.alt_set:
            raise ValueError("null and alternative sets must be disjoint")

    @property
    def ids(self):
        return self.null_set | self.alt_set


@dataclass(frozen=True)
class ErrorCounts:
    s0: int
    s: int
    fdp: float
    missed_prop: float


@dataclass(frozen=True)
class RateEstimates:
    fwer_hat: float
    fdr_hat: float
    mdr_hat: float
    se_fwer: float
    se_fdr: float
    se_mdr: float
    replicates: int

    def to_dict(self):
        return {
            "fwer_hat": self.fwer_hat,
            "fdr_hat": self.fdr_hat,
            "mdr_hat": self.mdr_hat,
            "se_fwer": self.se_fwer,
            "se_fdr": self.se_fdr,
            "se_mdr": self.se_mdr,
            "replicates": self.replicates,
        }


def count_errors(outcome, truth: GroundTruth):
    """Error counts of one outcome (anything with a ``rejected`` id collection)."""
    rejected = set(outcome.rejected)
    unknown = rejected - truth.ids
    if unknown:
        raise ValueError(f"rejected ids not in ground truth: {sorted(unknown)[:5]}")
    s = len(rejected)
    s0 = len(rejected & truth.null_set)
    fdp = s0 / s if s > 0 else 0.0
    m1 = len(truth.alt_set)
    missed = (m1 - len(rejected & truth.alt_set)) / m1 if m1 > 0 else 0.0
    return ErrorCounts(s0, s, fdp, missed)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    mean = float(np.mean(x))
    # plug-in SD, two-pass
    sd = float(np.sqrt(np.mean((x - mean) ** 2)))
    return mean, float(sd / np.sqrt(x.size))


def rates_from_arrays(s0, fdp, missed):
    s0 = np.asarray(s0)
    if s0.size == 0:
        raise ValueError("need at least one replicate")
    fwer, se_fwer = _mean_se(s0 >= 1)
    fdr, se_fdr = _mean_se(fdp)
    mdr, se_mdr = _mean_se(missed)
    return RateEstimates(fwer, fdr, mdr, se_fwer, se_fdr, se_mdr, int(s0.size))


def estimate_rates(counts):
    """Monte Carlo FWER, FDR and MDR with standard errors ``SD / sqrt(n)``."""
    counts = list(counts)
    if not counts:
        raise ValueError("need at least one replicate")
    return rates_from_arrays(
        [c.s0 for c in counts], [c.fdp for c in counts], [c.missed_prop for c in counts]
    )
