from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdfcontrol.errmetrics import ErrorCounts, GroundTruth, count_errors, estimate_rates, rates_from_arrays


def out(*ids):
    return SimpleNamespace(rejected=tuple(ids))


TRUTH = GroundTruth({1, 2, 3}, {4, 5})


class TestCount:
    def test_empty_rejection(self):
        assert count_errors(out(), TRUTH) == ErrorCounts(0, 0, 0.0, 1.0)

    def test_hand_count(self):
        assert count_errors(out(3, 4), TRUTH) == ErrorCounts(1, 2, 0.5, 0.5)

    def test_all_null(self):
        c = count_errors(out(1), GroundTruth({1, 2}, set()))
        assert (c.fdp, c.missed_prop) == (1.0, 0.0)

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            count_errors(out(9), TRUTH)

    def test_overlap(self):
        with pytest.raises(ValueError):
            GroundTruth({1, 2}, {2, 3})


class TestEstimate:
    def test_single(self):
        r = estimate_rates([ErrorCounts(0, 1, 0.0, 0.0)])
        assert r.fwer_hat == 0.0 and r.replicates == 1

    def test_mean_fdp(self):
        r = estimate_rates([ErrorCounts(0, 1, 0.0, 0.0), ErrorCounts(1, 2, 0.5, 0.0)])
        assert r.fdr_hat == 0.25
        assert r.fwer_hat == 0.5
        assert r.se_fdr == pytest.approx(0.25 / np.sqrt(2))

    def test_identical_zero_se(self):
        r = estimate_rates([ErrorCounts(1, 3, 1 / 3, 0.5)] * 7)
        assert (r.se_fwer, r.se_fdr, r.se_mdr) == (0.0, 0.0, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            estimate_rates([])

    def test_to_dict(self):
        d = estimate_rates([ErrorCounts(0, 0, 0.0, 1.0)]).to_dict()
        assert d["mdr_hat"] == 1.0 and d["replicates"] == 1


subsets = st.sets(st.integers(1, 12))


@given(st.lists(st.tuples(subsets, subsets), min_size=1, max_size=30))
def test_count_invariants_and_fwer_ge_fdr(cases):
    nulls, alts = set(range(1, 7)), set(range(7, 13))
    truth = GroundTruth(nulls, alts)
    counts = [count_errors(out(*(a | b)), truth) for a, b in cases]
    for c in counts:
        assert 0 <= c.s0 <= c.s
        assert 0.0 <= c.fdp <= 1.0 and 0.0 <= c.missed_prop <= 1.0
    r = estimate_rates(counts)
    assert r.fwer_hat >= r.fdr_hat


@given(st.lists(subsets, min_size=1, max_size=30))
def test_all_null_fdr_equals_fwer(rejections):
    truth = GroundTruth(set(range(1, 13)), set())
    counts = [count_errors(out(*r), truth) for r in rejections]
    assert {c.fdp for c in counts} <= {0.0, 1.0}
    r = estimate_rates(counts)
    assert r.fdr_hat == r.fwer_hat


def test_arrays_route_matches():
    rng = np.random.default_rng(5)
    s0 = rng.integers(0, 3, 50)
    fdp = rng.uniform(size=50) * (s0 > 0)
    missed = rng.uniform(size=50)
    a = rates_from_arrays(s0, fdp, missed)
    b = estimate_rates([ErrorCounts(int(x), 3, float(f), float(m)) for x, f, m in zip(s0, fdp, missed)])
    assert a == b
