"""Tests for partial-identification bounds.

The closed-form route (frozen dual-vertex expressions) and the LP route
(scipy over the response-type simplex) are developed independently and must
agree to near machine precision on every feasible table.
"""

import os
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superregime.bounds import (
    CELL_ORDER,
    RESPONSE_TYPES,
    TrialCounts,
    balke_pearl_ate_bounds,
    feasibility_slack,
    lp_oracle_bounds,
    marginal_mean_bounds,
    natural_att_bounds,
    random_feasible_counts,
)
from superregime.core import NumericalError, ValidationError

DATA = os.path.join(os.path.dirname(__file__), "..", "data", "vitamin_a_counts.csv")


def counts_from_type_masses(masses):
    """Independent re-derivation of the observable table implied by integer
    response-type masses (same mass observed under both instrument arms)."""
    arr = np.zeros((2, 2, 2), dtype=np.int64)
    for t, m in zip(RESPONSE_TYPES, masses):
        for z in (0, 1):
            a = t[z]
            y = t[2 + a]
            arr[y, a, z] += m
    return TrialCounts(n=arr), np.asarray(masses) / np.asarray(masses).sum()


class TestTrialCounts:
    def test_shape_enforced(self):
        with pytest.raises(ValidationError):
            TrialCounts(n=np.zeros((2, 2)))

    def test_negative_rejected(self):
        arr = np.ones((2, 2, 2), dtype=int)
        arr[0, 0, 0] = -1
        with pytest.raises(ValidationError):
            TrialCounts(n=arr)

    def test_empty_arm_rejected(self):
        arr = np.zeros((2, 2, 2), dtype=int)
        arr[:, :, 1] = 5
        with pytest.raises(ValidationError, match="z=0"):
            TrialCounts(n=arr)

    def test_non_integer_rejected(self):
        with pytest.raises(ValidationError, match="integers"):
            TrialCounts(n=np.full((2, 2, 2), 0.5))

    def test_csv_round(self):
        text = "y,a,z,count\n0,0,0,5\n1,0,0,5\n0,0,1,2\n1,1,1,8\n"
        counts = TrialCounts.from_csv(text)
        assert counts.total == 20
        assert counts.arm_total(0) == 10
        assert counts.n[1, 1, 1] == 8

    def test_csv_bad_header(self):
        with pytest.raises(ValidationError, match="columns"):
            TrialCounts.from_csv("y,a,count\n0,0,5\n")

    def test_csv_duplicate_cell(self):
        with pytest.raises(ValidationError, match="duplicate"):
            TrialCounts.from_csv("y,a,z,count\n0,0,0,5\n0,0,0,3\n1,1,1,2\n")

    def test_cell_probs_order(self):
        arr = np.zeros((2, 2, 2), dtype=int)
        arr[1, 0, 0] = 3  # cell (z=0, y=1, a=0)
        arr[0, 1, 1] = 1  # cell (z=1, y=0, a=1)
        counts = TrialCounts(n=arr)
        p = counts.cell_probs()
        assert p[CELL_ORDER.index((0, 1, 0))] == 1.0
        assert p[CELL_ORDER.index((1, 0, 1))] == 1.0


class TestClosedFormAgainstLp:
    def test_random_feasible_tables(self, rng):
        for _ in range(120):
            counts = random_feasible_counts(rng, scale=rng.integers(50, 5000))
            ate = balke_pearl_ate_bounds(counts)
            ate_lp = lp_oracle_bounds(counts, "ate")
            assert ate.lo == pytest.approx(ate_lp.lo, abs=1e-9)
            assert ate.hi == pytest.approx(ate_lp.hi, abs=1e-9)
            for a, name in ((1, "y1"), (0, "y0")):
                cf = marginal_mean_bounds(counts, a)
                lp = lp_oracle_bounds(counts, name)
                assert cf.lo == pytest.approx(lp.lo, abs=1e-9)
                assert cf.hi == pytest.approx(lp.hi, abs=1e-9)

    def test_att_routes_agree(self, rng):
        for _ in range(40):
            counts = random_feasible_counts(rng, scale=1000)
            for natural_a, name in ((1, "att1"), (0, "att0")):
                try:
                    cf = natural_att_bounds(counts, natural_a)
                except NumericalError:
                    continue  # empty stratum
                lp = lp_oracle_bounds(counts, name)
                assert cf.lo == pytest.approx(lp.lo, abs=1e-9)
                assert cf.hi == pytest.approx(lp.hi, abs=1e-9)

    def test_sharpness_contains_generating_law(self, rng):
        # the generating type distribution is a feasible witness, so its own
        # effect must fall inside the bounds
        for _ in range(60):
            masses = rng.multinomial(800, rng.dirichlet(np.ones(16)))
            counts, q = counts_from_type_masses(masses)
            true_ate = sum(qt * (t[3] - t[2]) for qt, t in zip(q, RESPONSE_TYPES))
            ate = balke_pearl_ate_bounds(counts)
            assert ate.lo - 1e-9 <= true_ate <= ate.hi + 1e-9
            for a in (0, 1):
                true_mean = sum(qt * t[2 + a] for qt, t in zip(q, RESPONSE_TYPES))
                mb = marginal_mean_bounds(counts, a)
                assert mb.lo - 1e-9 <= true_mean <= mb.hi + 1e-9
                assert -1e-9 <= mb.lo and mb.hi <= 1 + 1e-9

    def test_mixture_envelope(self, rng):
        # mixing the stratum effect intervals by stratum shares must contain
        # the sharp marginal effect interval
        for _ in range(40):
            counts = random_feasible_counts(rng, scale=1500)
            p1 = counts.p_treated()
            if p1 in (0.0, 1.0):
                continue
            ate = balke_pearl_ate_bounds(counts)
            att1 = natural_att_bounds(counts, 1)
            att0 = natural_att_bounds(counts, 0)
            env_lo = p1 * att1.lo + (1 - p1) * att0.lo
            env_hi = p1 * att1.hi + (1 - p1) * att0.hi
            assert ate.lo >= env_lo - 1e-9
            assert ate.hi <= env_hi + 1e-9


class TestInfeasibleTables:
    def _infeasible_counts(self):
        # z=0 arm: every treated unit survives; z=1 arm: every treated unit dies.
        # Both cannot come from one response-type law with these margins.
        arr = np.zeros((2, 2, 2), dtype=int)
        arr[1, 1, 0] = 10
        arr[0, 1, 1] = 10
        return TrialCounts(n=arr)

    def test_closed_form_reports(self):
        counts = self._infeasible_counts()
        assert feasibility_slack(counts) > 0.5
        with pytest.raises(NumericalError, match="infeasible"):
            balke_pearl_ate_bounds(counts)
        with pytest.raises(NumericalError, match="infeasible"):
            marginal_mean_bounds(counts, 1)

    def test_lp_reports(self):
        with pytest.raises(NumericalError, match="infeasible"):
            lp_oracle_bounds(self._infeasible_counts(), "ate")

    def test_feasibility_check_matches_lp(self, rng):
        # random arm pairs, frequently infeasible: the inequality test and the
        # LP must classify identically
        for _ in range(60):
            arr = rng.integers(0, 30, size=(2, 2, 2))
            arr[:, :, 0] += 1  # keep arms nonempty
            arr[:, :, 1] += 1
            counts = TrialCounts(n=arr)
            ok_ineq = feasibility_slack(counts) <= 1e-9
            try:
                lp_oracle_bounds(counts, "ate")
                ok_lp = True
            except NumericalError:
                ok_lp = False
            assert ok_ineq == ok_lp

    def test_unknown_estimand(self, rng):
        counts = random_feasible_counts(rng)
        with pytest.raises(ValidationError, match="estimand"):
            lp_oracle_bounds(counts, "rr")


@pytest.fixture(scope="module")
def counts():
    return TrialCounts.load(DATA)


@pytest.mark.skipif(not os.path.exists(DATA), reason="trial counts data file not present")
class TestVitaminATrial:
    """Published numbers for the classic vitamin A encouragement trial."""

    def test_margins(self, counts):
        assert counts.total == 23682
        assert counts.arm_total(0) == 11588
        assert counts.arm_total(1) == 12094

    def test_effect_bounds(self, counts):
        ate = balke_pearl_ate_bounds(counts)
        assert ate.lo == pytest.approx(-0.1946, abs=5e-4)
        assert ate.hi == pytest.approx(0.0054, abs=5e-4)

    def test_one_sided_compliance_point(self, counts):
        # nobody in the z=0 arm took treatment, so E(Y^0) is a point
        assert counts.n[:, 1, 0].sum() == 0
        y0 = marginal_mean_bounds(counts, 0)
        assert y0.width <= 1e-12
        assert y0.lo == pytest.approx(11514 / 11588, abs=1e-12)

    def test_effect_among_treated(self, counts):
        att1 = natural_att_bounds(counts, 1)
        assert att1.width <= 1e-12
        assert att1.lo == pytest.approx(0.0032, abs=5e-4)

    def test_effect_among_untreated(self, counts):
        att0 = natural_att_bounds(counts, 0)
        assert att0.lo == pytest.approx(-0.33, abs=5e-3)
        assert att0.hi == pytest.approx(0.0069, abs=5e-3)

    def test_lp_agrees(self, counts):
        for estimand, cf in (
            ("ate", balke_pearl_ate_bounds(counts)),
            ("att1", natural_att_bounds(counts, 1)),
            ("att0", natural_att_bounds(counts, 0)),
        ):
            lp = lp_oracle_bounds(counts, estimand)
            assert cf.lo == pytest.approx(lp.lo, abs=1e-9)
            assert cf.hi == pytest.approx(lp.hi, abs=1e-9)


class TestBoundsProperties:
    @given(st.lists(st.integers(0, 50), min_size=16, max_size=16))
    @settings(max_examples=60, deadline=None)
    def test_type_generated_tables_always_feasible(self, masses):
        if sum(masses) == 0:
            masses = [1] + masses[1:]
        counts, _ = counts_from_type_masses(masses)
        assert feasibility_slack(counts) <= 1e-12
        ate = balke_pearl_ate_bounds(counts)
        assert -1 - 1e-12 <= ate.lo <= ate.hi <= 1 + 1e-12
