"""Tests for the confounding diagnostic: envelopes, verdicts, and the
conservative bootstrap rule."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superregime.core import (
    IntervalBound,
    NumericalError,
    Regime,
    ValidationError,
    validate_dataset,
)
from superregime.diagnose import (
    Coarsening,
    confounding_check,
    confounding_intervals,
    diagnose_dataset,
    diagnose_law,
)
from superregime.diagnose import tested_means as stratum_means
from superregime.estimate import EstimationConfig
from superregime.identify import ObservedLaw, optimal_rule
from superregime.simulate import StructuralLaw, draw_sample, random_law

EMPTY = ()


def mixed_confounding_law() -> StructuralLaw:
    """Two contexts: (0,) heavily confounded (Y and A both driven by U),
    (1,) exchangeable (uptake ignores U)."""
    return StructuralLaw(
        covariates=("w",),
        p_l={(0,): 0.5, (1,): 0.5},
        p_u={0: 0.5, 1: 0.5},
        p_a_given_zlu=(
            {(z, (0,), u): 0.2 + 0.6 * u + 0.15 * z for z in (0, 1) for u in (0, 1)}
            | {(z, (1,), u): 0.3 + 0.3 * z for z in (0, 1) for u in (0, 1)}
        ),
        mean_y_given_alu=(
            {(a, (0,), u): float(u) for a in (0, 1) for u in (0, 1)}
            | {(a, (1,), u): 0.3 + 0.4 * a + 0.1 * u for a in (0, 1) for u in (0, 1)}
        ),
        p_z_given_l={(0,): 0.5, (1,): 0.5},
        outcome_noise="bernoulli",
    )


class TestCoarsening:
    def test_identity_and_pooled(self):
        contexts = [(0,), (1,)]
        ident = Coarsening.identity(contexts)
        assert ident.context_strata() == [(0,), (1,)]
        assert ident.contexts_in((0,)) == [(0,)]
        pooled = Coarsening.pooled(contexts)
        assert pooled.context_strata() == ["all"]
        assert pooled.contexts_in("all") == contexts
        assert Coarsening.pooled_actions(contexts).action_map == {0: "all", 1: "all"}

    def test_action_map_must_cover_both_values(self):
        with pytest.raises(ValidationError, match="both treatment values"):
            Coarsening(action_map={0: "x"}, context_map={(): ()})

    def test_context_map_must_be_nonempty(self):
        with pytest.raises(ValidationError, match="at least one context"):
            Coarsening(action_map={0: 0, 1: 1}, context_map={})

    def test_validate_against_reports_missing_contexts(self):
        co = Coarsening.identity([(0,)])
        with pytest.raises(ValidationError, match="lacks labels"):
            co.validate_against([(0,), (1,)])


class TestEnvelopes:
    def test_example1_trivial_coarsening_is_degenerate(self, example1):
        # Both counterfactual means are zero, so the attainable envelope
        # collapses to the point {0} no matter how contexts are pooled.
        olaw = ObservedLaw.from_structural_law(example1)
        intervals = confounding_intervals(olaw, Coarsening.pooled(olaw.contexts))
        assert intervals["all"].lo == pytest.approx(0.0, abs=1e-12)
        assert intervals["all"].hi == pytest.approx(0.0, abs=1e-12)

    def test_single_context_envelope_spans_the_two_arms(self, example1):
        olaw = ObservedLaw.from_structural_law(example1)
        intervals = confounding_intervals(
            olaw,
            Coarsening.identity(olaw.contexts),
            psi1_table={(0, EMPTY): 0.4, (1, EMPTY): 0.5},
        )
        assert intervals[EMPTY].lo == pytest.approx(0.4, abs=1e-12)
        assert intervals[EMPTY].hi == pytest.approx(0.5, abs=1e-12)

    def test_pooled_envelope_is_the_mass_weighted_mix(self):
        from superregime.identify import counterfactual_mean

        olaw = ObservedLaw.from_structural_law(mixed_confounding_law())
        pooled = confounding_intervals(olaw, Coarsening.pooled(olaw.contexts))["all"]
        lo = sum(
            olaw.p_l[l] * min(counterfactual_mean(olaw, 0, l), counterfactual_mean(olaw, 1, l))
            for l in olaw.contexts
        )
        hi = sum(
            olaw.p_l[l] * max(counterfactual_mean(olaw, 0, l), counterfactual_mean(olaw, 1, l))
            for l in olaw.contexts
        )
        assert pooled.lo == pytest.approx(lo, abs=1e-12)
        assert pooled.hi == pytest.approx(hi, abs=1e-12)

    def test_empty_stratum_raises(self, example1):
        olaw = ObservedLaw.from_structural_law(example1)
        co = Coarsening(action_map={0: 0, 1: 1}, context_map={EMPTY: "seen", (9,): "ghost"})
        with pytest.raises(NumericalError, match="empty context stratum"):
            confounding_intervals(olaw, co)


class TestCheckRule:
    INTERVALS = {"c": IntervalBound(0.2, 0.6)}

    def probe(self, value):
        return {("b", "c"): {"observed_mean": value, "regime_value": 0.4, "weight": 1.0}}

    def test_point_rule_inside_and_outside(self):
        assert not confounding_check(self.INTERVALS, self.probe(0.35)).any_violation
        report = confounding_check(self.INTERVALS, self.probe(0.75))
        assert [f.quantity for f in report.violations] == ["observed_mean"]

    def test_point_rule_boundary_needs_tolerance(self):
        just_out = 0.6 + 1e-13
        assert confounding_check(self.INTERVALS, self.probe(just_out)).any_violation
        assert not confounding_check(self.INTERVALS, self.probe(just_out), tol=1e-10).any_violation

    def test_conservative_rule_requires_whole_ci_outside(self):
        cis = {("b", "c", "observed_mean"): (0.55, 0.9), ("b", "c", "regime_value"): (0.3, 0.5)}
        report = confounding_check(self.INTERVALS, self.probe(0.75), tested_cis=cis)
        assert not report.any_violation  # CI reaches back into the envelope
        cis = {("b", "c", "observed_mean"): (0.65, 0.9), ("b", "c", "regime_value"): (0.3, 0.5)}
        report = confounding_check(self.INTERVALS, self.probe(0.75), tested_cis=cis)
        assert [f.quantity for f in report.violations] == ["observed_mean"]

    def test_envelope_widening_absorbs_violations(self):
        cis = {("b", "c", "observed_mean"): (0.65, 0.9), ("b", "c", "regime_value"): (0.3, 0.5)}
        report = confounding_check(
            self.INTERVALS, self.probe(0.75), tested_cis=cis, interval_cis={"c": (0.15, 0.7)}
        )
        assert not report.any_violation
        widened = report.findings[0].widened_envelope
        assert (widened.lo, widened.hi) == (0.15, 0.7)


class TestPopulationDetection:
    @pytest.mark.parametrize("which", [1, 2])
    def test_examples_are_flagged(self, which, example1, example2):
        law = {1: example1, 2: example2}[which]
        report = diagnose_law(ObservedLaw.from_structural_law(law))
        assert report.any_violation
        observed = [f for f in report.findings if f.quantity == "observed_mean"]
        assert all(f.verdict == "violated" for f in observed)

    def test_example1_reports_the_arm_means(self, example1):
        report = diagnose_law(ObservedLaw.from_structural_law(example1))
        values = {f.action_label: f.value for f in report.findings if f.quantity == "observed_mean"}
        assert values[1] == pytest.approx(3 / 13, abs=1e-12)
        assert values[0] == pytest.approx(3 / 7, abs=1e-12)

    def test_example3_is_flagged(self, example3):
        assert diagnose_law(ObservedLaw.from_structural_law(example3)).any_violation

    def test_only_the_confounded_context_is_flagged(self):
        olaw = ObservedLaw.from_structural_law(mixed_confounding_law())
        report = diagnose_law(olaw)
        assert report.any_violation
        assert {f.context_label for f in report.violations} == {(0,)}
        contained = [f for f in report.findings if f.verdict == "contained"]
        assert {f.context_label for f in contained} == {(1,)}

    def test_exchangeable_laws_never_flagged(self, rng):
        for i in range(200):
            law = random_law(rng, "exchangeable", n_covariates=1 + i % 2)
            report = diagnose_law(ObservedLaw.from_structural_law(law), tol=1e-10)
            assert not report.any_violation, report.to_text()

    def test_exchangeable_laws_never_flagged_when_pooled(self, rng):
        for _ in range(60):
            law = random_law(rng, "exchangeable", n_covariates=2)
            olaw = ObservedLaw.from_structural_law(law)
            report = diagnose_law(olaw, Coarsening.pooled(olaw.contexts), tol=1e-10)
            assert not report.any_violation, report.to_text()

    @settings(max_examples=25, deadline=None)
    @given(labels=st.lists(st.integers(0, 2), min_size=4, max_size=4), seed=st.integers(0, 10**6))
    def test_action_pooling_sound_under_any_context_grouping(self, labels, seed):
        # Pooling the natural treatment keeps the stratum weights at P(l | c),
        # so containment must hold for every context grouping.
        law = random_law(np.random.default_rng(seed), "exchangeable", n_covariates=2)
        olaw = ObservedLaw.from_structural_law(law)
        co = Coarsening(
            action_map={0: "all", 1: "all"},
            context_map=dict(zip(olaw.contexts, labels)),
        )
        assert not diagnose_law(olaw, co, tol=1e-10).any_violation

    def test_intent_free_regime_is_accepted(self, example3):
        olaw = ObservedLaw.from_structural_law(example3)
        report = diagnose_law(olaw, regime=optimal_rule(olaw))
        assert len(report.findings) == 4

    def test_instrument_conditional_regime_is_rejected(self, example3):
        olaw = ObservedLaw.from_structural_law(example3)
        zrule = Regime(kind="superoptimal_LAZ", table={(a, EMPTY, z): 1 for a in (0, 1) for z in (0, 1)})
        with pytest.raises(ValidationError, match="instrument-conditional"):
            stratum_means(olaw, Coarsening.identity(olaw.contexts), regime=zrule)


class TestSampleScale:
    CFG = EstimationConfig(bootstrap_reps=120, seed=3)

    @pytest.mark.parametrize("which", [1, 2])
    def test_examples_detected_at_1e5(self, which, example1, example2):
        law = {1: example1, 2: example2}[which]
        dataset = draw_sample(law, 100_000, seed=11)
        report = diagnose_dataset(dataset, config=self.CFG)
        assert report.any_violation
        for f in report.findings:
            assert f.ci is not None and f.ci[0] <= f.value <= f.ci[1]

    def test_violation_is_localised_to_the_confounded_context(self):
        dataset = draw_sample(mixed_confounding_law(), 100_000, seed=21)
        report = diagnose_dataset(dataset, config=self.CFG)
        assert report.any_violation
        assert {f.context_label for f in report.violations} == {(0,)}
        assert any(f.verdict == "contained" and f.context_label == (1,) for f in report.findings)

    def test_exchangeable_sample_stays_quiet(self, rng):
        law = random_law(rng, "exchangeable", n_covariates=1)
        dataset = draw_sample(law, 4_000, seed=5)
        report = diagnose_dataset(dataset, config=EstimationConfig(bootstrap_reps=120, seed=4))
        assert not report.any_violation, report.to_text()

    def test_deterministic_given_seed(self, example1):
        dataset = draw_sample(example1, 2_000, seed=8)
        cfg = EstimationConfig(bootstrap_reps=40, seed=13)
        first = diagnose_dataset(dataset, config=cfg)
        second = diagnose_dataset(dataset, config=cfg)
        assert first.to_dict() == second.to_dict()

    def test_observed_regime_value_matches_observed_mean(self, rng):
        law = random_law(rng, "generic", n_covariates=1)
        dataset = draw_sample(law, 2_000, seed=17)
        report = diagnose_dataset(
            dataset,
            config=EstimationConfig(bootstrap_reps=20, seed=9),
            regime=Regime(kind="observed"),
        )
        by_stratum: dict = {}
        for f in report.findings:
            by_stratum.setdefault((f.action_label, f.context_label), {})[f.quantity] = f.value
        for quantities in by_stratum.values():
            assert quantities["observed_mean"] == pytest.approx(quantities["regime_value"], abs=1e-12)

    def test_unseen_treatment_stratum_is_flagged_and_skipped(self):
        rows = [
            {"z": str(i % 2), "a": "0", "y": f"{0.25 * (i % 3)}"}
            for i in range(60)
        ]
        dataset = validate_dataset(rows)
        report = diagnose_dataset(dataset, config=EstimationConfig(bootstrap_reps=20, seed=2))
        assert any(flag.startswith("empty_stratum") for flag in report.flags)
        assert {f.action_label for f in report.findings} == {0}

    def test_context_with_one_instrument_arm_raises(self):
        rows = []
        for i in range(80):
            w = "0" if i < 40 else "1"
            z = str(i % 2) if w == "0" else "1"  # context w=1 never sees z=0
            rows.append({"w": w, "z": z, "a": str((i // 2) % 2), "y": "0.5"})
        dataset = validate_dataset(rows)
        with pytest.raises(NumericalError, match="empty instrument arm"):
            diagnose_dataset(dataset, config=EstimationConfig(bootstrap_reps=10, seed=1))


class TestReportShape:
    def test_dict_round_trip_fields(self, example1):
        report = diagnose_law(ObservedLaw.from_structural_law(example1))
        doc = report.to_dict()
        assert doc["type"] == "confounding_diagnostic"
        assert doc["violations"] == len(report.violations)
        finding = doc["findings"][0]
        assert set(finding) == {
            "action_stratum",
            "context_stratum",
            "quantity",
            "value",
            "ci",
            "envelope",
            "widened_envelope",
            "verdict",
        }

    def test_text_table_mentions_every_stratum(self, example1):
        report = diagnose_law(ObservedLaw.from_structural_law(example1))
        text = report.to_text()
        assert "violated" in text
        assert text.count("observed_mean") == 2
        assert text.strip().splitlines()[-1].startswith("4 violated / 4 checked")
