"""Detecting unmeasured confounding from regime-value envelopes.

If treatment choice were exchangeable given the recorded covariates, the
shifted counterfactual means would coincide with the factual arm means, so
any mean that conditions on (a coarsening of) the natural treatment — the
observed arm mean, or the value of a regime that reacts to the natural
treatment — must fall inside the envelope of values attainable by rules that
read the covariates alone:

    envelope(stratum) = [ sum_l P(l | stratum) min_a psi1(a, l),
                          sum_l P(l | stratum) max_a psi1(a, l) ].

A mean outside its envelope therefore refutes exchangeability.  The check
reports per-stratum containment verdicts; with bootstrap confidence
intervals supplied it is deliberately conservative, flagging a violation
only when the tested mean's whole interval lies outside the envelope after
the envelope itself is widened by its own sampling uncertainty.

Soundness note: conditioning the tested mean on the natural treatment while
pooling covariate contexts reweights contexts away from P(l | stratum), so
the containment guarantee holds when either the contexts are kept at their
finest resolution or the natural-treatment coarsening is trivial.  The
defaults here use the finest coarsening on both axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import identify
from .core import IntervalBound, NumericalError, Regime, ValidationError
from .estimate import (
    EstimationConfig,
    _batched_cells,
    _cells,
    _encode,
    _fit_tables,
    _nuisance_arrays,
    estimate_regime,
)
from .simulate import child_seed

logger = logging.getLogger(__name__)

QUANTITIES = ("observed_mean", "regime_value")


@dataclass(frozen=True)
class Coarsening:
    """Groupings of the natural treatment values and the covariate contexts."""

    action_map: dict  # natural treatment value (0/1) -> stratum label
    context_map: dict  # covariate context -> stratum label

    def __post_init__(self) -> None:
        if set(self.action_map) != {0, 1}:
            raise ValidationError("action_map must label both treatment values 0 and 1")
        if not self.context_map:
            raise ValidationError("context_map must label at least one context")

    @classmethod
    def identity(cls, contexts) -> "Coarsening":
        """Finest coarsening: each treatment value and context is its own stratum."""
        return cls(action_map={0: 0, 1: 1}, context_map={l: l for l in contexts})

    @classmethod
    def pooled(cls, contexts) -> "Coarsening":
        """Coarsest coarsening: everything in a single stratum."""
        return cls(action_map={0: "all", 1: "all"}, context_map={l: "all" for l in contexts})

    @classmethod
    def pooled_actions(cls, contexts) -> "Coarsening":
        """Treatment values pooled, contexts kept apart."""
        return cls(action_map={0: "all", 1: "all"}, context_map={l: l for l in contexts})

    def validate_against(self, contexts) -> None:
        missing = [l for l in contexts if l not in self.context_map]
        if missing:
            raise ValidationError(f"context_map lacks labels for contexts {missing!r}")

    def context_strata(self):
        return sorted(set(self.context_map.values()), key=repr)

    def contexts_in(self, label) -> list:
        return [l for l, lab in sorted(self.context_map.items(), key=repr) if lab == label]


@dataclass(frozen=True)
class DiagnosticFinding:
    """Containment verdict for one tested mean in one stratum."""

    action_label: object
    context_label: object
    quantity: str
    value: float
    ci: tuple | None
    envelope: IntervalBound
    widened_envelope: IntervalBound
    verdict: str  # "contained" | "violated"

    def to_dict(self) -> dict:
        def jsonable(label):
            return list(label) if isinstance(label, tuple) else label

        return {
            "action_stratum": jsonable(self.action_label),
            "context_stratum": jsonable(self.context_label),
            "quantity": self.quantity,
            "value": self.value,
            "ci": list(self.ci) if self.ci is not None else None,
            "envelope": [self.envelope.lo, self.envelope.hi],
            "widened_envelope": [self.widened_envelope.lo, self.widened_envelope.hi],
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class DiagnosticReport:
    findings: tuple
    flags: tuple = ()

    @property
    def violations(self) -> tuple:
        return tuple(f for f in self.findings if f.verdict == "violated")

    @property
    def any_violation(self) -> bool:
        return bool(self.violations)

    def to_dict(self) -> dict:
        return {
            "type": "confounding_diagnostic",
            "findings": [f.to_dict() for f in self.findings],
            "violations": len(self.violations),
            "flags": list(self.flags),
        }

    def to_text(self) -> str:
        header = (
            f"{'stratum':<28} {'quantity':<14} {'estimate':>10} {'95% CI':>20} "
            f"{'envelope':>22} verdict"
        )
        lines = [header, "-" * len(header)]
        for f in self.findings:
            stratum = f"a={f.action_label!r}, c={f.context_label!r}"
            ci = f"[{f.ci[0]:+.4f}, {f.ci[1]:+.4f}]" if f.ci is not None else "-"
            envelope = f"[{f.widened_envelope.lo:+.4f}, {f.widened_envelope.hi:+.4f}]"
            lines.append(
                f"{stratum:<28} {f.quantity:<14} {f.value:>+10.4f} {ci:>20} "
                f"{envelope:>22} {f.verdict}"
            )
        lines.append(
            f"{len(self.violations)} violated / {len(self.findings)} checked"
            + (f"  ({'; '.join(self.flags)})" if self.flags else "")
        )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Population scale
# ---------------------------------------------------------------------------


def confounding_intervals(
    olaw: identify.ObservedLaw,
    coarsening: Coarsening,
    psi1_table: dict | None = None,
) -> dict:
    """Attainable-value envelope per context stratum.

    The envelope spans the values reachable by deterministic rules that read
    the full covariate context, averaged to the stratum.
    """
    coarsening.validate_against(olaw.contexts)
    if psi1_table is None:
        psi1_table = {
            (a, l): identify.counterfactual_mean(olaw, a, l)
            for l in olaw.contexts
            for a in (0, 1)
        }
    out = {}
    for label in coarsening.context_strata():
        members = [l for l in coarsening.contexts_in(label) if l in olaw.p_l]
        mass = sum(olaw.p_l[l] for l in members)
        if mass <= 0.0:
            raise NumericalError(f"empty context stratum {label!r}")
        lo = sum(olaw.p_l[l] / mass * min(psi1_table[(0, l)], psi1_table[(1, l)]) for l in members)
        hi = sum(olaw.p_l[l] / mass * max(psi1_table[(0, l)], psi1_table[(1, l)]) for l in members)
        out[label] = IntervalBound(lo, hi)
    return out


def _decide(regime: Regime, a: int, l: tuple) -> int:
    if regime.kind != "observed" and regime.context_form == "alz":
        raise ValidationError(
            "the diagnostic tests means conditioned on (treatment, context) strata; "
            "instrument-conditional regimes are out of scope"
        )
    if regime.kind == "observed":
        return a
    if regime.context_form == "l":
        return regime.decide(l=l)
    return regime.decide(a, l)


def tested_means(
    olaw: identify.ObservedLaw,
    coarsening: Coarsening,
    regime: Regime | None = None,
) -> dict:
    """Per-(action stratum, context stratum): observed mean and regime value."""
    coarsening.validate_against(olaw.contexts)
    if regime is None:
        regime = identify.superoptimal_rule(olaw)
    strata: dict = {}
    for l in olaw.contexts:
        c_label = coarsening.context_map[l]
        for a in (0, 1):
            weight = olaw.p_l[l] * olaw.p_a_given_l(a, l)
            if weight == 0.0:
                continue
            factual = olaw.mean_y_given_al(a, l)
            g = _decide(regime, a, l)
            value = (
                factual
                if g == a
                else identify.counterfactual_mean_given_natural(olaw, g, a, l)
            )
            key = (coarsening.action_map[a], c_label)
            acc = strata.setdefault(key, [0.0, 0.0, 0.0])
            acc[0] += weight * factual
            acc[1] += weight * value
            acc[2] += weight
    return {
        key: {"observed_mean": obs / mass, "regime_value": val / mass, "weight": mass}
        for key, (obs, val, mass) in sorted(strata.items(), key=repr)
    }


def confounding_check(
    intervals: dict,
    tested: dict,
    tested_cis: dict | None = None,
    interval_cis: dict | None = None,
    tol: float = 0.0,
) -> DiagnosticReport:
    """Containment verdicts for tested means against their stratum envelopes.

    Without confidence intervals a point rule applies.  With them the rule is
    conservative: a stratum is violated only when the tested mean's whole
    interval lies outside the envelope widened by the envelope's own interval.
    """
    findings = []
    for (b_label, c_label), quantities in sorted(tested.items(), key=repr):
        envelope = intervals[c_label]
        widened = envelope
        if interval_cis is not None and c_label in interval_cis:
            lo_ci, hi_ci = interval_cis[c_label]
            widened = IntervalBound(min(envelope.lo, lo_ci), max(envelope.hi, hi_ci))
        for quantity in QUANTITIES:
            value = quantities[quantity]
            ci = None
            if tested_cis is not None:
                ci = tested_cis.get((b_label, c_label, quantity))
            if ci is not None:
                violated = ci[1] < widened.lo - tol or ci[0] > widened.hi + tol
            else:
                violated = not widened.contains(value, tol)
            findings.append(
                DiagnosticFinding(
                    action_label=b_label,
                    context_label=c_label,
                    quantity=quantity,
                    value=value,
                    ci=ci,
                    envelope=envelope,
                    widened_envelope=widened,
                    verdict="violated" if violated else "contained",
                )
            )
    return DiagnosticReport(findings=tuple(findings))


def diagnose_law(
    olaw: identify.ObservedLaw,
    coarsening: Coarsening | None = None,
    regime: Regime | None = None,
    tol: float = 1e-10,
) -> DiagnosticReport:
    """Population-scale diagnostic with the point containment rule."""
    co = coarsening or Coarsening.identity(olaw.contexts)
    intervals = confounding_intervals(olaw, co)
    tested = tested_means(olaw, co, regime)
    return confounding_check(intervals, tested, tol=tol)


# ---------------------------------------------------------------------------
# Data scale, with bootstrap conservatism
# ---------------------------------------------------------------------------


def _stratum_stats(arrs: dict, coarsening: Coarsening, keep_mask: np.ndarray, cfg, contexts):
    """Envelope endpoints and tested means for one batch of nuisance tables."""
    psi1 = arrs["psi1"]
    n_c = arrs["n_c"]
    N_a = arrs["N"].sum(-2)
    S_a = arrs["S"].sum(-2)
    p_al = np.stack((1.0 - arrs["p_a1_l"], arrs["p_a1_l"]), axis=-1)
    cross = (psi1[..., ::-1] - arrs["eyi_l"][..., ::-1]) / np.clip(p_al, cfg.propensity_clip, None)
    value_cell = np.where(keep_mask, arrs["ey_al"], cross)

    intervals = {}
    for label in coarsening.context_strata():
        members = [i for i, l in enumerate(contexts) if coarsening.context_map[l] == label]
        mass = n_c[..., members].sum(-1)
        safe_mass = np.where(mass > 0, mass, 1.0)
        lo = (n_c[..., members] * psi1[..., members, :].min(-1)).sum(-1) / safe_mass
        hi = (n_c[..., members] * psi1[..., members, :].max(-1)).sum(-1) / safe_mass
        intervals[label] = (lo, hi, mass)

    tested = {}
    labels = sorted(
        {(coarsening.action_map[a], coarsening.context_map[l]) for l in contexts for a in (0, 1)},
        key=repr,
    )
    for b_label, c_label in labels:
        cells = [
            (i, a)
            for i, l in enumerate(contexts)
            for a in (0, 1)
            if coarsening.action_map[a] == b_label and coarsening.context_map[l] == c_label
        ]
        idx_c = [i for i, _a in cells]
        idx_a = [a for _i, a in cells]
        mass = N_a[..., idx_c, idx_a].sum(-1)
        safe_mass = np.where(mass > 0, mass, 1.0)
        obs = S_a[..., idx_c, idx_a].sum(-1) / safe_mass
        val = (N_a[..., idx_c, idx_a] * value_cell[..., idx_c, idx_a]).sum(-1) / safe_mass
        tested[(b_label, c_label)] = (obs, val, mass)
    return intervals, tested


def diagnose_dataset(
    dataset,
    coarsening: Coarsening | None = None,
    config: EstimationConfig | None = None,
    regime: Regime | None = None,
    tol: float = 0.0,
) -> DiagnosticReport:
    """Sample-scale diagnostic with the conservative bootstrap rule.

    The tested regime defaults to the superoptimal rule fitted on the same
    data and stays fixed across replicates; every replicate refits the
    envelope and the tested means.
    """
    cfg = config or EstimationConfig()
    enc = _encode(dataset)
    contexts = enc.contexts
    co = coarsening or Coarsening.identity(contexts)
    co.validate_against(contexts)

    N, S = _cells(enc)
    point_arrs = _nuisance_arrays(N[None], S[None], cfg)
    if point_arrs["invalid"].any():
        bad = [l for i, l in enumerate(contexts) if point_arrs["invalid"][0, i]]
        raise NumericalError(
            f"contexts {bad!r} have an empty instrument arm; the envelope is not estimable there"
        )
    if regime is None:
        tables = _fit_tables(enc, dataset.schema, cfg, record_fits=False)
        regime = estimate_regime(tables, "superoptimal_LA")
    keep_mask = np.array(
        [[_decide(regime, a, l) == a for a in (0, 1)] for l in contexts]
    )

    point_intervals, point_tested = _stratum_stats(point_arrs, co, keep_mask, cfg, contexts)

    B = cfg.bootstrap_reps
    rng = np.random.default_rng(child_seed(cfg.seed, 37))
    pvals = np.full(enc.n, 1.0 / enc.n)
    M = rng.multinomial(enc.n, pvals, size=B)
    Nb, Sb = _batched_cells(enc, M)
    arrs = _nuisance_arrays(Nb, Sb, cfg)
    bad = arrs["invalid"].any(-1)
    rounds = 0
    while bad.any() and rounds < 10:
        redraw = rng.multinomial(enc.n, pvals, size=int(bad.sum()))
        Nr, Sr = _batched_cells(enc, redraw)
        Nb[bad], Sb[bad] = Nr, Sr
        arrs = _nuisance_arrays(Nb, Sb, cfg)
        bad = arrs["invalid"].any(-1)
        rounds += 1
    dropped = int(bad.sum())
    flags = []
    if dropped:
        logger.warning("diagnostic bootstrap dropped %d/%d replicates", dropped, B)
        flags.append(f"bootstrap_dropped={dropped}")
    if dropped > 0.01 * B:
        raise NumericalError(
            f"bootstrap dropped {dropped}/{B} replicates (>1%); sample too sparse"
        )
    keep_reps = ~bad
    rep_intervals, rep_tested = _stratum_stats(arrs, co, keep_mask, cfg, contexts)

    intervals = {}
    interval_cis = {}
    for label, (lo, hi, mass) in point_intervals.items():
        if mass[0] <= 0:
            raise NumericalError(f"empty context stratum {label!r}")
        intervals[label] = IntervalBound(float(lo[0]), float(hi[0]))
        lo_reps, hi_reps, mass_reps = rep_intervals[label]
        usable = keep_reps & (mass_reps > 0)
        if usable.any():
            interval_cis[label] = (
                float(np.percentile(lo_reps[usable], 2.5)),
                float(np.percentile(hi_reps[usable], 97.5)),
            )

    tested = {}
    tested_cis = {}
    for key, (obs, val, mass) in point_tested.items():
        if mass[0] <= 0:
            flags.append(f"empty_stratum:{key!r}")
            continue
        tested[key] = {
            "observed_mean": float(obs[0]),
            "regime_value": float(val[0]),
            "weight": float(mass[0] / enc.n),
        }
        obs_r, val_r, mass_r = rep_tested[key]
        usable = keep_reps & (mass_r > 0)
        if usable.any():
            for quantity, reps in (("observed_mean", obs_r), ("regime_value", val_r)):
                tested_cis[key + (quantity,)] = (
                    float(np.percentile(reps[usable], 2.5)),
                    float(np.percentile(reps[usable], 97.5)),
                )

    report = confounding_check(intervals, tested, tested_cis, interval_cis, tol=tol)
    return DiagnosticReport(findings=report.findings, flags=tuple(flags))
