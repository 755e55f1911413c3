"""Identification of counterfactual means conditional on the natural treatment value.

Works on an `ObservedLaw`: the distribution of the observable variables only
(covariates L, optional binary instrument Z, treatment A, outcome Y through its
conditional means).  With a relevant instrument whose uptake shift does not
depend on the latent confounder, the mean of Y^a within strata of the
treatment people would choose on their own becomes a ratio of observable
quantities; every decision table downstream is built from those ratios.

Randomized preference trials identify the same quantities directly by
conditioning on the administered treatment and the stated choice; see
`preference_trial_mean`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .core import (
    Dataset,
    NumericalError,
    Regime,
    ValidationError,
    classify_instruction,
)
from .simulate import StructuralLaw, _sorted_keys

logger = logging.getLogger(__name__)

_PMF_TOL = 1e-12


@dataclass(frozen=True)
class ObservedLaw:
    """Joint law of the observable variables, by exact tables.

    For instrumented designs the primitive pieces are P(L), P(Z|L), P(A|Z,L)
    and E(Y | A, Z, L); cells with zero probability simply have no mean entry.
    Designs without an instrument carry P(A|L) and E(Y|A,L) instead, and may
    attach externally identified counterfactual means E(Y^a|L) (for example
    from a randomized source) so that the same machinery applies.
    """

    covariates: tuple[str, ...]
    p_l: dict
    p_z_given_l: dict | None = None  # l -> P(Z=1|l)
    p_a_given_zl: dict | None = None  # (z, l) -> P(A=1|Z=z,L=l)
    mean_y_given_azl: dict | None = None  # (a, z, l) -> E(Y|A=a,Z=z,L=l)
    p_a_given_l_direct: dict | None = None  # l -> P(A=1|l), no-instrument designs
    mean_y_given_al_direct: dict | None = None  # (a, l) -> E(Y|A=a,L=l)
    external_counterfactual_means: dict | None = None  # (a, l) -> E(Y^a|l)

    def __post_init__(self) -> None:
        if not self.p_l:
            raise ValidationError("p_l must be a nonempty pmf")
        total = sum(self.p_l.values())
        if abs(total - 1.0) > _PMF_TOL:
            raise ValidationError(f"p_l sums to {total!r}, expected 1")
        for l, p in self.p_l.items():
            if not isinstance(l, tuple) or len(l) != len(self.covariates):
                raise ValidationError(f"context {l!r} does not match covariates {self.covariates}")
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"p_l[{l!r}] = {p} is not a probability")
        if self.has_instrument:
            if self.p_a_given_zl is None or self.mean_y_given_azl is None:
                raise ValidationError("instrumented law needs p_a_given_zl and mean_y_given_azl")
            for l in self.p_l:
                pz = self.p_z_given_l.get(l)
                if pz is None or not (0.0 <= pz <= 1.0):
                    raise ValidationError(f"p_z_given_l missing or invalid for {l!r}")
                for z in (0, 1):
                    pa = self.p_a_given_zl.get((z, l))
                    if pa is None or not (0.0 <= pa <= 1.0):
                        raise ValidationError(f"p_a_given_zl missing or invalid at {(z, l)!r}")
        else:
            if self.p_a_given_l_direct is None or self.mean_y_given_al_direct is None:
                raise ValidationError(
                    "law without instrument needs p_a_given_l_direct and mean_y_given_al_direct"
                )
            for l in self.p_l:
                pa = self.p_a_given_l_direct.get(l)
                if pa is None or not (0.0 <= pa <= 1.0):
                    raise ValidationError(f"p_a_given_l_direct missing or invalid at {l!r}")

    #------------------------------------------------------------------
    # basic accessors (all marginalization done exactly)
    #------------------------------------------------------------------

    @property
    def has_instrument(self) -> bool:
        return self.p_z_given_l is not None

    @property
    def contexts(self) -> list[tuple]:
        return _sorted_keys(self.p_l)

    def p_z(self, z: int, l: tuple) -> float:
        p1 = self.p_z_given_l[l]
        return p1 if z == 1 else 1.0 - p1

    def p_a_given_zl_value(self, a: int, z: int, l: tuple) -> float:
        p1 = self.p_a_given_zl[(z, l)]
        return p1 if a == 1 else 1.0 - p1

    def p_a_given_l(self, a: int, l: tuple) -> float:
        if self.has_instrument:
            p1 = sum(self.p_z(z, l) * self.p_a_given_zl[(z, l)] for z in (0, 1))
        else:
            p1 = self.p_a_given_l_direct[l]
        return p1 if a == 1 else 1.0 - p1

    def mean_y_indicator_given_zl(self, a: int, z: int, l: tuple) -> float:
        """E(Y * I[A=a] | Z=z, L=l); zero-probability cells contribute 0."""
        p = self.p_a_given_zl_value(a, z, l)
        if p == 0.0:
            return 0.0
        m = self.mean_y_given_azl.get((a, z, l))
        if m is None:
            raise NumericalError(f"mean of y unavailable in nonempty cell {(a, z, l)!r}")
        return m * p

    def mean_y_indicator_given_l(self, a: int, l: tuple) -> float:
        """E(Y * I[A=a] | L=l)."""
        if self.has_instrument:
            return sum(self.p_z(z, l) * self.mean_y_indicator_given_zl(a, z, l) for z in (0, 1))
        p = self.p_a_given_l(a, l)
        if p == 0.0:
            return 0.0
        return self.mean_y_given_al_direct[(a, l)] * p

    def mean_y_given_al(self, a: int, l: tuple) -> float:
        """E(Y | A=a, L=l); requires P(A=a|L=l) > 0."""
        p = self.p_a_given_l(a, l)
        if p <= 0.0:
            raise NumericalError(f"positivity failure: P(A={a} | L={l!r}) = 0")
        return self.mean_y_indicator_given_l(a, l) / p

    def mean_y_given_azl_value(self, a: int, z: int, l: tuple) -> float:
        p = self.p_a_given_zl_value(a, z, l)
        if p <= 0.0:
            raise NumericalError(f"positivity failure: P(A={a} | Z={z}, L={l!r}) = 0")
        return self.mean_y_indicator_given_zl(a, z, l) / p

    def mean_y_given_l(self, l: tuple) -> float:
        return sum(self.mean_y_indicator_given_l(a, l) for a in (0, 1))

    def mean_y_given_lz(self, l: tuple, z: int) -> float:
        return sum(self.mean_y_indicator_given_zl(a, z, l) for a in (0, 1))

    def mean_y(self) -> float:
        return sum(self.p_l[l] * self.mean_y_given_l(l) for l in self.p_l)

    def instrument_strength(self, l: tuple) -> float:
        """P(A=1|Z=1,L=l) - P(A=1|Z=0,L=l)."""
        if not self.has_instrument:
            raise ValidationError("law has no instrument")
        return self.p_a_given_zl[(1, l)] - self.p_a_given_zl[(0, l)]

    #------------------------------------------------------------------
    # constructors
    #------------------------------------------------------------------

    @classmethod
    def from_structural_law(cls, law: StructuralLaw) -> "ObservedLaw":
        """Exact observable tables induced by a structural law (ignoring inert
        sampling-only covariates)."""
        if law.has_instrument:
            p_a_given_zl: dict = {}
            mean_y_given_azl: dict = {}
            for l in law.contexts:
                for z in (0, 1):
                    p_a_given_zl[(z, l)] = sum(law.p_u[u] * law.p_a(1, z, l, u) for u in law.p_u)
                    for a in (0, 1):
                        num = sum(
                            law.p_u[u] * law.p_a(a, z, l, u) * law.mean_y_given_alu[(a, l, u)]
                            for u in law.p_u
                        )
                        den = sum(law.p_u[u] * law.p_a(a, z, l, u) for u in law.p_u)
                        if den > 0.0:
                            mean_y_given_azl[(a, z, l)] = num / den
            return cls(
                covariates=law.covariates,
                p_l=dict(law.p_l),
                p_z_given_l=dict(law.p_z_given_l),
                p_a_given_zl=p_a_given_zl,
                mean_y_given_azl=mean_y_given_azl,
            )
        p_a_direct: dict = {}
        mean_al: dict = {}
        for l in law.contexts:
            p_a_direct[l] = sum(law.p_u[u] * law.p_a(1, None, l, u) for u in law.p_u)
            for a in (0, 1):
                num = sum(
                    law.p_u[u] * law.p_a(a, None, l, u) * law.mean_y_given_alu[(a, l, u)]
                    for u in law.p_u
                )
                den = sum(law.p_u[u] * law.p_a(a, None, l, u) for u in law.p_u)
                if den > 0.0:
                    mean_al[(a, l)] = num / den
        return cls(
            covariates=law.covariates,
            p_l=dict(law.p_l),
            p_a_given_l_direct=p_a_direct,
            mean_y_given_al_direct=mean_al,
        )

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "ObservedLaw":
        """Empirical frequency tables of a dataset of plain observations."""
        if dataset.schema.row_kind != "observation":
            raise ValidationError(
                "observable tables are built from plain observations; "
                "trial records identify counterfactual means directly"
            )
        n = len(dataset)
        counts_l: dict = {}
        for row in dataset.rows:
            counts_l[row.l] = counts_l.get(row.l, 0) + 1
        p_l = {l: c / n for l, c in counts_l.items()}
        if dataset.schema.has_instrument:
            n_zl: dict = {}
            n_azl: dict = {}
            sum_y: dict = {}
            for row in dataset.rows:
                n_zl[(row.z, row.l)] = n_zl.get((row.z, row.l), 0) + 1
                key = (row.a, row.z, row.l)
                n_azl[key] = n_azl.get(key, 0) + 1
                sum_y[key] = sum_y.get(key, 0.0) + row.y
            p_z_given_l = {}
            p_a_given_zl = {}
            for l, c_l in counts_l.items():
                n_z1 = n_zl.get((1, l), 0)
                p_z_given_l[l] = n_z1 / c_l
                for z in (0, 1):
                    c_zl = n_zl.get((z, l), 0)
                    p_a_given_zl[(z, l)] = (n_azl.get((1, z, l), 0) / c_zl) if c_zl else 0.0
            mean_y_given_azl = {k: sum_y[k] / c for k, c in n_azl.items()}
            return cls(
                covariates=dataset.schema.covariates,
                p_l=p_l,
                p_z_given_l=p_z_given_l,
                p_a_given_zl=p_a_given_zl,
                mean_y_given_azl=mean_y_given_azl,
            )
        n_al: dict = {}
        sum_y_al: dict = {}
        for row in dataset.rows:
            key = (row.a, row.l)
            n_al[key] = n_al.get(key, 0) + 1
            sum_y_al[key] = sum_y_al.get(key, 0.0) + row.y
        p_a_direct = {l: n_al.get((1, l), 0) / c for l, c in counts_l.items()}
        mean_al = {k: sum_y_al[k] / c for k, c in n_al.items()}
        return cls(
            covariates=dataset.schema.covariates,
            p_l=p_l,
            p_a_given_l_direct=p_a_direct,
            mean_y_given_al_direct=mean_al,
        )

    #------------------------------------------------------------------
    # JSON (debug interchange)
    #------------------------------------------------------------------

    def to_json(self) -> str:
        contexts = self.contexts
        doc = {
            "type": "observed_law",
            "covariates": list(self.covariates),
            "contexts": [list(l) for l in contexts],
            "p_l": [self.p_l[l] for l in contexts],
            "has_instrument": self.has_instrument,
        }
        if self.has_instrument:
            doc["p_z_given_l"] = [self.p_z_given_l[l] for l in contexts]
            doc["p_a_given_zl"] = [[self.p_a_given_zl[(z, l)] for l in contexts] for z in (0, 1)]
            doc["mean_y_given_azl"] = [
                [[self.mean_y_given_azl.get((a, z, l)) for l in contexts] for z in (0, 1)]
                for a in (0, 1)
            ]
            doc["instrument_strength"] = [self.instrument_strength(l) for l in contexts]
        else:
            doc["p_a_given_l"] = [self.p_a_given_l_direct[l] for l in contexts]
            doc["mean_y_given_al"] = [
                [self.mean_y_given_al_direct.get((a, l)) for l in contexts] for a in (0, 1)
            ]
            if self.external_counterfactual_means is not None:
                doc["external_counterfactual_means"] = [
                    [self.external_counterfactual_means.get((a, l)) for l in contexts]
                    for a in (0, 1)
                ]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ObservedLaw":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"observed-law file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("type") != "observed_law":
            raise ValidationError("observed-law file must declare type 'observed_law'")
        try:
            contexts = [tuple(l) for l in doc["contexts"]]
            p_l = {l: float(p) for l, p in zip(contexts, doc["p_l"])}
            if doc["has_instrument"]:
                mean_y = {}
                for a in (0, 1):
                    for z in (0, 1):
                        for il, l in enumerate(contexts):
                            v = doc["mean_y_given_azl"][a][z][il]
                            if v is not None:
                                mean_y[(a, z, l)] = float(v)
                return cls(
                    covariates=tuple(doc["covariates"]),
                    p_l=p_l,
                    p_z_given_l={l: float(p) for l, p in zip(contexts, doc["p_z_given_l"])},
                    p_a_given_zl={
                        (z, l): float(doc["p_a_given_zl"][z][il])
                        for z in (0, 1)
                        for il, l in enumerate(contexts)
                    },
                    mean_y_given_azl=mean_y,
                )
            mean_al = {}
            for a in (0, 1):
                for il, l in enumerate(contexts):
                    v = doc["mean_y_given_al"][a][il]
                    if v is not None:
                        mean_al[(a, l)] = float(v)
            external = None
            if doc.get("external_counterfactual_means") is not None:
                external = {}
                for a in (0, 1):
                    for il, l in enumerate(contexts):
                        v = doc["external_counterfactual_means"][a][il]
                        if v is not None:
                            external[(a, l)] = float(v)
            return cls(
                covariates=tuple(doc["covariates"]),
                p_l=p_l,
                p_a_given_l_direct={l: float(p) for l, p in zip(contexts, doc["p_a_given_l"])},
                mean_y_given_al_direct=mean_al,
                external_counterfactual_means=external,
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ValidationError(f"observed-law file is malformed: {exc!r}") from None


#======================================================================
# Identification formulas
#======================================================================

def counterfactual_mean(olaw: ObservedLaw, a: int, l: tuple) -> float:
    """E(Y^a | L=l) identified from observables.

    With an instrument this is the shift in E(Y * I[A=a]) between instrument
    arms, scaled by the uptake shift; without one it must have been supplied
    externally (e.g. from a randomized source).
    """
    if a not in (0, 1):
        raise ValidationError(f"a must be 0 or 1, got {a!r}")
    if olaw.has_instrument:
        strength = olaw.instrument_strength(l)
        if strength == 0.0:
            raise NumericalError(
                f"instrument is irrelevant at context {l!r} (uptake shift is zero)"
            )
        sign = 2 * a - 1
        shift = olaw.mean_y_indicator_given_zl(a, 1, l) - olaw.mean_y_indicator_given_zl(a, 0, l)
        return sign * shift / strength
    if olaw.external_counterfactual_means is not None:
        try:
            return olaw.external_counterfactual_means[(a, l)]
        except KeyError:
            raise NumericalError(f"no external counterfactual mean for {(a, l)!r}") from None
    raise ValidationError(
        "counterfactual means are not identified: no instrument and no external source"
    )


def counterfactual_mean_given_natural(
    olaw: ObservedLaw,
    a: int,
    natural_a: int,
    l: tuple,
    z: int | None = None,
) -> float:
    """E(Y^a | A=natural_a, L=l) — optionally also conditioning on Z=z.

    When a == natural_a this is the factual conditional mean.  Otherwise the
    cross-world mean follows from subtracting the factual part of E(Y^a|...)
    and rescaling by the propensity of the natural stratum.
    """
    if a not in (0, 1) or natural_a not in (0, 1):
        raise ValidationError("treatment arguments must be 0 or 1")
    if z is None:
        if a == natural_a:
            return olaw.mean_y_given_al(a, l)
        p_natural = olaw.p_a_given_l(natural_a, l)
        if p_natural <= 0.0:
            raise NumericalError(f"positivity failure: P(A={natural_a} | L={l!r}) = 0")
        psi = counterfactual_mean(olaw, a, l)
        return (psi - olaw.mean_y_indicator_given_l(a, l)) / p_natural
    if not olaw.has_instrument:
        raise ValidationError("law has no instrument, cannot condition on z")
    if a == natural_a:
        return olaw.mean_y_given_azl_value(a, z, l)
    p_natural = olaw.p_a_given_zl_value(natural_a, z, l)
    if p_natural <= 0.0:
        raise NumericalError(f"positivity failure: P(A={natural_a} | Z={z}, L={l!r}) = 0")
    psi = counterfactual_mean(olaw, a, l)
    return (psi - olaw.mean_y_indicator_given_zl(a, z, l)) / p_natural


def optimal_rule(olaw: ObservedLaw) -> Regime:
    """Best intent-free rule: argmax_a E(Y^a|l), ties toward a=1."""
    table = {}
    for l in olaw.contexts:
        m1 = counterfactual_mean(olaw, 1, l)
        m0 = counterfactual_mean(olaw, 0, l)
        table[l] = 1 if m1 >= m0 else 0
    return Regime(kind="optimal_L", table=table)


def superoptimal_rule(olaw: ObservedLaw) -> Regime:
    """Best rule that also reads the intended treatment; ties keep the intent."""
    table = {}
    for l in olaw.contexts:
        for intent in (0, 1):
            keep = counterfactual_mean_given_natural(olaw, intent, intent, l)
            flip = counterfactual_mean_given_natural(olaw, 1 - intent, intent, l)
            table[(intent, l)] = intent if keep >= flip else 1 - intent
    return Regime(kind="superoptimal_LA", table=table)


def lz_superoptimal_rule(olaw: ObservedLaw) -> Regime:
    """Best rule that reads intent and the instrument; ties keep the intent."""
    if not olaw.has_instrument:
        raise ValidationError("law has no instrument")
    table = {}
    for l in olaw.contexts:
        for z in (0, 1):
            for intent in (0, 1):
                keep = counterfactual_mean_given_natural(olaw, intent, intent, l, z=z)
                flip = counterfactual_mean_given_natural(olaw, 1 - intent, intent, l, z=z)
                table[(intent, l, z)] = intent if keep >= flip else 1 - intent
    return Regime(kind="superoptimal_LAZ", table=table)


def instruction_map(olaw: ObservedLaw) -> dict:
    """Per-context Instruction classifying how intent should be used."""
    out = {}
    for l in olaw.contexts:
        effect = {
            intent: counterfactual_mean_given_natural(olaw, 1, intent, l)
            - counterfactual_mean_given_natural(olaw, 0, intent, l)
            for intent in (0, 1)
        }
        out[l] = classify_instruction(effect[1], effect[0])
    return out


def value_of_regime(olaw: ObservedLaw, regime: Regime, l: tuple | None = None) -> float:
    """Identified population value E(Y^g), optionally conditional on L=l."""
    contexts = [l] if l is not None else olaw.contexts
    if l is not None and l not in olaw.p_l:
        raise ValidationError(f"unknown context {l!r}")
    reads_z = regime.kind == "superoptimal_LAZ" or (
        regime.kind == "explicit_table" and regime.context_form == "alz"
    )
    if reads_z and not olaw.has_instrument:
        raise ValidationError("instrument-aware regime on a law without an instrument")
    numer = 0.0
    denom = 0.0
    for lv in contexts:
        w_l = olaw.p_l[lv]
        if w_l == 0.0:
            continue
        if reads_z:
            for z in (0, 1):
                w_z = w_l * olaw.p_z(z, lv)
                for intent in (0, 1):
                    w = w_z * olaw.p_a_given_zl_value(intent, z, lv)
                    if w == 0.0:
                        continue
                    action = regime.decide(a_intent=intent, l=lv, z=z)
                    numer += w * counterfactual_mean_given_natural(olaw, action, intent, lv, z=z)
                    denom += w
        else:
            for intent in (0, 1):
                w = w_l * olaw.p_a_given_l(intent, lv)
                if w == 0.0:
                    continue
                action = regime.decide(a_intent=intent, l=lv)
                numer += w * counterfactual_mean_given_natural(olaw, action, intent, lv)
                denom += w
    if denom <= 0.0:
        raise NumericalError(f"conditioning context {l!r} has probability zero")
    return numer / denom


def preference_trial_mean(
    dataset: Dataset, a: int, natural_a: int, l: tuple | None = None
) -> float:
    """E(Y^a | A=natural_a, L=l) from a randomized preference trial.

    Averages the outcome among units administered `a` whose stated own choice
    was `natural_a`.  Requires the stated choice to have been recorded — a
    plain two-arm trial cannot provide it.
    """
    if dataset.schema.row_kind != "preference_trial":
        raise ValidationError("preference-trial records required")
    if a not in (0, 1) or natural_a not in (0, 1):
        raise ValidationError("treatment arguments must be 0 or 1")
    if any(row.a is None for row in dataset.rows):
        raise ValidationError(
            "natural treatment value unavailable: the stated choice was not recorded "
            "(two-arm design without preference elicitation)"
        )
    selected = [
        row.y
        for row in dataset.rows
        if row.a_star == a and row.a == natural_a and (l is None or row.l == l)
    ]
    if not selected:
        raise NumericalError(
            f"empty cell: no units administered {a} with stated choice {natural_a}"
            + (f" in context {l!r}" if l is not None else "")
        )
    return sum(selected) / len(selected)
