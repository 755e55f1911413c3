"""Structural simulation laws with exact oracles.

A `StructuralLaw` fully specifies a data-generating process with a latent
confounder U: covariates L, an optional binary instrument Z with Z independent
of U given L (by construction), a natural treatment choice A drawn given
(Z, L, U), and potential-outcome means E(Y^a | L, U) that do not depend on Z
(exclusion, again by construction).  Because everything is finite and
enumerable, conditional counterfactual means, regime values, and the
corresponding decision tables can be computed exactly — these oracles are the
ground truth the identification and estimation layers are tested against.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Dataset,
    Instruction,
    NumericalError,
    Observation,
    PreferenceTrialRecord,
    Regime,
    Schema,
    ValidationError,
    classify_instruction,
)

logger = logging.getLogger(__name__)

_PMF_TOL = 1e-12

#======================================================================
# Seed derivation
#======================================================================

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def child_seed(seed: int, *indices: int) -> int:
    """Derive an independent child seed from a base seed and stream indices.

    Deterministic and collision-resistant across (seed, indices) pairs, so
    parallel replicates can each build their own generator.
    """
    state = _splitmix64(seed & _MASK64)
    for ix in indices:
        state = _splitmix64(state ^ _splitmix64(ix & _MASK64))
    return state


#======================================================================
# Structural laws
#======================================================================

def _check_pmf(name: str, pmf: dict) -> None:
    if not pmf:
        raise ValidationError(f"{name} must be a nonempty pmf")
    total = 0.0
    for key, p in pmf.items():
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"{name}[{key!r}] = {p} is not a probability")
        total += p
    if abs(total - 1.0) > _PMF_TOL:
        raise ValidationError(f"{name} sums to {total!r}, expected 1 within {_PMF_TOL}")


def _sorted_keys(keys) -> list:
    try:
        return sorted(keys)
    except TypeError:
        return sorted(keys, key=repr)


@dataclass(frozen=True)
class StructuralLaw:
    """A complete finite data-generating process with latent confounding.

    Fields
    ------
    covariates : names of the decision-relevant covariates (may be empty).
    p_l : pmf over covariate contexts (tuples aligned with `covariates`).
    p_u : pmf over latent confounder values.
    p_a_given_zlu : (z, l, u) -> P(A=1 | Z=z, L=l, U=u).  For laws without an
        instrument the z slot is None.
    mean_y_given_alu : (a, l, u) -> E(Y^a | L=l, U=u).
    p_z_given_l : l -> P(Z=1 | L=l), or None when there is no instrument.
    outcome_noise : "degenerate", "bernoulli", or ("gaussian", sigma).  Noise
        affects sampling only; every oracle works on the means.
    inert_covariates : name -> pmf; extra columns drawn independently when
        sampling, carried in datasets but decision-irrelevant by construction.
    """

    covariates: tuple[str, ...]
    p_l: dict
    p_u: dict
    p_a_given_zlu: dict
    mean_y_given_alu: dict
    p_z_given_l: dict | None = None
    outcome_noise: str | tuple = "degenerate"
    inert_covariates: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        _check_pmf("p_l", self.p_l)
        _check_pmf("p_u", self.p_u)
        for l in self.p_l:
            if not isinstance(l, tuple) or len(l) != len(self.covariates):
                raise ValidationError(f"context {l!r} does not match covariates {self.covariates}")
        if self.p_z_given_l is not None:
            for l in self.p_l:
                pz = self.p_z_given_l.get(l)
                if pz is None or not (0.0 <= pz <= 1.0):
                    raise ValidationError(f"p_z_given_l missing or invalid for context {l!r}")
        for z in self.z_values:
            for l in self.p_l:
                for u in self.p_u:
                    pa = self.p_a_given_zlu.get((z, l, u))
                    if pa is None or not (0.0 <= pa <= 1.0):
                        raise ValidationError(f"p_a_given_zlu missing or invalid at {(z, l, u)!r}")
        noise = self.outcome_noise
        if isinstance(noise, tuple):
            if len(noise) != 2 or noise[0] != "gaussian" or not noise[1] > 0:
                raise ValidationError(f"bad outcome_noise {noise!r}")
        elif noise not in ("degenerate", "bernoulli"):
            raise ValidationError(f"bad outcome_noise {noise!r}")
        for a in (0, 1):
            for l in self.p_l:
                for u in self.p_u:
                    m = self.mean_y_given_alu.get((a, l, u))
                    if m is None or not math.isfinite(m):
                        raise ValidationError(f"mean_y_given_alu missing or invalid at {(a, l, u)!r}")
                    if noise == "bernoulli" and not (0.0 <= m <= 1.0):
                        raise ValidationError(
                            f"bernoulli outcome needs means in [0,1], got {m} at {(a, l, u)!r}"
                        )
        for name, pmf in self.inert_covariates.items():
            _check_pmf(f"inert_covariates[{name!r}]", pmf)

    @property
    def has_instrument(self) -> bool:
        return self.p_z_given_l is not None

    @property
    def z_values(self) -> tuple:
        return (0, 1) if self.p_z_given_l is not None else (None,)

    @property
    def contexts(self) -> list[tuple]:
        return _sorted_keys(self.p_l)

    @property
    def u_values(self) -> list:
        return _sorted_keys(self.p_u)

    def p_z(self, z: int, l: tuple) -> float:
        assert self.p_z_given_l is not None
        p1 = self.p_z_given_l[l]
        return p1 if z == 1 else 1.0 - p1

    def p_a(self, a: int, z, l: tuple, u) -> float:
        p1 = self.p_a_given_zlu[(z, l, u)]
        return p1 if a == 1 else 1.0 - p1

    def natural_propensity(self, a: int, l: tuple, z=None) -> float:
        """P(A=a | L=l) or P(A=a | L=l, Z=z)."""
        if z is not None:
            if not self.has_instrument:
                raise ValidationError("law has no instrument, cannot condition on z")
            return sum(self.p_u[u] * self.p_a(a, z, l, u) for u in self.p_u)
        total = 0.0
        for u in self.p_u:
            for zv in self.z_values:
                w = self.p_u[u] * (self.p_z(zv, l) if self.has_instrument else 1.0)
                total += w * self.p_a(a, zv, l, u)
        return total


#======================================================================
# Worked example laws
#======================================================================

def build_example_law(which: int, c: float | None = None) -> StructuralLaw:
    """The three fully worked example processes.

    Examples 1 and 2 have a gaussian outcome whose conditional mean flips sign
    with the latent U, an inert extra covariate w, and treatment uptake that
    responds (positively resp. negatively) to the instrument.  Example 3 is a
    bernoulli-outcome process indexed by an uptake slope c in (0, 0.4).
    """
    empty = ()
    if which in (1, 2):
        if c is not None:
            raise ValidationError(f"example {which} takes no parameter c")
        p_a = {}
        for z in (0, 1):
            for u in (0, 1):
                uptake = 0.4 + 0.2 * z + 0.3 * u
                p_a[(z, empty, u)] = uptake if which == 1 else 1.0 - uptake
        mean_y = {}
        for u in (0, 1):
            mean_y[(1, empty, u)] = 2.0 * u - 1.0
            mean_y[(0, empty, u)] = 1.0 - 2.0 * u
        return StructuralLaw(
            covariates=(),
            p_l={empty: 1.0},
            p_u={0: 0.5, 1: 0.5},
            p_a_given_zlu=p_a,
            mean_y_given_alu=mean_y,
            p_z_given_l={empty: 0.5},
            outcome_noise=("gaussian", 1.0),
            inert_covariates={"w": {0: 0.5, 1: 0.5}},
        )
    if which == 3:
        if c is None:
            raise ValidationError("example 3 requires the uptake slope c")
        if not (0.0 < c < 0.4):
            raise ValidationError(f"example 3 requires 0 < c < 0.4, got c={c}")
        p_a = {(z, empty, u): 0.5 * c + c * z + c * u for z in (0, 1) for u in (0, 1)}
        mean_y = {
            (1, empty, 1): 0.1,
            (1, empty, 0): 0.9,
            (0, empty, 1): 0.7,
            (0, empty, 0): 0.1,
        }
        return StructuralLaw(
            covariates=(),
            p_l={empty: 1.0},
            p_u={0: 0.5, 1: 0.5},
            p_a_given_zlu=p_a,
            mean_y_given_alu=mean_y,
            p_z_given_l={empty: 0.5},
            outcome_noise="bernoulli",
        )
    raise ValidationError(f"unknown example id {which!r}")


#======================================================================
# Random laws
#======================================================================

def _random_pmf(rng: np.random.Generator, keys: list, floor: float = 0.05) -> dict:
    weights = rng.dirichlet(np.ones(len(keys)))
    probs = floor + (1.0 - floor * len(keys)) * weights
    return {k: float(p) for k, p in zip(keys, probs)}


def random_law(
    rng: np.random.Generator,
    kind: str = "iv_compliant",
    n_covariates: int = 1,
    n_levels: int = 2,
    outcome: str = "bernoulli",
    with_instrument: bool = True,
) -> StructuralLaw:
    """Draw a random finite law for property testing.

    kind:
      "generic"       no constraint beyond the structural ones;
      "iv_compliant"  treatment uptake shifts by a u-free amount delta(l) with
                      |delta| >= 0.1 (so instrument-based identification is exact);
      "exchangeable"  uptake does not depend on u at all (no confounding of A).
    """
    if kind not in ("generic", "iv_compliant", "exchangeable"):
        raise ValidationError(f"unknown random law kind {kind!r}")
    names = tuple(f"x{j}" for j in range(n_covariates))
    contexts: list[tuple] = [()]
    for _ in range(n_covariates):
        contexts = [ctx + (lev,) for ctx in contexts for lev in range(n_levels)]
    u_values = [0, 1]

    p_l = _random_pmf(rng, contexts)
    p_u = _random_pmf(rng, u_values)
    p_z = {l: float(rng.uniform(0.2, 0.8)) for l in contexts} if with_instrument else None
    z_values = (0, 1) if with_instrument else (None,)

    p_a: dict = {}
    for l in contexts:
        if kind == "iv_compliant" and with_instrument:
            shift = float(rng.uniform(0.1, 0.4)) * (1 if rng.random() < 0.5 else -1)
            for u in u_values:
                lo, hi = (0.05, 0.95 - shift) if shift > 0 else (0.05 - shift, 0.95)
                base = float(rng.uniform(lo, hi))
                p_a[(0, l, u)] = base
                p_a[(1, l, u)] = base + shift
        elif kind == "exchangeable":
            for z in z_values:
                shared = float(rng.uniform(0.05, 0.95))
                for u in u_values:
                    p_a[(z, l, u)] = shared
        else:
            for z in z_values:
                for u in u_values:
                    p_a[(z, l, u)] = float(rng.uniform(0.05, 0.95))

    mean_y = {
        (a, l, u): float(rng.uniform(0.0, 1.0))
        for a in (0, 1)
        for l in contexts
        for u in u_values
    }
    noise = "bernoulli" if outcome == "bernoulli" else ("gaussian", 1.0) if outcome == "gaussian" else "degenerate"
    return StructuralLaw(
        covariates=names,
        p_l=p_l,
        p_u=p_u,
        p_a_given_zlu=p_a,
        mean_y_given_alu=mean_y,
        p_z_given_l=p_z,
        outcome_noise=noise,
    )


#======================================================================
# Exact oracles
#======================================================================

def oracle_conditional_mean(
    law: StructuralLaw,
    a: int,
    l: tuple | None = None,
    natural_a: int | None = None,
    z: int | None = None,
) -> float:
    """E(Y^a | conditioning event), computed by exact enumeration.

    The conditioning event is built from the optional arguments: covariate
    context `l` (None averages over contexts), the natural treatment value
    `natural_a` (the treatment the unit would take on its own), and the
    instrument value `z`.  A zero-probability event raises NumericalError.
    """
    if a not in (0, 1):
        raise ValidationError(f"a must be 0 or 1, got {a!r}")
    if z is not None and not law.has_instrument:
        raise ValidationError("law has no instrument, cannot condition on z")
    numer = 0.0
    denom = 0.0
    for lv in law.contexts:
        if l is not None and lv != l:
            continue
        for zv in law.z_values:
            if z is not None and zv != z:
                continue
            w_lz = law.p_l[lv] * (law.p_z(zv, lv) if law.has_instrument else 1.0)
            for u in law.u_values:
                w = w_lz * law.p_u[u]
                if natural_a is not None:
                    w *= law.p_a(natural_a, zv, lv, u)
                numer += w * law.mean_y_given_alu[(a, lv, u)]
                denom += w
    if denom <= 0.0:
        raise NumericalError(
            f"conditioning event has probability zero (a={a}, l={l!r}, natural_a={natural_a}, z={z})"
        )
    return numer / denom


def oracle_value(law: StructuralLaw, regime: Regime, l: tuple | None = None) -> float:
    """E(Y^{g}) for a decision regime g, optionally conditional on L=l.

    The regime may read the natural treatment value and, for instrument-aware
    rules, the instrument; the expectation enumerates all of (L, Z, U, A).
    """
    if regime.kind == "superoptimal_LAZ" and not law.has_instrument:
        raise ValidationError("instrument-aware regime on a law without an instrument")
    numer = 0.0
    denom = 0.0
    for lv in law.contexts:
        if l is not None and lv != l:
            continue
        for zv in law.z_values:
            w_lz = law.p_l[lv] * (law.p_z(zv, lv) if law.has_instrument else 1.0)
            for u in law.u_values:
                w = w_lz * law.p_u[u]
                for intent in (0, 1):
                    w_i = w * law.p_a(intent, zv, lv, u)
                    if w_i == 0.0:
                        continue
                    action = regime.decide(a_intent=intent, l=lv, z=zv)
                    numer += w_i * law.mean_y_given_alu[(action, lv, u)]
                    denom += w_i
    if denom <= 0.0:
        raise NumericalError(f"conditioning context {l!r} has probability zero")
    return numer / denom


def true_regime(law: StructuralLaw, kind: str) -> Regime:
    """The exact decision table of the requested regime kind under the law.

    Tie conventions: the intent-free rule resolves ties toward a=1; the
    intent-aware rules resolve ties by keeping the intended treatment.
    """
    if kind == "observed":
        return Regime(kind="observed")
    table: dict = {}
    if kind == "optimal_L":
        for l in law.contexts:
            m1 = oracle_conditional_mean(law, 1, l=l)
            m0 = oracle_conditional_mean(law, 0, l=l)
            table[l] = 1 if m1 >= m0 else 0
        return Regime(kind=kind, table=table)
    if kind == "superoptimal_LA":
        for l in law.contexts:
            for intent in (0, 1):
                m_keep = oracle_conditional_mean(law, intent, l=l, natural_a=intent)
                m_flip = oracle_conditional_mean(law, 1 - intent, l=l, natural_a=intent)
                table[(intent, l)] = intent if m_keep >= m_flip else 1 - intent
        return Regime(kind=kind, table=table)
    if kind == "superoptimal_LAZ":
        if not law.has_instrument:
            raise ValidationError("instrument-aware regime on a law without an instrument")
        for l in law.contexts:
            for zv in (0, 1):
                for intent in (0, 1):
                    m_keep = oracle_conditional_mean(law, intent, l=l, natural_a=intent, z=zv)
                    m_flip = oracle_conditional_mean(law, 1 - intent, l=l, natural_a=intent, z=zv)
                    table[(intent, l, zv)] = intent if m_keep >= m_flip else 1 - intent
        return Regime(kind=kind, table=table)
    raise ValidationError(f"unknown regime kind {kind!r}")


def true_instruction_map(law: StructuralLaw) -> dict:
    """Per-context relation between the intent-aware rule and intent-free play."""
    out = {}
    for l in law.contexts:
        effect = {}
        for intent in (0, 1):
            effect[intent] = oracle_conditional_mean(law, 1, l=l, natural_a=intent) - oracle_conditional_mean(
                law, 0, l=l, natural_a=intent
            )
        out[l] = classify_instruction(effect[1], effect[0])
    return out


#======================================================================
# Sampling
#======================================================================

SAMPLE_MODES = ("observational", "two_arm_trial", "preference_trial")


def _law_schema(law: StructuralLaw, row_kind: str) -> Schema:
    names = law.covariates + tuple(law.inert_covariates)
    levels: dict[str, tuple] = {}
    for j, name in enumerate(law.covariates):
        levels[name] = tuple(_sorted_keys({l[j] for l in law.p_l}))
    for name, pmf in law.inert_covariates.items():
        levels[name] = tuple(_sorted_keys(pmf))
    return Schema(
        covariates=names,
        levels=levels,
        has_instrument=law.has_instrument,
        row_kind=row_kind,
    )


def draw_sample(law: StructuralLaw, n: int, seed: int, mode: str = "observational") -> Dataset:
    """Draw n units from the law.

    Modes
    -----
    observational : record (L, Z if present, A, Y) with Y = Y^A.
    two_arm_trial : a fair coin assigns the treatment; the natural choice is
        never elicited, so rows are PreferenceTrialRecords with a=None and arm
        in {assigned_0, assigned_1}.
    preference_trial : a third of units (on average) receive their own stated
        choice; the stated choice is recorded in every arm.
    """
    if mode not in SAMPLE_MODES:
        raise ValidationError(f"unknown sampling mode {mode!r}")
    if n <= 0:
        raise ValidationError(f"sample size must be positive, got {n}")
    rng = np.random.default_rng(child_seed(seed))

    contexts = law.contexts
    u_values = law.u_values
    p_l = np.array([law.p_l[l] for l in contexts])
    p_u = np.array([law.p_u[u] for u in u_values])
    l_idx = rng.choice(len(contexts), size=n, p=p_l / p_l.sum())
    u_idx = rng.choice(len(u_values), size=n, p=p_u / p_u.sum())

    if law.has_instrument:
        pz1 = np.array([law.p_z_given_l[l] for l in contexts])
        z_arr = (rng.random(n) < pz1[l_idx]).astype(int)
        uptake = np.array(
            [[[law.p_a_given_zlu[(z, l, u)] for u in u_values] for l in contexts] for z in (0, 1)]
        )
        p_choice = uptake[z_arr, l_idx, u_idx]
    else:
        z_arr = None
        uptake = np.array([[law.p_a_given_zlu[(None, l, u)] for u in u_values] for l in contexts])
        p_choice = uptake[l_idx, u_idx]
    natural = (rng.random(n) < p_choice).astype(int)

    if mode == "observational":
        administered = natural
    elif mode == "two_arm_trial":
        administered = rng.integers(0, 2, size=n)
    else:
        arm_idx = rng.integers(0, 3, size=n)  # 0 -> assigned_0, 1 -> assigned_1, 2 -> preference
        administered = np.where(arm_idx == 2, natural, arm_idx)

    means = np.array(
        [[[law.mean_y_given_alu[(a, l, u)] for u in u_values] for l in contexts] for a in (0, 1)]
    )
    mu = means[administered, l_idx, u_idx]
    noise = law.outcome_noise
    if noise == "degenerate":
        y_arr = mu
    elif noise == "bernoulli":
        y_arr = (rng.random(n) < mu).astype(float)
    else:
        y_arr = mu + noise[1] * rng.standard_normal(n)

    inert_cols = []
    for pmf in law.inert_covariates.values():
        keys = _sorted_keys(pmf)
        probs = np.array([pmf[k] for k in keys])
        draw = rng.choice(len(keys), size=n, p=probs / probs.sum())
        inert_cols.append([keys[i] for i in draw])

    rows: list = []
    if mode == "observational":
        for i in range(n):
            l = contexts[l_idx[i]] + tuple(col[i] for col in inert_cols)
            rows.append(
                Observation(
                    l=l,
                    a=int(natural[i]),
                    y=float(y_arr[i]),
                    z=int(z_arr[i]) if z_arr is not None else None,
                )
            )
        schema = _law_schema(law, "observation")
    else:
        for i in range(n):
            l = contexts[l_idx[i]] + tuple(col[i] for col in inert_cols)
            if mode == "two_arm_trial":
                arm = f"assigned_{int(administered[i])}"
                stated = None
            else:
                arm = ("assigned_0", "assigned_1", "preference")[int(arm_idx[i])]
                stated = int(natural[i])
            rows.append(
                PreferenceTrialRecord(
                    l=l,
                    a_star=int(administered[i]),
                    arm=arm,
                    y=float(y_arr[i]),
                    a=stated,
                    z=int(z_arr[i]) if z_arr is not None else None,
                )
            )
        schema = _law_schema(law, "preference_trial")
    logger.debug("drew %d rows from law in mode %s", n, mode)
    return Dataset(rows=tuple(rows), schema=schema)


#======================================================================
# JSON interchange for laws
#======================================================================

def law_to_json(law: StructuralLaw) -> str:
    contexts = law.contexts
    u_values = law.u_values
    z_values = list(law.z_values)
    doc = {
        "type": "structural_law",
        "covariates": list(law.covariates),
        "contexts": [list(l) for l in contexts],
        "p_l": [law.p_l[l] for l in contexts],
        "u_values": list(u_values),
        "p_u": [law.p_u[u] for u in u_values],
        "has_instrument": law.has_instrument,
        "p_z_given_l": [law.p_z_given_l[l] for l in contexts] if law.has_instrument else None,
        "p_a_given_zlu": [
            [[law.p_a_given_zlu[(z, l, u)] for u in u_values] for l in contexts] for z in z_values
        ],
        "mean_y_given_alu": [
            [[law.mean_y_given_alu[(a, l, u)] for u in u_values] for l in contexts] for a in (0, 1)
        ],
        "outcome_noise": (
            {"gaussian": law.outcome_noise[1]}
            if isinstance(law.outcome_noise, tuple)
            else law.outcome_noise
        ),
        "inert_covariates": {
            name: {"levels": _sorted_keys(pmf), "probs": [pmf[k] for k in _sorted_keys(pmf)]}
            for name, pmf in law.inert_covariates.items()
        },
    }
    return json.dumps(doc, indent=2)


def law_from_json(text: str) -> StructuralLaw:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"law file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "structural_law":
        raise ValidationError("law file must declare type 'structural_law'")
    try:
        contexts = [tuple(l) for l in doc["contexts"]]
        u_values = doc["u_values"]
        has_instrument = bool(doc["has_instrument"])
        z_values = (0, 1) if has_instrument else (None,)
        noise = doc["outcome_noise"]
        if isinstance(noise, dict):
            noise = ("gaussian", float(noise["gaussian"]))
        law = StructuralLaw(
            covariates=tuple(doc["covariates"]),
            p_l={l: float(p) for l, p in zip(contexts, doc["p_l"])},
            p_u={u: float(p) for u, p in zip(u_values, doc["p_u"])},
            p_a_given_zlu={
                (z, l, u): float(doc["p_a_given_zlu"][iz][il][iu])
                for iz, z in enumerate(z_values)
                for il, l in enumerate(contexts)
                for iu, u in enumerate(u_values)
            },
            mean_y_given_alu={
                (a, l, u): float(doc["mean_y_given_alu"][a][il][iu])
                for a in (0, 1)
                for il, l in enumerate(contexts)
                for iu, u in enumerate(u_values)
            },
            p_z_given_l=(
                {l: float(p) for l, p in zip(contexts, doc["p_z_given_l"])} if has_instrument else None
            ),
            outcome_noise=noise,
            inert_covariates={
                name: {k: float(p) for k, p in zip(spec["levels"], spec["probs"])}
                for name, spec in doc.get("inert_covariates", {}).items()
            },
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise ValidationError(f"law file is malformed: {exc!r}") from None
    return law
