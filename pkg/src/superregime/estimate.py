"""Finite-sample estimation of regime tables and regime values.

The pipeline mirrors the population identification layer:

1. split the data into a training and an evaluation part,
2. fit nuisance tables on the training part (per-arm uptake probabilities,
   the shifted outcome regressions, outcome means), either as saturated cell
   means or as main-effects GLMs evaluated at every covariate context,
3. turn the tables into decision tables for the optimal, superoptimal, and
   instrument-conditional superoptimal regimes plus the instruction map,
4. estimate each regime's value on the evaluation part with freshly fitted
   value-stage nuisances, and
5. attach percentile-bootstrap confidence intervals, refitting the
   value-stage nuisances inside every replicate while the regime stays fixed.

Everything downstream consumes per-context tables, so the two design choices
("saturated" vs "main_effects") differ only in how the table entries are
produced.  Bootstrap replicates are vectorised across resamples for the
saturated design.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    Instruction,
    IntervalBound,
    NumericalError,
    Regime,
    Schema,
    ValidationError,
    classify_instruction,
    dataset_fingerprint,
)
from .glm import NuisanceFit, fit_linear, fit_logit, predict_linear, predict_logit
from .simulate import child_seed

logger = logging.getLogger(__name__)

DESIGNS = ("saturated", "main_effects")
VALUE_ESTIMATORS = ("regression", "alternative")
LOW_COUNT_THRESHOLD = 5
REPORT_ROWS = ("observed", "optimal_L", "superoptimal_LA", "superoptimal_LAZ")
_ROW_STREAM = {label: i for i, label in enumerate(REPORT_ROWS)}
ARTIFACT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EstimationConfig:
    """Tuning knobs for the estimation pipeline."""

    split_fraction: float = 0.6
    bootstrap_reps: int = 500
    seed: int = 0
    delta_floor: float = 1e-3
    propensity_clip: float = 1e-3
    irls_tol: float = 1e-8
    irls_max_iter: int = 100
    design: str = "saturated"
    value_estimator: str = "regression"

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction <= 1.0:
            raise ValidationError(f"split_fraction must be in (0, 1], got {self.split_fraction}")
        if self.bootstrap_reps < 1:
            raise ValidationError("bootstrap_reps must be a positive integer")
        if self.delta_floor <= 0 or self.propensity_clip <= 0:
            raise ValidationError("delta_floor and propensity_clip must be positive")
        if self.propensity_clip >= 0.5:
            raise ValidationError("propensity_clip must be below 0.5")
        if self.design not in DESIGNS:
            raise ValidationError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.value_estimator not in VALUE_ESTIMATORS:
            raise ValidationError(
                f"value_estimator must be one of {VALUE_ESTIMATORS}, got {self.value_estimator!r}"
            )

    def to_dict(self) -> dict:
        return {
            "split_fraction": self.split_fraction,
            "bootstrap_reps": self.bootstrap_reps,
            "seed": self.seed,
            "delta_floor": self.delta_floor,
            "propensity_clip": self.propensity_clip,
            "irls_tol": self.irls_tol,
            "irls_max_iter": self.irls_max_iter,
            "design": self.design,
            "value_estimator": self.value_estimator,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EstimationConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config document must be a JSON object")
        known = set(cls().to_dict())
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**doc)


# ---------------------------------------------------------------------------
# Row encoding and cell statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedRows:
    """Dataset rows as flat arrays: context code, instrument, treatment, outcome."""

    contexts: tuple
    c: np.ndarray
    z: np.ndarray
    a: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return int(self.c.shape[0])

    @property
    def binary_y(self) -> bool:
        return bool(np.all((self.y == 0.0) | (self.y == 1.0)))


def _encode(dataset: Dataset) -> EncodedRows:
    schema = dataset.schema
    if schema.row_kind != "observation":
        raise ValidationError("estimation needs observational rows, not trial records")
    if not schema.has_instrument:
        raise ValidationError("estimation needs an instrument column")
    contexts = tuple(schema.contexts())
    index = {l: i for i, l in enumerate(contexts)}
    c = np.fromiter((index[row.l] for row in dataset.rows), dtype=np.intp, count=len(dataset.rows))
    z = np.fromiter((row.z for row in dataset.rows), dtype=np.intp, count=len(dataset.rows))
    a = np.fromiter((row.a for row in dataset.rows), dtype=np.intp, count=len(dataset.rows))
    y = np.fromiter((row.y for row in dataset.rows), dtype=float, count=len(dataset.rows))
    for value, name in ((z, "z"), (a, "a")):
        bad = ~np.isin(value, (0, 1))
        if bad.any():
            raise ValidationError(f"column {name!r} must be binary for estimation")
    if not (np.any(z == 0) and np.any(z == 1)):
        raise NumericalError("one instrument arm is empty; the uptake shift cannot be estimated")
    return EncodedRows(contexts=contexts, c=c, z=z, a=a, y=y)


def _cells(enc: EncodedRows, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row counts and outcome sums per (context, z, a) cell, optionally weighted."""
    C = len(enc.contexts)
    w = np.ones(enc.n) if weights is None else np.asarray(weights, dtype=float)
    N = np.zeros((C, 2, 2))
    S = np.zeros((C, 2, 2))
    np.add.at(N, (enc.c, enc.z, enc.a), w)
    np.add.at(S, (enc.c, enc.z, enc.a), w * enc.y)
    return N, S


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    den = np.asarray(den, dtype=float)
    return np.where(den > 0, np.asarray(num, dtype=float) / np.where(den > 0, den, 1.0), 0.0)


def _nuisance_arrays(N: np.ndarray, S: np.ndarray, cfg: EstimationConfig) -> dict:
    """All per-context tables from (…, C, z, a) counts/sums; batch axes pass through."""
    NZ = N.sum(-1)  # rows per (context, z)
    n_c = NZ.sum(-1)
    e_z = _safe_div(N[..., 1], NZ)  # P(A=1 | l, z)
    delta_raw = e_z[..., 1] - e_z[..., 0]
    floored = np.abs(delta_raw) < cfg.delta_floor
    delta = np.where(floored, np.where(delta_raw >= 0.0, 1.0, -1.0) * cfg.delta_floor, delta_raw)
    m1 = _safe_div(S[..., 1], NZ)  # E(Y I(A=1) | l, z)
    m0 = -_safe_div(S[..., 0], NZ)  # E(Y (2A-1) I(A=0) | l, z)
    psi1 = np.stack(((m0[..., 1] - m0[..., 0]) / delta, (m1[..., 1] - m1[..., 0]) / delta), axis=-1)
    S_a = S.sum(-2)
    N_a = N.sum(-2)
    eyi_l = _safe_div(S_a, n_c[..., None])  # E(Y I(A=a) | l)
    ey_al = _safe_div(S_a, N_a)  # E(Y | A=a, l)
    ey_l = _safe_div(S_a.sum(-1), n_c)
    eyi_lz = _safe_div(S, NZ[..., None])  # E(Y I(A=a) | l, z)
    ey_alz = _safe_div(S, N)  # E(Y | A=a, l, z)
    ey_lz = _safe_div(S.sum(-1), NZ)  # E(Y | l, z)
    p_a1_l = _safe_div(N_a[..., 1], n_c)
    invalid = (n_c > 0) & ((NZ[..., 0] == 0) | (NZ[..., 1] == 0))
    return {
        "N": N,
        "S": S,
        "NZ": NZ,
        "n_c": n_c,
        "e_z": e_z,
        "delta": delta,
        "floored": floored,
        "psi1": psi1,
        "eyi_l": eyi_l,
        "ey_al": ey_al,
        "ey_l": ey_l,
        "eyi_lz": eyi_lz,
        "ey_alz": ey_alz,
        "ey_lz": ey_lz,
        "p_a1_l": p_a1_l,
        "invalid": invalid,
    }


def _apply_pooled_fallback(arrs: dict, pooled: dict, contexts: tuple) -> list[str]:
    """Fill undefined table entries from the pooled-over-contexts fit; return flags.

    Keeps every table total so that regime construction works even when a
    context (or one of its instrument arms) is unseen in the training part.
    """
    flags: list[str] = []
    NZ = arrs["NZ"]
    n_c = arrs["n_c"]
    empty_ctx = n_c == 0
    zmiss = NZ == 0  # (C, 2)
    ctx_bad = empty_ctx | zmiss.any(-1)
    for c, l in enumerate(contexts):
        if empty_ctx[c]:
            flags.append(f"pooled_fallback:context={l!r}")
        elif ctx_bad[c]:
            missing = [z for z in (0, 1) if zmiss[c, z]]
            for z in missing:
                flags.append(f"empty_arm:context={l!r},z={z}")
        for z in (0, 1):
            if 0 < NZ[c, z] < LOW_COUNT_THRESHOLD:
                flags.append(f"low_count:context={l!r},z={z}")
        if arrs["floored"][c] and not ctx_bad[c]:
            flags.append(f"delta_floor:context={l!r}")
    p = {k: v[0] for k, v in pooled.items()}  # pooled arrays carry a single context
    arrs["delta"] = np.where(ctx_bad, p["delta"], arrs["delta"])
    arrs["psi1"] = np.where(ctx_bad[:, None], p["psi1"], arrs["psi1"])
    for key in ("ey_l", "p_a1_l"):
        arrs[key] = np.where(empty_ctx, p[key], arrs[key])
    arrs["eyi_l"] = np.where(empty_ctx[:, None], p["eyi_l"], arrs["eyi_l"])
    arrs["ey_al"] = np.where(arrs["N"].sum(-2) == 0, p["ey_al"], arrs["ey_al"])
    for key in ("e_z", "ey_lz"):
        arrs[key] = np.where(zmiss, p[key], arrs[key])
    for key in ("eyi_lz", "ey_alz"):
        arrs[key] = np.where(zmiss[..., None], p[key], arrs[key])
    arrs["ey_alz"] = np.where(arrs["N"] == 0, p["ey_alz"], arrs["ey_alz"])
    if pooled["floored"][0]:
        flags.append("delta_floor:context=pooled")
    return flags


# ---------------------------------------------------------------------------
# Main-effects design
# ---------------------------------------------------------------------------


def _design_matrix(schema: Schema, contexts: tuple) -> np.ndarray:
    """Intercept plus one-hot columns for every non-baseline covariate level."""
    columns = [np.ones(len(contexts))]
    for j, name in enumerate(schema.covariates):
        for level in schema.levels[name][1:]:
            columns.append(np.array([1.0 if l[j] == level else 0.0 for l in contexts]))
    return np.stack(columns, axis=1)


def _fit_predict(
    X: np.ndarray,
    response: np.ndarray,
    weights: np.ndarray,
    X_ctx: np.ndarray,
    model_id: str,
    binary: bool,
    cfg: EstimationConfig,
) -> tuple[np.ndarray, NuisanceFit]:
    keep = weights > 0
    if not keep.any():
        raise NumericalError(f"model {model_id}: no observations")
    if binary:
        fit = fit_logit(
            X[keep],
            response[keep],
            weights=weights[keep],
            model_id=model_id,
            tol=cfg.irls_tol,
            max_iter=cfg.irls_max_iter,
        )
        return predict_logit(fit, X_ctx), fit
    sw = np.sqrt(weights[keep])
    fit = fit_linear(X[keep] * sw[:, None], response[keep] * sw, model_id=model_id)
    return predict_linear(fit, X_ctx), fit


def _main_effects_arrays(
    enc: EncodedRows,
    schema: Schema,
    cfg: EstimationConfig,
    weights: np.ndarray | None,
) -> tuple[dict, list[str], list[NuisanceFit]]:
    contexts = enc.contexts
    C = len(contexts)
    X_ctx = _design_matrix(schema, contexts)
    X = X_ctx[enc.c]
    w = np.ones(enc.n) if weights is None else np.asarray(weights, dtype=float)
    binary = enc.binary_y
    fits: list[NuisanceFit] = []
    flags: list[str] = []

    def fp(response, subset, model_id, model_binary):
        pred, fit = _fit_predict(X, response, w * subset, X_ctx, model_id, model_binary, cfg)
        fits.append(fit)
        return pred

    a_f = enc.a.astype(float)
    e_z = np.stack(
        [fp(a_f, (enc.z == z).astype(float), f"a_given_zl(z={z})", True) for z in (0, 1)], axis=-1
    )
    m = np.zeros((C, 2, 2))  # (context, z, a) -> E(Y (2A-1) I(A=a) | l, z)
    for z in (0, 1):
        in_z = (enc.z == z).astype(float)
        for a in (0, 1):
            model_id = f"y2a1_given_lz(a={a},z={z})"
            if binary:
                # shift the a=0 response into {0,1} so the logistic family applies
                response = enc.y * (enc.a == a) if a == 1 else 1.0 - enc.y * (enc.a == a)
                pred = fp(response, in_z, model_id, True)
                m[:, z, a] = pred if a == 1 else pred - 1.0
            else:
                response = enc.y * (2 * a - 1) * (enc.a == a)
                m[:, z, a] = fp(response, in_z, model_id, False)
    ey_l = fp(enc.y, np.ones(enc.n), "y_given_l", binary)
    ey_al = np.stack(
        [fp(enc.y, (enc.a == a).astype(float), f"y_given_al(a={a})", binary) for a in (0, 1)],
        axis=-1,
    )
    p_a1_l = fp(a_f, np.ones(enc.n), "a_given_l", True)

    delta_raw = e_z[:, 1] - e_z[:, 0]
    floored = np.abs(delta_raw) < cfg.delta_floor
    delta = np.where(floored, np.where(delta_raw >= 0.0, 1.0, -1.0) * cfg.delta_floor, delta_raw)
    for c, l in enumerate(contexts):
        if floored[c]:
            flags.append(f"delta_floor:context={l!r}")
    psi1 = np.stack(
        (
            (m[:, 1, 0] - m[:, 0, 0]) / delta,
            (m[:, 1, 1] - m[:, 0, 1]) / delta,
        ),
        axis=-1,
    )
    p_al = np.stack((1.0 - p_a1_l, p_a1_l), axis=-1)
    eyi_l = ey_al * p_al
    eyi_lz = np.stack((-m[:, :, 0], m[:, :, 1]), axis=-1)
    ey_lz = m[:, :, 1] - m[:, :, 0]
    p_alz = np.stack((1.0 - e_z, e_z), axis=-1)
    ey_alz = eyi_lz / np.clip(p_alz, cfg.propensity_clip, None)
    if np.any(p_alz < cfg.propensity_clip):
        flags.append("propensity_clip:model=a_given_zl")
    N, S = _cells(enc, None if weights is None else w)
    NZ = N.sum(-1)
    arrs = {
        "N": N,
        "S": S,
        "NZ": NZ,
        "n_c": NZ.sum(-1),
        "e_z": e_z,
        "delta": delta,
        "floored": floored,
        "psi1": psi1,
        "eyi_l": eyi_l,
        "ey_al": ey_al,
        "ey_l": ey_l,
        "eyi_lz": eyi_lz,
        "ey_alz": ey_alz,
        "ey_lz": ey_lz,
        "p_a1_l": p_a1_l,
        "invalid": np.zeros(C, dtype=bool),
    }
    return arrs, flags, fits


# ---------------------------------------------------------------------------
# Nuisance tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuisanceTables:
    """Per-context nuisance estimates plus fit metadata and data-quality flags."""

    contexts: tuple
    arrays: dict
    flags: tuple[str, ...]
    fits: tuple[NuisanceFit, ...]
    n: int
    binary_y: bool
    schema: Schema
    config: EstimationConfig

    def delta_table(self) -> dict:
        return {l: float(self.arrays["delta"][c]) for c, l in enumerate(self.contexts)}

    def psi1_table(self) -> dict:
        return {
            (a, l): float(self.arrays["psi1"][c, a])
            for c, l in enumerate(self.contexts)
            for a in (0, 1)
        }


def _saturated_fit_records(enc: EncodedRows, arrs: dict) -> list[NuisanceFit]:
    """Fit metadata for the saturated design: cell means are the MLE."""

    def deviance_binomial(resp: np.ndarray, pred: np.ndarray) -> float:
        inside = (pred > 0.0) & (pred < 1.0)
        r, p = resp[inside], pred[inside]
        return float(-2.0 * np.sum(r * np.log(p) + (1.0 - r) * np.log(1.0 - p)))

    binary = enc.binary_y
    records: list[NuisanceFit] = []

    def record(model_id: str, table: np.ndarray, resp: np.ndarray, pred: np.ndarray, model_binary: bool):
        if model_binary:
            dev = deviance_binomial(resp, pred)
            family = "binomial"
        else:
            dev = float(np.sum((resp - pred) ** 2))
            family = "gaussian"
        records.append(
            NuisanceFit(
                model_id=model_id,
                coefficients=tuple(float(v) for v in table),
                converged=True,
                deviance=dev,
                family=family,
                n_iterations=0,
                notes=("saturated cell means",),
            )
        )

    a_f = enc.a.astype(float)
    for z in (0, 1):
        mask = enc.z == z
        record(f"a_given_zl(z={z})", arrs["e_z"][:, z], a_f[mask], arrs["e_z"][enc.c[mask], z], True)
    for z in (0, 1):
        for a in (0, 1):
            mask = enc.z == z
            if binary:
                resp = enc.y * (enc.a == a) if a == 1 else 1.0 - enc.y * (enc.a == a)
                tab = arrs["eyi_lz"][:, z, a] if a == 1 else 1.0 - arrs["eyi_lz"][:, z, a]
            else:
                resp = enc.y * (2 * a - 1) * (enc.a == a)
                tab = (2 * a - 1) * arrs["eyi_lz"][:, z, a]
            record(f"y2a1_given_lz(a={a},z={z})", tab, resp[mask], tab[enc.c[mask]], binary)
    record("y_given_l", arrs["ey_l"], enc.y, arrs["ey_l"][enc.c], binary)
    for a in (0, 1):
        mask = enc.a == a
        record(
            f"y_given_al(a={a})", arrs["ey_al"][:, a], enc.y[mask], arrs["ey_al"][enc.c[mask], a], binary
        )
    record("a_given_l", arrs["p_a1_l"], a_f, arrs["p_a1_l"][enc.c], True)
    return records


def _fit_tables(
    enc: EncodedRows,
    schema: Schema,
    cfg: EstimationConfig,
    weights: np.ndarray | None = None,
    record_fits: bool = True,
) -> NuisanceTables:
    if cfg.design == "saturated":
        N, S = _cells(enc, weights)
        arrs = _nuisance_arrays(N, S, cfg)
        pooled = _nuisance_arrays(N.sum(0, keepdims=True), S.sum(0, keepdims=True), cfg)
        if pooled["invalid"][0]:
            raise NumericalError("one instrument arm is empty; the uptake shift cannot be estimated")
        flags = _apply_pooled_fallback(arrs, pooled, enc.contexts)
        fits = _saturated_fit_records(enc, arrs) if record_fits else []
    else:
        arrs, flags, fits = _main_effects_arrays(enc, schema, cfg, weights)
    return NuisanceTables(
        contexts=enc.contexts,
        arrays=arrs,
        flags=tuple(sorted(flags)),
        fits=tuple(fits),
        n=enc.n,
        binary_y=enc.binary_y,
        schema=schema,
        config=cfg,
    )


def fit_nuisances(dataset: Dataset, config: EstimationConfig | None = None) -> NuisanceTables:
    """Fit every nuisance table on `dataset` (no splitting here)."""
    cfg = config or EstimationConfig()
    return _fit_tables(_encode(dataset), dataset.schema, cfg)


def estimate_delta(dataset: Dataset, config: EstimationConfig | None = None) -> tuple[dict, tuple]:
    """Per-context instrument-arm uptake shift, with data-quality flags."""
    tables = fit_nuisances(dataset, config)
    return tables.delta_table(), tables.flags


def estimate_psi1(dataset: Dataset, config: EstimationConfig | None = None) -> dict:
    """Per-(action, context) shifted counterfactual mean table."""
    return fit_nuisances(dataset, config).psi1_table()


# ---------------------------------------------------------------------------
# Regimes and the instruction map
# ---------------------------------------------------------------------------


def estimate_regime(tables: NuisanceTables, kind: str) -> Regime:
    """Decision table of the requested regime kind from fitted nuisances.

    Ties go to action 1 for the optimal regime and to keeping the intended
    treatment for the superoptimal regimes, matching the population rules.
    """
    arrs = tables.arrays
    psi1 = arrs["psi1"]
    if kind == "observed":
        return Regime(kind="observed")
    if kind == "optimal_L":
        table = {
            l: int(psi1[c, 1] >= psi1[c, 0]) for c, l in enumerate(tables.contexts)
        }
    elif kind == "superoptimal_LA":
        ey_l = arrs["ey_l"]
        table = {}
        for c, l in enumerate(tables.contexts):
            for intent in (0, 1):
                keep = ey_l[c] >= psi1[c, 1 - intent]
                table[(intent, l)] = intent if keep else 1 - intent
    elif kind == "superoptimal_LAZ":
        ey_lz = arrs["ey_lz"]
        table = {}
        for c, l in enumerate(tables.contexts):
            for intent in (0, 1):
                for z in (0, 1):
                    keep = ey_lz[c, z] >= psi1[c, 1 - intent]
                    table[(intent, l, z)] = intent if keep else 1 - intent
    else:
        raise ValidationError(f"cannot estimate a regime of kind {kind!r}")
    return Regime(kind=kind, table=table)


def estimate_instruction_map(tables: NuisanceTables) -> dict:
    """Per-context instruction from the estimated within-group effect signs."""
    arrs = tables.arrays
    clip = tables.config.propensity_clip
    p_al = np.stack((1.0 - arrs["p_a1_l"], arrs["p_a1_l"]), axis=-1)
    p_al = np.clip(p_al, clip, None)
    out = {}
    for c, l in enumerate(tables.contexts):
        # E(Y^a | A=a', l) for a != a': (psi1(a) - E(Y I(A=a)|l)) / P(A=a'|l)
        cross_0_given_1 = (arrs["psi1"][c, 0] - arrs["eyi_l"][c, 0]) / p_al[c, 1]
        cross_1_given_0 = (arrs["psi1"][c, 1] - arrs["eyi_l"][c, 1]) / p_al[c, 0]
        effect_if_1 = arrs["ey_al"][c, 1] - cross_0_given_1
        effect_if_0 = cross_1_given_0 - arrs["ey_al"][c, 0]
        out[l] = classify_instruction(effect_if_1, effect_if_0)
    return out


# ---------------------------------------------------------------------------
# Value estimation
# ---------------------------------------------------------------------------


def _regime_masks(regime: Regime, contexts: tuple, occupied: np.ndarray) -> tuple[np.ndarray, bool]:
    """(match mask over (context, z, intent), whether the regime reads z).

    Cells that never occur get a vacuous `match=True`; a genuinely occupied
    cell with no regime entry is an error.
    """
    uses_z = regime.context_form == "alz"
    match = np.ones((len(contexts), 2, 2), dtype=bool)
    for c, l in enumerate(contexts):
        for z in (0, 1):
            for intent in (0, 1):
                if not occupied[c, z, intent]:
                    continue
                try:
                    if regime.kind == "observed":
                        g = regime.decide(intent, l)
                    elif regime.context_form == "l":
                        g = regime.decide(l=l)
                    elif regime.context_form == "al":
                        g = regime.decide(intent, l)
                    else:
                        g = regime.decide(intent, l, z)
                except ValidationError as err:
                    raise ValidationError(
                        f"regime key absent for observed cell intent={intent}, "
                        f"context={l!r}, z={z}: {err}"
                    ) from err
                match[c, z, intent] = g == intent
    return match, uses_z


def _value_from_arrays(
    arrs: dict,
    match: np.ndarray,
    uses_z: bool,
    cfg: EstimationConfig,
) -> np.ndarray:
    """Plug-in value for one or a batch of nuisance-table sets.

    Units whose intended treatment the regime keeps contribute the factual
    outcome regression (or the raw outcome under the "alternative"
    estimator); units the regime flips contribute the identified mean of the
    opposite treatment given their intent.
    """
    N, S = arrs["N"], arrs["S"]
    clip = cfg.propensity_clip
    psi1_flip = arrs["psi1"][..., ::-1]  # index by intent -> psi1 of the opposite action
    if uses_z:
        p_alz = np.stack((1.0 - arrs["e_z"], arrs["e_z"]), axis=-1)
        t_flip = (psi1_flip[..., None, :] - arrs["eyi_lz"][..., ::-1]) / np.clip(p_alz, clip, None)
        t_match = arrs["ey_alz"]
    else:
        p_al = np.stack((1.0 - arrs["p_a1_l"], arrs["p_a1_l"]), axis=-1)
        v = (psi1_flip - arrs["eyi_l"][..., ::-1]) / np.clip(p_al, clip, None)
        t_flip = np.broadcast_to(v[..., None, :], N.shape)
        t_match = np.broadcast_to(arrs["ey_al"][..., None, :], N.shape)
    n = N.sum((-3, -2, -1))
    if cfg.value_estimator == "regression":
        contrib = np.where(match, t_match, t_flip)
        return (N * contrib).sum((-3, -2, -1)) / n
    kept = (S * match).sum((-3, -2, -1))
    flipped = (N * t_flip * ~match).sum((-3, -2, -1))
    return (kept + flipped) / n


def estimate_value(
    dataset: Dataset,
    regime: Regime,
    config: EstimationConfig | None = None,
) -> float:
    """Value of `regime` on `dataset`, with value-stage nuisances fitted here."""
    cfg = config or EstimationConfig()
    enc = _encode(dataset)
    tables = _fit_tables(enc, dataset.schema, cfg, record_fits=False)
    match, uses_z = _regime_masks(regime, enc.contexts, tables.arrays["N"] > 0)
    return float(_value_from_arrays(tables.arrays, match, uses_z, cfg))


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def _batched_cells(enc: EncodedRows, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    B = M.shape[0]
    C = len(enc.contexts)
    N = np.zeros((B, C, 2, 2))
    S = np.zeros((B, C, 2, 2))
    b_index = np.broadcast_to(np.arange(B)[:, None], M.shape)
    rows_c = np.broadcast_to(enc.c, M.shape)
    rows_z = np.broadcast_to(enc.z, M.shape)
    rows_a = np.broadcast_to(enc.a, M.shape)
    np.add.at(N, (b_index, rows_c, rows_z, rows_a), M)
    np.add.at(S, (b_index, rows_c, rows_z, rows_a), M * enc.y)
    return N, S


def bootstrap_value_ci(
    dataset: Dataset,
    regime: Regime,
    config: EstimationConfig | None = None,
    stream: int = 0,
) -> tuple[float, IntervalBound, dict]:
    """Percentile-bootstrap CI for the value of a fixed regime.

    Every replicate resamples rows with replacement and refits the
    value-stage nuisances.  A replicate that empties an instrument arm of an
    occupied context is redrawn up to ten times, then dropped with a warning;
    losing more than 1% of replicates aborts the run.
    """
    cfg = config or EstimationConfig()
    enc = _encode(dataset)
    tables = _fit_tables(enc, dataset.schema, cfg, record_fits=False)
    match, uses_z = _regime_masks(regime, enc.contexts, tables.arrays["N"] > 0)
    point = float(_value_from_arrays(tables.arrays, match, uses_z, cfg))

    B = cfg.bootstrap_reps
    n = enc.n
    rng = np.random.default_rng(child_seed(cfg.seed, 23, stream))
    pvals = np.full(n, 1.0 / n)
    M = rng.multinomial(n, pvals, size=B)

    if cfg.design == "saturated":
        N, S = _batched_cells(enc, M)
        arrs = _nuisance_arrays(N, S, cfg)
        bad = arrs["invalid"].any(-1)
        rounds = 0
        while bad.any() and rounds < 10:
            redraw = rng.multinomial(n, pvals, size=int(bad.sum()))
            Nb, Sb = _batched_cells(enc, redraw)
            N[bad], S[bad] = Nb, Sb
            arrs = _nuisance_arrays(N, S, cfg)
            bad = arrs["invalid"].any(-1)
            rounds += 1
        values = _value_from_arrays(arrs, match, uses_z, cfg)
        kept_values = values[~bad]
        dropped = int(bad.sum())
    else:
        kept: list[float] = []
        dropped = 0
        for b in range(B):
            row_weights = M[b].astype(float)
            ok = False
            for _ in range(11):  # first draw plus up to ten redraws
                Nw, _ = _cells(enc, row_weights)
                NZw = Nw.sum(-1)
                if not np.any((NZw.sum(-1) > 0) & ((NZw[:, 0] == 0) | (NZw[:, 1] == 0))):
                    ok = True
                    break
                row_weights = rng.multinomial(n, pvals).astype(float)
            if not ok:
                dropped += 1
                continue
            t = _fit_tables(enc, dataset.schema, cfg, weights=row_weights, record_fits=False)
            kept.append(float(_value_from_arrays(t.arrays, match, uses_z, cfg)))
        kept_values = np.array(kept)

    info = {"replicates": B, "dropped": dropped}
    if dropped:
        logger.warning("bootstrap dropped %d/%d replicates with an empty instrument arm", dropped, B)
    if dropped > 0.01 * B:
        raise NumericalError(
            f"bootstrap dropped {dropped}/{B} replicates (>1%); "
            "the evaluation sample is too sparse for a trustworthy interval"
        )
    lo, hi = (float(q) for q in np.percentile(kept_values, [2.5, 97.5]))
    if enc.binary_y:
        # a binary outcome bounds every attainable value
        point = min(max(point, 0.0), 1.0)
        lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
    lo, hi = min(lo, point), max(hi, point)
    return point, IntervalBound(lo, hi), info


# ---------------------------------------------------------------------------
# Dataset splitting and the full pipeline
# ---------------------------------------------------------------------------


def split_dataset(dataset: Dataset, config: EstimationConfig | None = None) -> tuple[Dataset, Dataset]:
    """Shuffled train/evaluation split; a split fraction of 1 reuses all rows."""
    cfg = config or EstimationConfig()
    n = len(dataset.rows)
    if cfg.split_fraction == 1.0:
        return dataset, dataset
    k = min(max(int(round(cfg.split_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(child_seed(cfg.seed, 11)).permutation(n)
    train = Dataset(rows=tuple(dataset.rows[i] for i in perm[:k]), schema=dataset.schema)
    evaluation = Dataset(rows=tuple(dataset.rows[i] for i in perm[k:]), schema=dataset.schema)
    return train, evaluation


@dataclass(frozen=True)
class RegimeArtifact:
    """Serializable result of a full fit: regimes, instructions, values, metadata."""

    covariates: tuple[str, ...]
    levels: dict
    has_instrument: bool
    n_rows: int
    n_train: int
    n_eval: int
    fingerprint: str
    config: EstimationConfig
    regimes: dict
    instruction_map: dict
    value_estimates: dict
    delta: dict
    flags: tuple[str, ...]
    fits: tuple[NuisanceFit, ...]
    bootstrap_info: dict
    schema_version: int = ARTIFACT_SCHEMA_VERSION

    def regime(self, label: str) -> Regime:
        if label not in self.regimes:
            raise ValidationError(f"artifact has no regime {label!r}")
        return self.regimes[label]

    def to_json(self) -> str:
        def ctx(l) -> list:
            return list(l)

        regimes_doc = {}
        for label, regime in self.regimes.items():
            if regime.kind == "observed":
                regimes_doc[label] = {"kind": "observed", "entries": []}
                continue
            entries = []
            for key, action in sorted(regime.table.items(), key=repr):
                if regime.context_form == "l":
                    entries.append({"context": ctx(key), "action": action})
                elif regime.context_form == "al":
                    entries.append({"intent": key[0], "context": ctx(key[1]), "action": action})
                else:
                    entries.append(
                        {"intent": key[0], "context": ctx(key[1]), "z": key[2], "action": action}
                    )
            regimes_doc[label] = {"kind": regime.kind, "entries": entries}
        doc = {
            "type": "regime_artifact",
            "schema_version": self.schema_version,
            "covariates": list(self.covariates),
            "levels": {name: list(levels) for name, levels in self.levels.items()},
            "has_instrument": self.has_instrument,
            "n_rows": self.n_rows,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "dataset_fingerprint": self.fingerprint,
            "config": self.config.to_dict(),
            "regimes": regimes_doc,
            "instruction_map": [
                {"context": ctx(l), "gamma": int(instr), "instruction": instr.label}
                for l, instr in sorted(self.instruction_map.items(), key=repr)
            ],
            "value_estimates": self.value_estimates,
            "delta": [
                {"context": ctx(l), "value": value} for l, value in sorted(self.delta.items(), key=repr)
            ],
            "flags": list(self.flags),
            "nuisance_fits": [fit.to_dict() for fit in self.fits],
            "bootstrap": self.bootstrap_info,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RegimeArtifact":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ValidationError(f"artifact is not valid JSON: {err}") from err
        if not isinstance(doc, dict) or doc.get("type") != "regime_artifact":
            raise ValidationError("document is not a regime artifact")
        if doc.get("schema_version") != ARTIFACT_SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported artifact schema_version {doc.get('schema_version')!r}"
            )
        try:
            config = EstimationConfig.from_dict(doc["config"])
            regimes = {}
            for label, spec in doc["regimes"].items():
                if spec["kind"] == "observed":
                    regimes[label] = Regime(kind="observed")
                    continue
                table = {}
                form = {"optimal_L": "l", "superoptimal_LA": "al", "superoptimal_LAZ": "alz"}.get(
                    spec["kind"]
                )
                for entry in spec["entries"]:
                    context = tuple(entry["context"])
                    if form == "l":
                        key = context
                    elif form == "al":
                        key = (entry["intent"], context)
                    else:
                        key = (entry["intent"], context, entry["z"])
                    table[key] = int(entry["action"])
                regimes[label] = Regime(kind=spec["kind"], table=table)
            instruction_map = {
                tuple(item["context"]): Instruction(item["gamma"])
                for item in doc["instruction_map"]
            }
            value_estimates = doc["value_estimates"]
            for label, row in value_estimates.items():
                if not row["ci_lo"] <= row["point"] <= row["ci_hi"]:
                    raise ValidationError(
                        f"value row {label!r} violates ci_lo <= point <= ci_hi"
                    )
            delta = {tuple(item["context"]): float(item["value"]) for item in doc["delta"]}
            fits = tuple(
                NuisanceFit(
                    model_id=f["model_id"],
                    coefficients=tuple(f["coefficients"]),
                    converged=f["converged"],
                    deviance=f["deviance"],
                    family=f["family"],
                    n_iterations=f["n_iterations"],
                    separation=f["separation"],
                    notes=tuple(f.get("notes", ())),
                )
                for f in doc["nuisance_fits"]
            )
            return cls(
                covariates=tuple(doc["covariates"]),
                levels={name: tuple(v) for name, v in doc["levels"].items()},
                has_instrument=bool(doc["has_instrument"]),
                n_rows=int(doc["n_rows"]),
                n_train=int(doc["n_train"]),
                n_eval=int(doc["n_eval"]),
                fingerprint=doc["dataset_fingerprint"],
                config=config,
                regimes=regimes,
                instruction_map=instruction_map,
                value_estimates=value_estimates,
                delta=delta,
                flags=tuple(doc["flags"]),
                fits=fits,
                bootstrap_info=doc["bootstrap"],
                schema_version=int(doc["schema_version"]),
            )
        except (KeyError, TypeError) as err:
            raise ValidationError(f"artifact document is malformed: {err!r}") from err


def run_fit(dataset: Dataset, config: EstimationConfig | None = None) -> RegimeArtifact:
    """Full pipeline: split, fit, build regimes, estimate values with CIs."""
    cfg = config or EstimationConfig()
    train, evaluation = split_dataset(dataset, cfg)
    tables = fit_nuisances(train, cfg)
    regimes = {label: estimate_regime(tables, label) for label in REPORT_ROWS}
    instruction_map = estimate_instruction_map(tables)

    value_estimates = {}
    bootstrap_info = {}
    extra_flags: list[str] = []
    for label in REPORT_ROWS:
        point, ci, info = bootstrap_value_ci(evaluation, regimes[label], cfg, stream=_ROW_STREAM[label])
        value_estimates[label] = {"point": point, "ci_lo": ci.lo, "ci_hi": ci.hi}
        bootstrap_info[label] = info
        if info["dropped"]:
            extra_flags.append(f"bootstrap_dropped:{label}={info['dropped']}")

    schema = dataset.schema
    return RegimeArtifact(
        covariates=schema.covariates,
        levels=dict(schema.levels),
        has_instrument=schema.has_instrument,
        n_rows=len(dataset.rows),
        n_train=len(train.rows),
        n_eval=len(evaluation.rows),
        fingerprint=dataset_fingerprint(dataset),
        config=cfg,
        regimes=regimes,
        instruction_map=instruction_map,
        value_estimates=value_estimates,
        delta=tables.delta_table(),
        flags=tuple(sorted(set(tables.flags) | set(extra_flags))),
        fits=tables.fits,
        bootstrap_info=bootstrap_info,
    )
