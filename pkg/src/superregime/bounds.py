"""Partial identification from randomized-encouragement trial counts.

Without any assumption restricting the latent confounder, a binary instrument
only bounds the counterfactual means.  The sharp bounds are linear programs
over the 16 joint response types (treatment at each instrument arm crossed
with outcome under each treatment); their closed forms — finite maxima/minima
of linear expressions in the observable cell probabilities p(y, a | z) — were
derived once by exact rational vertex enumeration of the dual polytope (see
scripts/derive_bound_formulas.py) and are frozen here.  `lp_oracle_bounds`
solves the same programs numerically with scipy and serves as an independent
cross-check route; the two must agree to near machine precision.

Treatment-effect summaries within strata of the treatment actually taken
(`natural_att_bounds`) follow from the marginal bounds by an affine map.  The
natural value of a trial participant is taken to be the treatment they were
recorded as receiving, pooled across instrument arms; under one-sided
compliance the relevant marginal mean is point identified and the interval
collapses.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import linprog

from .core import IntervalBound, NumericalError, ValidationError

logger = logging.getLogger(__name__)

# Joint response types: (a when z=0, a when z=1, y if a=0, y if a=1)
RESPONSE_TYPES = tuple(product((0, 1), repeat=4))

# Observable cells in frozen order (z, y, a)
CELL_ORDER = tuple((z, y, a) for z in (0, 1) for y in (0, 1) for a in (0, 1))


def _cell_of(t: tuple, z: int) -> tuple:
    a = t[z]
    return (z, t[2 + a], a)


# cell-membership matrix: row per observable cell, column per response type
_TYPE_MATRIX = np.array(
    [[1.0 if _cell_of(t, cell[0]) == cell else 0.0 for t in RESPONSE_TYPES] for cell in CELL_ORDER]
)

# ---------------------------------------------------------------------------
# Closed-form bound expressions, generated by scripts/derive_bound_formulas.py
# (exact rational dual-vertex enumeration).  Do not edit by hand.  Each row
# holds coefficients for the eight cell probabilities in CELL_ORDER; a lower
# bound is the max over its rows, an upper bound the min.
# ---------------------------------------------------------------------------

ATE_LOWER_EXPRS = (
    (0, -2, -2, -1, 0, 0, 1, 1),
    (0, -1, -1, -1, 0, 0, 0, 1),
    (0, -1, -1, 0, 0, 0, 0, 0),
    (0, -1, -1, 1, 0, 0, -1, -1),
    (0, 0, -1, -1, 0, -1, -1, 1),
    (0, 0, 0, 0, 0, -1, -1, 0),
    (0, 0, 0, 1, 0, -1, -1, -1),
    (0, 0, 1, 1, 0, -2, -2, -1),
)
ATE_UPPER_EXPRS = (
    (0, -2, -1, 0, 2, 2, 1, 1),
    (0, -1, -2, 0, 1, 1, 2, 2),
    (0, -1, -1, 0, 1, 1, 1, 1),
    (0, -1, 0, 0, 1, 1, 0, 1),
    (0, 0, -1, -1, 2, 0, 1, 2),
    (0, 0, -1, 0, 1, 0, 1, 1),
    (0, 0, 0, 0, 1, 0, 0, 1),
    (0, 0, 1, 1, 1, 0, -1, 1),
)

Y1_LOWER_EXPRS = (
    (0, -1, -1, 0, 0, 0, 1, 1),
    (0, 0, 0, 0, 0, 0, 0, 1),
    (0, 0, 0, 1, 0, 0, 0, 0),
    (0, 0, 1, 1, 0, -1, -1, 0),
)
Y1_UPPER_EXPRS = (
    (0, -1, -1, 0, 1, 1, 2, 2),
    (0, -1, 0, 0, 1, 1, 1, 1),
    (0, 0, 0, 0, 1, 0, 1, 1),
    (0, 0, 1, 1, 1, 0, 0, 1),
)

Y0_LOWER_EXPRS = (
    (0, 0, 0, 0, 0, 0, 1, 0),
    (0, 0, 1, 0, 0, 0, 0, 0),
    (0, 0, 1, 1, -1, 0, 0, -1),
    (0, 1, 1, 0, -1, -1, 0, 0),
)
Y0_UPPER_EXPRS = (
    (0, 0, 0, 0, 0, 1, 1, 1),
    (0, 0, 1, 1, 0, 1, 1, 0),
    (0, 1, 1, 0, 0, 0, 1, 1),
    (0, 1, 1, 1, 0, 0, 0, 0),
)

ESTIMANDS = ("ate", "y1", "y0", "att1", "att0")


@dataclass(frozen=True)
class TrialCounts:
    """Cell counts n[y][a][z] from a randomized-encouragement trial."""

    n: np.ndarray  # shape (2, 2, 2), indexed [y][a][z]

    def __post_init__(self) -> None:
        arr = np.asarray(self.n)
        if arr.shape != (2, 2, 2):
            raise ValidationError(f"counts must have shape (2,2,2) [y][a][z], got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise ValidationError("counts must be integers")
            arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValidationError("counts must be nonnegative")
        object.__setattr__(self, "n", arr.astype(np.int64))
        if self.total == 0:
            raise ValidationError("counts must not all be zero")
        for z in (0, 1):
            if self.arm_total(z) == 0:
                raise ValidationError(f"instrument arm z={z} has no observations")

    # --- totals -----------------------------------------------------------

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def arm_total(self, z: int) -> int:
        return int(self.n[:, :, z].sum())

    # --- observable probabilities ----------------------------------------

    def cell_probs(self) -> np.ndarray:
        """Vector of p(y, a | z) in CELL_ORDER."""
        return np.array([self.n[y, a, z] / self.arm_total(z) for (z, y, a) in CELL_ORDER])

    def p_treated(self) -> float:
        """P(A=1), pooled over instrument arms."""
        return float(self.n[:, 1, :].sum() / self.total)

    def mean_y_indicator(self, a: int) -> float:
        """E(Y * I[A=a]), pooled over instrument arms."""
        return float(self.n[1, a, :].sum() / self.total)

    def mean_y_given_a(self, a: int) -> float:
        stratum = self.n[:, a, :].sum()
        if stratum == 0:
            raise NumericalError(f"no observations with A={a}")
        return float(self.n[1, a, :].sum() / stratum)

    # --- CSV --------------------------------------------------------------

    @classmethod
    def from_csv(cls, text: str) -> "TrialCounts":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or set(reader.fieldnames) != {"y", "a", "z", "count"}:
            raise ValidationError("counts CSV must have exactly the columns y,a,z,count")
        arr = np.zeros((2, 2, 2), dtype=np.int64)
        seen = set()
        for i, row in enumerate(reader):
            try:
                y, a, z = int(row["y"]), int(row["a"]), int(row["z"])
                count = int(row["count"])
            except ValueError:
                raise ValidationError(f"row {i}: counts CSV cells must be integers") from None
            if not all(v in (0, 1) for v in (y, a, z)):
                raise ValidationError(f"row {i}: y, a, z must each be 0 or 1")
            if (y, a, z) in seen:
                raise ValidationError(f"row {i}: duplicate cell (y={y}, a={a}, z={z})")
            seen.add((y, a, z))
            if count < 0:
                raise ValidationError(f"row {i}: negative count")
            arr[y, a, z] = count
        return cls(n=arr)

    @classmethod
    def load(cls, path: str) -> "TrialCounts":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return cls.from_csv(fh.read())


#======================================================================
# Feasibility
#======================================================================

def feasibility_slack(counts: TrialCounts) -> float:
    """Worst violation of the instrumental inequalities
    sum_y max_z p(y,a|z) <= 1; nonpositive means the observed table is
    consistent with *some* response-type distribution.

    For binary y, a, z these inequalities characterize feasibility exactly
    (verified against LP feasibility on thousands of random tables).
    """
    p = counts.cell_probs()
    probs = {cell: p[i] for i, cell in enumerate(CELL_ORDER)}
    worst = -np.inf
    for a in (0, 1):
        s = sum(max(probs[(z, y, a)] for z in (0, 1)) for y in (0, 1))
        worst = max(worst, s - 1.0)
    return float(worst)


def _require_feasible(counts: TrialCounts, tol: float = 1e-9) -> None:
    slack = feasibility_slack(counts)
    if slack > tol:
        raise NumericalError(
            f"observed distribution is infeasible for the instrument model "
            f"(instrumental inequality violated by {slack:.3e})"
        )


#======================================================================
# Closed-form route
#======================================================================

def _eval_lower(p: np.ndarray, exprs) -> float:
    return float(max(np.dot(e, p) for e in exprs))


def _eval_upper(p: np.ndarray, exprs) -> float:
    return float(min(np.dot(e, p) for e in exprs))


def balke_pearl_ate_bounds(counts: TrialCounts) -> IntervalBound:
    """Sharp bounds on E(Y^1) - E(Y^0) from the closed-form expressions."""
    _require_feasible(counts)
    p = counts.cell_probs()
    return IntervalBound(_eval_lower(p, ATE_LOWER_EXPRS), _eval_upper(p, ATE_UPPER_EXPRS))


def marginal_mean_bounds(counts: TrialCounts, a: int) -> IntervalBound:
    """Sharp bounds on the marginal counterfactual mean E(Y^a)."""
    if a not in (0, 1):
        raise ValidationError(f"a must be 0 or 1, got {a!r}")
    _require_feasible(counts)
    p = counts.cell_probs()
    lo_exprs, hi_exprs = (Y1_LOWER_EXPRS, Y1_UPPER_EXPRS) if a == 1 else (Y0_LOWER_EXPRS, Y0_UPPER_EXPRS)
    return IntervalBound(_eval_lower(p, lo_exprs), _eval_upper(p, hi_exprs))


def _att_from_marginal(counts: TrialCounts, natural_a: int, cross: IntervalBound) -> IntervalBound:
    """Map bounds on E(Y^{1-a'}) to bounds on E(Y^1 - Y^0 | A = a')."""
    p_stratum = counts.p_treated() if natural_a == 1 else 1.0 - counts.p_treated()
    if p_stratum <= 0.0:
        raise NumericalError(f"stratum A={natural_a} is empty")
    factual = counts.mean_y_given_a(natural_a)
    cross_a = 1 - natural_a
    # E(Y^{cross_a} | A=a') = (E(Y^{cross_a}) - E(Y I[A=cross_a])) / P(A=a')
    shift = counts.mean_y_indicator(cross_a)
    cross_lo = (cross.lo - shift) / p_stratum
    cross_hi = (cross.hi - shift) / p_stratum
    if natural_a == 1:
        # effect = factual E(Y^1|A=1) minus the bounded E(Y^0|A=1)
        return IntervalBound(factual - cross_hi, factual - cross_lo)
    return IntervalBound(cross_lo - factual, cross_hi - factual)


def natural_att_bounds(counts: TrialCounts, natural_a: int) -> IntervalBound:
    """Bounds on the treatment effect within the stratum that would take
    A=natural_a on its own: E(Y^1 - Y^0 | A = natural_a).

    The natural value here is the recorded treatment, pooled across instrument
    arms.  Under one-sided compliance the required marginal mean is point
    identified and the interval collapses to a point.
    """
    if natural_a not in (0, 1):
        raise ValidationError(f"natural_a must be 0 or 1, got {natural_a!r}")
    cross = marginal_mean_bounds(counts, 1 - natural_a)
    return _att_from_marginal(counts, natural_a, cross)


#======================================================================
# Independent LP route
#======================================================================

def _lp_marginal(counts: TrialCounts, objective: np.ndarray) -> IntervalBound:
    b = counts.cell_probs()
    lo = linprog(objective, A_eq=_TYPE_MATRIX, b_eq=b, bounds=(0, None), method="highs")
    hi = linprog(-objective, A_eq=_TYPE_MATRIX, b_eq=b, bounds=(0, None), method="highs")
    if lo.status == 2 or hi.status == 2:
        raise NumericalError("infeasible observed distribution: no response-type law reproduces it")
    if lo.status != 0 or hi.status != 0:
        raise NumericalError(f"LP solver failed with status {lo.status}/{hi.status}")
    return IntervalBound(float(lo.fun), float(-hi.fun))


def lp_oracle_bounds(counts: TrialCounts, estimand: str) -> IntervalBound:
    """The same bounds computed by explicitly solving the LPs with scipy."""
    if estimand not in ESTIMANDS:
        raise ValidationError(f"estimand must be one of {ESTIMANDS}, got {estimand!r}")
    y1 = np.array([float(t[3]) for t in RESPONSE_TYPES])
    y0 = np.array([float(t[2]) for t in RESPONSE_TYPES])
    if estimand == "ate":
        return _lp_marginal(counts, y1 - y0)
    if estimand == "y1":
        return _lp_marginal(counts, y1)
    if estimand == "y0":
        return _lp_marginal(counts, y0)
    natural_a = 1 if estimand == "att1" else 0
    cross = _lp_marginal(counts, y0 if natural_a == 1 else y1)
    return _att_from_marginal(counts, natural_a, cross)


#======================================================================
# Random feasible tables (for property tests)
#======================================================================

def random_feasible_counts(rng: np.random.Generator, scale: int = 2000) -> TrialCounts:
    """Integer counts exactly consistent with a response-type law: both arms
    observe the same `scale` units' worth of type mass, so the empirical cell
    frequencies are exactly those induced by a type distribution."""
    masses = rng.multinomial(scale, rng.dirichlet(np.ones(16)))
    arr = np.zeros((2, 2, 2), dtype=np.int64)
    for t, m in zip(RESPONSE_TYPES, masses):
        if m == 0:
            continue
        for z in (0, 1):
            _, y, a = _cell_of(t, z)
            arr[y, a, z] += m
    return TrialCounts(n=arr)
