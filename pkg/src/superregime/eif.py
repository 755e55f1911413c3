"""Influence functions for the identified functionals, in closed cell form.

For discrete covariates every influence function here is affine in the
outcome within each (context, z, a) cell:

    phi(L, Z, A, Y) = alpha[L, Z, A] + beta[L, Z, A] * Y.

`InfluenceTable` stores the (alpha, beta) tables, evaluates phi on data, and
computes E[phi] under an :class:`~.identify.ObservedLaw` exactly — which is
how the zero-mean property is checked without sampling error.  Composite
functionals (the cross-world mean, the regime value) are assembled from the
primitive tables by linearity and the quotient rule rather than by expanding
the algebra by hand.

One-step estimators add the empirical mean of the influence table (fitted on
the same data) to the plug-in; under saturated empirical fits the correction
vanishes identically, which doubles as a cross-check of both layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, NumericalError, Regime, ValidationError
from .identify import (
    ObservedLaw,
    counterfactual_mean,
    counterfactual_mean_given_natural,
)


def _cell_list(olaw: ObservedLaw) -> tuple:
    if not olaw.has_instrument:
        raise ValidationError("influence tables need an instrumented law")
    return tuple((l, z, a) for l in olaw.contexts for z in (0, 1) for a in (0, 1))


@dataclass(frozen=True)
class InfluenceTable:
    """phi(row) = alpha[cell] + beta[cell] * y over cells (context, z, a)."""

    cells: tuple
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        if len(self.cells) != self.alpha.shape[0] or len(self.cells) != self.beta.shape[0]:
            raise ValidationError("alpha/beta length does not match the cell list")

    def _index(self) -> dict:
        return {cell: i for i, cell in enumerate(self.cells)}

    def at(self, l: tuple, z: int, a: int, y: float) -> float:
        i = self._index()[(l, z, a)]
        return float(self.alpha[i] + self.beta[i] * y)

    def evaluate(self, dataset: Dataset) -> np.ndarray:
        """phi at every dataset row."""
        if dataset.schema.row_kind != "observation" or not dataset.schema.has_instrument:
            raise ValidationError("influence tables evaluate on instrumented observational rows")
        index = self._index()
        out = np.empty(len(dataset.rows))
        for i, row in enumerate(dataset.rows):
            j = index[(row.l, row.z, row.a)]
            out[i] = self.alpha[j] + self.beta[j] * row.y
        return out

    def expectation(self, olaw: ObservedLaw) -> float:
        """E[phi] under `olaw`, computed exactly cell by cell."""
        total = 0.0
        for i, (l, z, a) in enumerate(self.cells):
            w = olaw.p_l[l] * olaw.p_z(z, l) * olaw.p_a_given_zl_value(a, z, l)
            if w == 0.0:
                continue
            total += w * (self.alpha[i] + self.beta[i] * olaw.mean_y_given_azl_value(a, z, l))
        return total

    def __add__(self, other: "InfluenceTable") -> "InfluenceTable":
        if self.cells != other.cells:
            raise ValidationError("influence tables are over different cell lists")
        return InfluenceTable(self.cells, self.alpha + other.alpha, self.beta + other.beta)

    def __sub__(self, other: "InfluenceTable") -> "InfluenceTable":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "InfluenceTable":
        return InfluenceTable(self.cells, self.alpha * scalar, self.beta * scalar)

    __rmul__ = __mul__


def _zeros(olaw: ObservedLaw) -> tuple[tuple, np.ndarray, np.ndarray]:
    cells = _cell_list(olaw)
    return cells, np.zeros(len(cells)), np.zeros(len(cells))


def influence_shifted_mean(olaw: ObservedLaw, a: int, l: tuple) -> InfluenceTable:
    """Influence table of the instrument-shifted counterfactual mean at (a, l)."""
    cells, alpha, beta = _zeros(olaw)
    delta = olaw.instrument_strength(l)
    if delta == 0.0:
        raise NumericalError(f"instrument is irrelevant at context {l!r}")
    p_l = olaw.p_l[l]
    if p_l == 0.0:
        raise NumericalError(f"context {l!r} has probability zero")
    psi = counterfactual_mean(olaw, a, l)
    for i, (l_row, z, a_row) in enumerate(cells):
        if l_row != l:
            continue
        f_z = olaw.p_z(z, l)
        if f_z == 0.0:
            continue
        k = (2 * z - 1) / (delta * f_z * p_l)
        m_az = (2 * a - 1) * olaw.mean_y_indicator_given_zl(a, z, l)
        e_z = olaw.p_a_given_zl_value(1, z, l)
        alpha[i] = k * (-m_az - (a_row - e_z) * psi)
        if a_row == a:
            beta[i] = k * (2 * a - 1)
    return InfluenceTable(cells, alpha, beta)


def influence_factual_mean(olaw: ObservedLaw, a: int, l: tuple) -> InfluenceTable:
    """Influence table of E(Y | A=a, L=l)."""
    cells, alpha, beta = _zeros(olaw)
    p = olaw.p_a_given_l(a, l) * olaw.p_l[l]
    if p == 0.0:
        raise NumericalError(f"positivity failure: P(A={a}, L={l!r}) = 0")
    m = olaw.mean_y_given_al(a, l)
    for i, (l_row, _z, a_row) in enumerate(cells):
        if l_row == l and a_row == a:
            beta[i] = 1.0 / p
            alpha[i] = -m / p
    return InfluenceTable(cells, alpha, beta)


def influence_propensity(olaw: ObservedLaw, a: int, l: tuple) -> InfluenceTable:
    """Influence table of P(A=a | L=l)."""
    cells, alpha, beta = _zeros(olaw)
    p_l = olaw.p_l[l]
    if p_l == 0.0:
        raise NumericalError(f"context {l!r} has probability zero")
    p_a = olaw.p_a_given_l(a, l)
    for i, (l_row, _z, a_row) in enumerate(cells):
        if l_row == l:
            alpha[i] = (float(a_row == a) - p_a) / p_l
    return InfluenceTable(cells, alpha, beta)


def influence_context_mean(olaw: ObservedLaw, l: tuple) -> InfluenceTable:
    """Influence table of E(Y | L=l)."""
    cells, alpha, beta = _zeros(olaw)
    p_l = olaw.p_l[l]
    if p_l == 0.0:
        raise NumericalError(f"context {l!r} has probability zero")
    m = olaw.mean_y_given_l(l)
    for i, (l_row, _z, _a) in enumerate(cells):
        if l_row == l:
            beta[i] = 1.0 / p_l
            alpha[i] = -m / p_l
    return InfluenceTable(cells, alpha, beta)


def influence_cross_world(olaw: ObservedLaw, a: int, natural_a: int, l: tuple) -> InfluenceTable:
    """Influence table of E(Y^a | A=natural_a, L=l).

    When the two actions differ the functional is the ratio
    (shifted mean − factual mean × propensity) / opposite propensity, and its
    influence table follows by the product and quotient rules applied to the
    primitive tables.
    """
    if a == natural_a:
        return influence_factual_mean(olaw, a, l)
    psi2 = olaw.mean_y_given_al(a, l)
    psi3_a = olaw.p_a_given_l(a, l)
    psi3_n = olaw.p_a_given_l(natural_a, l)
    if psi3_n == 0.0:
        raise NumericalError(f"positivity failure: P(A={natural_a} | L={l!r}) = 0")
    target = counterfactual_mean_given_natural(olaw, a, natural_a, l)
    phi_n = (
        influence_shifted_mean(olaw, a, l)
        - psi3_a * influence_factual_mean(olaw, a, l)
        - psi2 * influence_propensity(olaw, a, l)
    )
    phi_d = influence_propensity(olaw, natural_a, l)
    return (1.0 / psi3_n) * (phi_n - target * phi_d)


def influence_contrast(olaw: ObservedLaw, a: int, l: tuple) -> InfluenceTable:
    """Influence table of E(Y | L=l) − shifted mean at (a, l)."""
    return influence_context_mean(olaw, l) - influence_shifted_mean(olaw, a, l)


def influence_value(olaw: ObservedLaw, regime: Regime) -> InfluenceTable:
    """Influence table of the value of a fixed regime.

    Supported regimes read the covariate context and optionally the intended
    treatment; instrument-conditional tables are outside this closed form.
    For the observed regime the table collapses to Y − E(Y).
    """
    if regime.kind != "observed" and regime.context_form == "alz":
        raise ValidationError(
            "value influence table is not available for instrument-conditional regimes"
        )
    cells, alpha, beta = _zeros(olaw)
    total = InfluenceTable(cells, alpha, beta)
    for l in olaw.contexts:
        for intent in (0, 1):
            p = olaw.p_a_given_l(intent, l) * olaw.p_l[l]
            if p == 0.0:
                continue
            if regime.kind == "observed":
                g = intent
            elif regime.context_form == "l":
                g = regime.decide(l=l)
            else:
                g = regime.decide(intent, l)
            cells_mask = np.array(
                [l_row == l and a_row == intent for (l_row, _z, a_row) in total.cells]
            )
            if g == intent:
                # I[A=a', L=l] * Y  −  E(Y|a',l) * P(a',l)
                m = olaw.mean_y_given_al(intent, l)
                beta_part = np.where(cells_mask, 1.0, 0.0)
                alpha_part = np.full(len(total.cells), -m * p)
                total = total + InfluenceTable(total.cells, alpha_part, beta_part)
            else:
                target = counterfactual_mean_given_natural(olaw, g, intent, l)
                total = total + p * influence_cross_world(olaw, g, intent, l)
                alpha_part = np.where(cells_mask, target, 0.0) - target * p
                total = total + InfluenceTable(total.cells, alpha_part, np.zeros(len(total.cells)))
    return total


# ---------------------------------------------------------------------------
# One-step estimators
# ---------------------------------------------------------------------------


def _fitted_law(dataset: Dataset, olaw: ObservedLaw | None) -> ObservedLaw:
    return olaw if olaw is not None else ObservedLaw.from_dataset(dataset)


def one_step_shifted_mean(
    dataset: Dataset, a: int, l: tuple, olaw: ObservedLaw | None = None
) -> float:
    """Plug-in shifted mean plus the empirical influence-table correction."""
    fitted = _fitted_law(dataset, olaw)
    plug = counterfactual_mean(fitted, a, l)
    return plug + float(influence_shifted_mean(fitted, a, l).evaluate(dataset).mean())


def one_step_cross_world(
    dataset: Dataset, a: int, natural_a: int, l: tuple, olaw: ObservedLaw | None = None
) -> float:
    fitted = _fitted_law(dataset, olaw)
    plug = counterfactual_mean_given_natural(fitted, a, natural_a, l)
    return plug + float(influence_cross_world(fitted, a, natural_a, l).evaluate(dataset).mean())


def one_step_contrast(dataset: Dataset, a: int, l: tuple, olaw: ObservedLaw | None = None) -> float:
    """One-step estimate of E(Y | L=l) − shifted mean at (a, l)."""
    fitted = _fitted_law(dataset, olaw)
    plug = fitted.mean_y_given_l(l) - counterfactual_mean(fitted, a, l)
    return plug + float(influence_contrast(fitted, a, l).evaluate(dataset).mean())


def one_step_value(dataset: Dataset, regime: Regime, olaw: ObservedLaw | None = None) -> float:
    from .identify import value_of_regime

    fitted = _fitted_law(dataset, olaw)
    plug = value_of_regime(fitted, regime)
    return plug + float(influence_value(fitted, regime).evaluate(dataset).mean())
