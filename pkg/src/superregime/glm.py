"""Small GLM layer: IRLS logistic regression and linear least squares.

Only what the estimation pipeline needs — dense designs, deviance-based
convergence, step-halving when an update overshoots, and an explicit
separation flag when coefficients run away (fitted probabilities pinned at
0/1).  Under a saturated design the maximum-likelihood fitted values of both
families are the per-cell averages, which callers exploit for speed; the
routines here are exercised directly and by main-effects designs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import NumericalError, ValidationError

logger = logging.getLogger(__name__)

SEPARATION_THRESHOLD = 30.0
_EPS = 1e-12


@dataclass(frozen=True)
class NuisanceFit:
    """Summary of one fitted nuisance model."""

    model_id: str
    coefficients: tuple[float, ...]
    converged: bool
    deviance: float
    family: str = "binomial"  # "binomial" | "gaussian"
    n_iterations: int = 0
    separation: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "coefficients": list(self.coefficients),
            "converged": self.converged,
            "deviance": self.deviance,
            "family": self.family,
            "n_iterations": self.n_iterations,
            "separation": self.separation,
            "notes": list(self.notes),
        }


def _binomial_deviance(y: np.ndarray, p: np.ndarray, weights: np.ndarray) -> float:
    p = np.clip(p, _EPS, 1.0 - _EPS)
    ll = weights * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(-2.0 * ll.sum())


def fit_logit(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    model_id: str = "logit",
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NuisanceFit:
    """Logistic regression by iteratively reweighted least squares.

    `y` must lie in {0, 1}.  Convergence is declared when the deviance moves
    by less than `tol`; if an IRLS update increases the deviance the step is
    halved (up to 20 times).  Coefficients beyond +/-30 flag separation.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"design {X.shape} incompatible with response {y.shape}")
    if X.shape[0] == 0:
        raise NumericalError(f"model {model_id}: no observations")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError(f"model {model_id}: logistic response must be 0/1")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    deviance = _binomial_deviance(y, p, w)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        irls_w = w * np.clip(p * (1.0 - p), _EPS, None)
        working = eta + (y - p) / np.clip(p * (1.0 - p), _EPS, None)
        sqrt_w = np.sqrt(irls_w)
        new_beta, *_ = np.linalg.lstsq(X * sqrt_w[:, None], working * sqrt_w, rcond=None)
        step = new_beta - beta
        scale = 1.0
        for _ in range(20):
            cand = beta + scale * step
            eta_c = np.clip(X @ cand, -500, 500)
            p_c = 1.0 / (1.0 + np.exp(-eta_c))
            dev_c = _binomial_deviance(y, p_c, w)
            if dev_c <= deviance + 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        eta = np.clip(X @ beta, -500, 500)
        p = 1.0 / (1.0 + np.exp(-eta))
        new_dev = _binomial_deviance(y, p, w)
        if abs(deviance - new_dev) < tol:
            deviance = new_dev
            converged = True
            break
        deviance = new_dev
    separation = bool(np.any(np.abs(beta) > SEPARATION_THRESHOLD))
    notes = ("separation: fitted probabilities pinned at 0 or 1",) if separation else ()
    return NuisanceFit(
        model_id=model_id,
        coefficients=tuple(float(b) for b in beta),
        converged=converged,
        deviance=deviance,
        family="binomial",
        n_iterations=iterations,
        separation=separation,
        notes=notes,
    )


def fit_linear(
    X: np.ndarray,
    y: np.ndarray,
    model_id: str = "linear",
) -> NuisanceFit:
    """Ordinary least squares; \"deviance\" is the residual sum of squares."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"design {X.shape} incompatible with response {y.shape}")
    if X.shape[0] == 0:
        raise NumericalError(f"model {model_id}: no observations")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(np.sum((y - X @ beta) ** 2))
    return NuisanceFit(
        model_id=model_id,
        coefficients=tuple(float(b) for b in beta),
        converged=True,
        deviance=rss,
        family="gaussian",
        n_iterations=1,
    )


def predict_logit(fit: NuisanceFit, X: np.ndarray) -> np.ndarray:
    eta = np.clip(np.asarray(X, dtype=float) @ np.array(fit.coefficients), -500, 500)
    return 1.0 / (1.0 + np.exp(-eta))


def predict_linear(fit: NuisanceFit, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=float) @ np.array(fit.coefficients)
