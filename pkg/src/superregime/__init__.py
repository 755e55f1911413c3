"""Treatment regimes that exploit the treatment a person would choose anyway.

The package covers the full pipeline: structural simulation laws with exact
oracles, identification of counterfactual means conditional on the natural
treatment value via a binary instrument, partial-identification bounds from
randomized-encouragement counts, regression-based estimation with bootstrap
uncertainty, a confounding diagnostic, and a CLI plus a small HTTP service
that serves fitted recommendation tables.
"""

from .core import (
    Dataset,
    IntervalBound,
    Observation,
    PreferenceTrialRecord,
    Regime,
    Schema,
    ValidationError,
    NumericalError,
)

__all__ = [
    "Dataset",
    "IntervalBound",
    "Observation",
    "PreferenceTrialRecord",
    "Regime",
    "Schema",
    "ValidationError",
    "NumericalError",
]

__version__ = "0.1.0"
