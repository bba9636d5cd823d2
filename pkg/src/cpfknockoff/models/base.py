"""Common prediction interface consumed by the importance statistics."""

from __future__ import annotations

import numpy as np

from ..errors import ModelDimensionMismatch, OutcomeMismatch


class PredictionModel:
    """Outcome-specific prediction surfaces over rows of a feature matrix.

    Subclasses implement the surfaces that make sense for their outcome;
    the others raise :class:`OutcomeMismatch`.  All methods take a 2-D
    array of rows and are vectorized over them.
    """

    outcome_kind: str = ""
    n_features: int = 0

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise ModelDimensionMismatch(
                f"model expects {self.n_features} columns, got {x.shape[1]}"
            )
        return x

    def predict_scalar(self, x):
        raise OutcomeMismatch(f"{type(self).__name__} has no scalar prediction")

    def predict_probs(self, x):
        raise OutcomeMismatch(f"{type(self).__name__} has no class probabilities")

    def predict_survival(self, x, times):
        raise OutcomeMismatch(f"{type(self).__name__} has no survival curve")

    def predict_cif(self, x, times, cause=1):
        raise OutcomeMismatch(f"{type(self).__name__} has no cumulative incidence")

    def risk_score(self, x):
        """Higher means earlier expected failure; used for concordance."""
        raise OutcomeMismatch(f"{type(self).__name__} has no risk score")
