"""Discrete-time competing-risks network producing cumulative incidence curves.

The network maps a row to a softmax over 2K + 1 cells: (cause 1, bin k),
(cause 2, bin k) for k = 1..K, and "no event by the last cutpoint".  An
event of cause c in bin k contributes the mass of that cell; a censoring in
bin k contributes the total mass of all cells strictly after bin k.
"""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..errors import OutcomeMismatch, SingleCauseData, ValidationError
from .base import PredictionModel
from .network import (
    Network,
    NetworkConfig,
    TrainingHistory,
    build_network,
    log_softmax,
    train_network,
)


def make_cutpoints(time, K):
    """Cutpoints at equally spaced quantile levels k/K of the observed times."""
    cuts = np.unique(np.quantile(np.asarray(time, dtype=float), np.arange(1, K + 1) / K))
    if len(cuts) < 2:
        raise ValidationError("observed times do not support two distinct cutpoints")
    return cuts


def likelihood_mask(time, cause, cuts):
    """Boolean (n, 2K+1) matrix of the cells consistent with each observation."""
    K = len(cuts)
    time = np.asarray(time, dtype=float)
    cause = np.asarray(cause, dtype=int)
    bins = np.minimum(np.searchsorted(cuts, time, side="left"), K - 1)
    mask = np.zeros((len(time), 2 * K + 1), dtype=bool)
    for i, (b, c) in enumerate(zip(bins, cause)):
        if c == 0:
            mask[i, b + 1:K] = True
            mask[i, K + b + 1:2 * K] = True
            mask[i, 2 * K] = True
        else:
            mask[i, (c - 1) * K + b] = True
    return mask


class DiscreteTimeCrModel(PredictionModel):
    outcome_kind = "competing_risks"

    def __init__(self, net: Network, config: NetworkConfig, cutpoints, history=None):
        self.net = net
        self.config = config
        self.cutpoints = np.asarray(cutpoints, dtype=float)
        self.history = history or TrainingHistory()
        self.n_features = net.widths[0]

    @property
    def K(self):
        return len(self.cutpoints)

    @property
    def validation_loss(self):
        return self.history.best_val_loss

    def predict_mass(self, x):
        x = self._check(x)
        return np.exp(log_softmax(self.net.predict(x)))

    def predict_cif(self, x, times, cause=1):
        if cause not in (1, 2):
            raise ValidationError("cause must be 1 or 2")
        mass = self.predict_mass(x)
        K = self.K
        cum = np.cumsum(mass[:, (cause - 1) * K:cause * K], axis=1)
        cum = np.concatenate([np.zeros((len(cum), 1)), cum], axis=1)
        n_bins = np.searchsorted(self.cutpoints, np.atleast_1d(times), side="right")
        return np.clip(cum[:, n_bins], 0.0, 1.0)

    def predict_survival(self, x, times):
        """Probability of no event of either cause by each time."""
        return 1.0 - self.predict_cif(x, times, 1) - self.predict_cif(x, times, 2)

    def risk_score(self, x):
        return self.predict_cif(x, [self.cutpoints[-1]], 1)[:, 0]

    def to_dict(self):
        return {"type": "discrete_cr", "config": self.config.to_dict(), "network": self.net.to_dict(),
                "cutpoints": self.cutpoints.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["network"]), NetworkConfig.from_dict(d["config"]), d["cutpoints"])


def fit_discrete_cr(d: Dataset, K: int = 20, config: NetworkConfig | None = None,
                    seed: int | None = None) -> DiscreteTimeCrModel:
    out = d.outcome
    if out.kind != "competing_risks":
        raise OutcomeMismatch(f"fit_discrete_cr needs competing-risks data, got {out.kind}")
    if K < 2:
        raise ValidationError("K must be at least 2")
    cause = np.asarray(out.cause)
    if not (np.any(cause == 1) and np.any(cause == 2)):
        raise SingleCauseData("both causes must be observed at least once")
    config = config or NetworkConfig(hidden=(128, 64, 32, 16), batch_size=50, validation_fraction=0.2)
    if seed is not None:
        config = config.replace(seed=seed)
    cuts = make_cutpoints(out.time, K)
    mask = likelihood_mask(out.time, cause, cuts)
    x = np.asarray(d.features.values, dtype=float)
    net = build_network(x.shape[1], 2 * len(cuts) + 1, config, output_activation="linear")
    hist = train_network(net, x, (mask,), "masked_softmax", config)
    return DiscreteTimeCrModel(net, config, cuts, hist)
