"""Feed-forward regressors and binary classifiers."""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..errors import OutcomeMismatch
from .base import PredictionModel
from .network import (
    Network,
    NetworkConfig,
    TrainingHistory,
    _sigmoid,
    build_network,
    train_network,
)


class MlpRegressor(PredictionModel):
    """Predicts a continuous outcome.  The target is standardized for
    training and mapped back at prediction time."""

    outcome_kind = "continuous"

    def __init__(self, net: Network, config: NetworkConfig, y_mean=0.0, y_scale=1.0, history=None):
        self.net = net
        self.config = config
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self.history = history or TrainingHistory()
        self.n_features = net.widths[0]

    @property
    def validation_loss(self):
        return self.history.best_val_loss

    def predict_scalar(self, x):
        x = self._check(x)
        return self.net.predict(x)[:, 0] * self.y_scale + self.y_mean

    def to_dict(self):
        return {"type": "mlp_regressor", "config": self.config.to_dict(), "network": self.net.to_dict(),
                "y_mean": self.y_mean, "y_scale": self.y_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["network"]), NetworkConfig.from_dict(d["config"]),
                   d["y_mean"], d["y_scale"])


class MlpClassifier(PredictionModel):
    """Binary classifier; the last layer emits a logit passed through a sigmoid."""

    outcome_kind = "binary"

    def __init__(self, net: Network, config: NetworkConfig, history=None):
        self.net = net
        self.config = config
        self.history = history or TrainingHistory()
        self.n_features = net.widths[0]

    @property
    def validation_loss(self):
        return self.history.best_val_loss

    def predict_probs(self, x):
        x = self._check(x)
        p1 = _sigmoid(self.net.predict(x)[:, 0])
        return np.column_stack([1.0 - p1, p1])

    def to_dict(self):
        return {"type": "mlp_classifier", "config": self.config.to_dict(), "network": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["network"]), NetworkConfig.from_dict(d["config"]))


def fit_mlp(d: Dataset, config: NetworkConfig | None = None, seed: int | None = None):
    """Train a regressor (MSE) or classifier (cross-entropy) by mini-batch
    Adam with early stopping, depending on the outcome type."""
    config = config or NetworkConfig()
    if seed is not None:
        config = config.replace(seed=seed)
    x = np.asarray(d.features.values, dtype=float)
    kind = d.outcome.kind
    if kind == "continuous":
        y = np.asarray(d.outcome.y, dtype=float)
        mean = y.mean()
        scale = y.std()
        if not scale > 0:
            scale = 1.0
        net = build_network(x.shape[1], 1, config)
        hist = train_network(net, x, ((y - mean) / scale,), "mse", config)
        return MlpRegressor(net, config, mean, scale, hist)
    if kind == "binary":
        net = build_network(x.shape[1], 1, config, output_activation="linear")
        hist = train_network(net, x, (np.asarray(d.outcome.y, dtype=float),), "bce", config)
        return MlpClassifier(net, config, hist)
    raise OutcomeMismatch(f"fit_mlp handles continuous or binary outcomes, not {kind}")
