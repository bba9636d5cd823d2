"""Prediction models and the JSON-configurable registry that builds them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, OutcomeMismatch
from .base import PredictionModel
from .competing import DiscreteTimeCrModel, fit_discrete_cr
from .cox import CoxModel, breslow_baseline, fit_cox, nelson_aalen
from .lasso import LassoModel, fit_lasso
from .metrics import concordance_index, fit_metrics
from .mlp import MlpClassifier, MlpRegressor, fit_mlp
from .network import NetworkConfig, backprop_gradient

MODEL_FORMAT_VERSION = 1

MODEL_KINDS = {
    "mlp": ("continuous", "binary"),
    "cox": ("survival",),
    "discrete_cr": ("competing_risks",),
    "lasso": ("continuous", "binary", "survival"),
}


@dataclass
class ModelSpec:
    """Which model to train and how.

    JSON form::

        {"kind": "mlp", "network": {"hidden": [8], "l1": 0.001, ...}}
        {"kind": "cox", "risk": "network", "network": {...}}
        {"kind": "discrete_cr", "cutpoints": 20, "network": {...}}
        {"kind": "lasso", "cv_folds": 5}
    """

    kind: str = "mlp"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    risk: str = "network"
    cutpoints: int = 20
    cv_folds: int = 5
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {sorted(MODEL_KINDS)}")
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        if self.risk not in ("linear", "network"):
            raise ConfigError("risk must be 'linear' or 'network'")

    @property
    def outcomes(self):
        return MODEL_KINDS[self.kind]

    def check_outcome(self, outcome_kind):
        if outcome_kind not in self.outcomes:
            raise OutcomeMismatch(
                f"model kind {self.kind!r} cannot be trained on a {outcome_kind} outcome "
                f"(supports: {', '.join(self.outcomes)})"
            )

    def to_dict(self):
        return {"kind": self.kind, "network": self.network.to_dict(), "risk": self.risk,
                "cutpoints": self.cutpoints, "cv_folds": self.cv_folds, "l2": self.l2}

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "network", "risk", "cutpoints", "cv_folds", "l2"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"model config not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def fit_model(spec: ModelSpec, d, seed: int = 0) -> PredictionModel:
    spec.check_outcome(d.outcome.kind)
    if spec.kind == "mlp":
        return fit_mlp(d, spec.network, seed=seed)
    if spec.kind == "cox":
        return fit_cox(d, risk=spec.risk, config=spec.network, seed=seed, l2=spec.l2)
    if spec.kind == "discrete_cr":
        return fit_discrete_cr(d, K=spec.cutpoints, config=spec.network, seed=seed)
    return fit_lasso(d, cv_folds=spec.cv_folds, seed=seed)


_LOADERS = {
    "mlp_regressor": MlpRegressor,
    "mlp_classifier": MlpClassifier,
    "cox": CoxModel,
    "discrete_cr": DiscreteTimeCrModel,
    "lasso": LassoModel,
}


def save_model(model, path):
    payload = {"format_version": MODEL_FORMAT_VERSION, "model": model.to_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {payload.get('format_version')!r}")
    d = payload["model"]
    return _LOADERS[d["type"]].from_dict(d)


__all__ = [
    "PredictionModel", "ModelSpec", "fit_model", "save_model", "load_model",
    "LassoModel", "fit_lasso", "MlpRegressor", "MlpClassifier", "fit_mlp",
    "CoxModel", "fit_cox", "breslow_baseline", "nelson_aalen",
    "DiscreteTimeCrModel", "fit_discrete_cr", "fit_metrics", "concordance_index",
    "NetworkConfig", "backprop_gradient",
]
