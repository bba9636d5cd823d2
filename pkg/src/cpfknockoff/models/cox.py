"""Cox proportional hazards with linear or network risk scores and a Breslow
baseline cumulative hazard."""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..errors import NoEvents, NonConvergence, OutcomeMismatch
from .base import PredictionModel
from .lasso import _CoxData
from .network import Network, NetworkConfig, TrainingHistory, build_network, train_network


def _risk_set_sums(time, weight):
    """For each row, sum of ``weight`` over rows with time >= its time."""
    order = np.argsort(time, kind="stable")
    t = time[order]
    rev = np.cumsum(weight[order][::-1])[::-1]
    first = np.searchsorted(t, t, side="left")
    out = np.empty_like(rev)
    out[order] = rev[first]
    return out


def breslow_baseline(time, event, eta):
    """Breslow cumulative baseline hazard at the distinct event times.

    Returns ``(event_times, cumulative_hazard)``;
    H0(t) = sum_{event times s <= t} d(s) / sum_{j: t_j >= s} exp(eta_j).
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    eta = np.asarray(eta, dtype=float)
    shift = eta.max() if len(eta) else 0.0
    w = np.exp(eta - shift)
    denom = _risk_set_sums(time, w)
    ev_times = np.unique(time[event > 0])
    idx = np.searchsorted(ev_times, time)
    deaths = np.zeros(len(ev_times))
    denom_at = np.zeros(len(ev_times))
    for k in np.flatnonzero(event > 0):
        deaths[idx[k]] += 1.0
        denom_at[idx[k]] = denom[k]
    increments = deaths / denom_at
    if shift != 0.0:
        increments = increments * np.exp(-shift)
    return ev_times, np.cumsum(increments)


def nelson_aalen(time, event):
    """Nelson-Aalen cumulative hazard at the distinct event times."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    ev_times = np.unique(time[event > 0])
    increments = np.array([
        np.sum((time == s) & (event > 0)) / np.sum(time >= s) for s in ev_times
    ])
    return ev_times, np.cumsum(increments)


def step_lookup(grid, values, t):
    """Right-continuous step function through (grid, values), 0 before grid[0]."""
    idx = np.searchsorted(grid, np.asarray(t, dtype=float), side="right") - 1
    padded = np.concatenate([[0.0], values])
    return padded[idx + 1]


class CoxModel(PredictionModel):
    outcome_kind = "survival"

    def __init__(self, n_features, coef=None, net: Network | None = None, config=None,
                 baseline_times=None, baseline_cumhaz=None, history=None):
        if (coef is None) == (net is None):
            raise ValueError("exactly one of coef or net must be given")
        self.n_features = n_features
        self.coef = None if coef is None else np.asarray(coef, dtype=float)
        self.net = net
        self.config = config
        self.baseline_times = np.asarray(baseline_times, dtype=float)
        self.baseline_cumhaz = np.asarray(baseline_cumhaz, dtype=float)
        self.history = history or TrainingHistory()

    @property
    def risk_kind(self):
        return "linear" if self.coef is not None else "network"

    @property
    def validation_loss(self):
        return self.history.best_val_loss

    def log_risk(self, x):
        x = self._check(x)
        if self.coef is not None:
            return x @ self.coef
        return self.net.predict(x)[:, 0]

    def risk_score(self, x):
        return self.log_risk(x)

    def cumulative_baseline_hazard(self, times):
        return step_lookup(self.baseline_times, self.baseline_cumhaz, times)

    def predict_survival(self, x, times):
        eta = self.log_risk(x)
        h0 = self.cumulative_baseline_hazard(np.atleast_1d(times))
        return np.exp(-np.outer(np.exp(eta), h0))

    def to_dict(self):
        d = {"type": "cox", "n_features": self.n_features,
             "baseline_times": self.baseline_times.tolist(),
             "baseline_cumhaz": self.baseline_cumhaz.tolist()}
        if self.coef is not None:
            d["coef"] = self.coef.tolist()
        else:
            d["network"] = self.net.to_dict()
            d["config"] = self.config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        net = Network.from_dict(d["network"]) if "network" in d else None
        cfg = NetworkConfig.from_dict(d["config"]) if "config" in d else None
        return cls(d["n_features"], d.get("coef"), net, cfg, d["baseline_times"], d["baseline_cumhaz"])


def fit_linear_cox(x, time, event, l2=0.0, tol=1e-9, max_iter=100):
    """Newton-Raphson on the Breslow partial likelihood (optional ridge)."""
    cd = _CoxData(np.asarray(x, dtype=float), np.asarray(time, dtype=float), np.asarray(event, dtype=float))
    p = cd.x.shape[1]
    beta = np.zeros(p)

    def objective(b):
        return cd.loglik(b) - l2 * b @ b

    obj = objective(beta)
    for _ in range(max_iter):
        eta = cd.x @ beta
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1][cd.first]
        s1 = np.cumsum((cd.x * w[:, None])[::-1], axis=0)[::-1][cd.first]
        a = s1 / s0[:, None]
        grad = cd.x.T @ cd.d - a.T @ cd.d - 2 * l2 * beta
        inv = np.where(cd.d > 0, 1.0 / s0, 0.0)
        cum = np.cumsum(inv)[cd.last]
        ev = cd.d > 0
        hess = (cd.x * (w * cum)[:, None]).T @ cd.x - a[ev].T @ a[ev] + 2 * l2 * np.eye(p)
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(hess, grad, rcond=None)[0]
        step = 1.0
        while True:
            cand = beta + step * delta
            new = objective(cand)
            if new >= obj - 1e-12 or step < 1e-8:
                break
            step /= 2
        change = np.max(np.abs(cand - beta), initial=0.0)
        beta, obj = cand, new
        if change < tol:
            return beta
    raise NonConvergence(f"Cox Newton-Raphson did not converge in {max_iter} iterations")


def fit_cox(d: Dataset, risk: str = "linear", config: NetworkConfig | None = None,
            seed: int | None = None, l2: float = 0.0) -> CoxModel:
    """Maximize the Breslow partial likelihood and attach a Breslow baseline.

    ``risk='linear'`` uses Newton-Raphson; ``risk='network'`` trains a
    network risk score by mini-batch Adam on the batch partial likelihood.
    """
    out = d.outcome
    if out.kind != "survival":
        raise OutcomeMismatch(f"fit_cox needs a survival outcome, got {out.kind}")
    time = np.asarray(out.time, dtype=float)
    event = np.asarray(out.event, dtype=float)
    if event.sum() == 0:
        raise NoEvents("all observations are censored")
    x = np.asarray(d.features.values, dtype=float)
    p = x.shape[1]
    if risk == "linear":
        beta = fit_linear_cox(x, time, event, l2=l2)
        bt, bh = breslow_baseline(time, event, x @ beta)
        return CoxModel(p, coef=beta, baseline_times=bt, baseline_cumhaz=bh)
    if risk != "network":
        raise ValueError(f"unknown risk kind {risk!r}")
    config = config or NetworkConfig(hidden=(64, 32, 16, 8), batch_size=50, validation_fraction=0.2)
    if seed is not None:
        config = config.replace(seed=seed)
    net = build_network(p, 1, config, output_activation="linear")
    hist = train_network(net, x, (time, event), "cox", config, min_batch=2)
    eta = net.predict(x)[:, 0]
    bt, bh = breslow_baseline(time, event, eta)
    return CoxModel(p, net=net, config=config, baseline_times=bt, baseline_cumhaz=bh, history=hist)
