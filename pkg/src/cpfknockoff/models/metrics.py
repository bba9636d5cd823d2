"""Goodness-of-fit summaries for trained models on held-out data."""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..errors import OutcomeMismatch


def concordance_index(time, event, risk):
    """Harrell's C: among comparable pairs (the earlier time is an event),
    the fraction where the earlier failure has the higher risk; ties in
    risk count one half."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    risk = np.asarray(risk, dtype=float)
    num = 0.0
    den = 0.0
    chunk = 512
    idx = np.flatnonzero(event > 0)
    for s in range(0, len(idx), chunk):
        i = idx[s:s + chunk]
        later = time[None, :] > time[i][:, None]
        den += later.sum()
        ri = risk[i][:, None]
        num += ((risk[None, :] < ri) & later).sum() + 0.5 * ((risk[None, :] == ri) & later).sum()
    return float(num / den) if den else float("nan")


def fit_metrics(model, test: Dataset) -> dict:
    """MSE for continuous outcomes, accuracy and cross-entropy for binary,
    concordance for survival and competing risks (cause 1 as the event)."""
    x = test.features.values
    out = test.outcome
    if out.kind != model.outcome_kind:
        raise OutcomeMismatch(f"model predicts {model.outcome_kind}, test data is {out.kind}")
    if out.kind == "continuous":
        pred = model.predict_scalar(x)
        return {"n": test.n, "mse": float(np.mean((pred - out.y) ** 2))}
    if out.kind == "binary":
        p1 = np.clip(model.predict_probs(x)[:, 1], 1e-15, 1 - 1e-15)
        y = np.asarray(out.y)
        return {
            "n": test.n,
            "accuracy": float(np.mean((p1 >= 0.5) == (y == 1))),
            "cross_entropy": float(-np.mean(y * np.log(p1) + (1 - y) * np.log(1 - p1))),
        }
    if out.kind == "survival":
        return {"n": test.n, "c_index": concordance_index(out.time, out.event, model.risk_score(x))}
    event = (np.asarray(out.cause) == 1).astype(float)
    return {"n": test.n, "c_index": concordance_index(out.time, event, model.risk_score(x))}
