"""Knockoff and knockoff+ thresholds and selection scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTruth, InvalidQ, ValidationError


@dataclass(frozen=True)
class SelectionResult:
    threshold: float
    selected: frozenset
    kind: str
    q: float

    def selected_names(self, names):
        return [names[j] for j in sorted(self.selected)]

    def to_dict(self, names=None):
        out = {
            "kind": self.kind,
            "q": self.q,
            "threshold": None if math.isinf(self.threshold) else self.threshold,
            "selected": sorted(int(j) for j in self.selected),
        }
        if names is not None:
            out["selected_names"] = self.selected_names(names)
        return out


def _as_w(w):
    values = getattr(w, "w", w)
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValidationError("W must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise ValidationError("W contains non-finite values")
    return values


def _threshold(w, q, offset, kind):
    if not (isinstance(q, (int, float)) and 0.0 < q < 1.0):
        raise InvalidQ(f"q must lie in (0, 1), got {q!r}")
    w = _as_w(w)
    mags = np.unique(np.abs(w[w != 0]))
    if mags.size:
        neg = np.sort(-w[w < 0])
        pos = np.sort(w[w > 0])
        # counts for each candidate t: #{W <= -t} and #{W >= t}
        n_neg = neg.size - np.searchsorted(neg, mags, side="left")
        n_pos = pos.size - np.searchsorted(pos, mags, side="left")
        num = n_neg + offset
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(n_pos > 0, num / np.maximum(n_pos, 1), np.inf)
        ok = (ratio <= q) & ~((n_pos == 0) & (num == 0))
        hits = np.flatnonzero(ok)
        if hits.size:
            tau = float(mags[hits[0]])
            selected = frozenset(int(j) for j in np.flatnonzero(w >= tau))
            return SelectionResult(tau, selected, kind, float(q))
    return SelectionResult(math.inf, frozenset(), kind, float(q))


def knockoff_threshold(w, q: float) -> SelectionResult:
    """Smallest t > 0 with #{W <= -t} / #{W >= t} <= q."""
    return _threshold(w, q, 0, "knockoff")


def knockoff_plus_threshold(w, q: float) -> SelectionResult:
    """Smallest t > 0 with (1 + #{W <= -t}) / #{W >= t} <= q."""
    return _threshold(w, q, 1, "knockoff_plus")


def select(w, q, kind="knockoff_plus"):
    if kind == "knockoff":
        return knockoff_threshold(w, q)
    if kind == "knockoff_plus":
        return knockoff_plus_threshold(w, q)
    raise ValidationError(f"unknown selection kind {kind!r}")


@dataclass(frozen=True)
class SelectionScore:
    fdp: float
    mfdp: float
    power: float
    n_selected: int
    n_false: int
    n_true: int


def score_selection(selected, truth, q: float, require_truth: bool = True) -> SelectionScore:
    """FDP, modified FDP (denominator |S| + 1/q) and power of a selection."""
    if not 0.0 < q < 1.0:
        raise InvalidQ(f"q must lie in (0, 1), got {q!r}")
    selected = set(getattr(selected, "selected", selected))
    truth = set(truth)
    if not truth and require_truth:
        raise EmptyTruth("power is undefined without any truly prognostic feature")
    n_sel = len(selected)
    n_true = len(selected & truth)
    n_false = n_sel - n_true
    return SelectionScore(
        fdp=n_false / max(n_sel, 1),
        mfdp=n_false / (n_sel + 1.0 / q),
        power=n_true / len(truth) if truth else 0.0,
        n_selected=n_sel,
        n_false=n_false,
        n_true=n_true,
    )
