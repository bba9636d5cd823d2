"""Feature importances over [X, X_tilde] and antisymmetric knockoff statistics.

The conditional prediction function (CPF) importance of a column perturbs it
around each of J percentiles while holding every other column at the
values of a sampled row, and accumulates squared prediction differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import BINARY, FeatureMatrix, percentile_grid
from .errors import (
    DimensionMismatch,
    MissingTimeGrid,
    ModelDimensionMismatch,
    NonFinitePrediction,
    OddLength,
    OutcomeMismatch,
    PathMissing,
    ValidationError,
)

STATISTIC_KINDS = ("cpf", "lcd", "lsm")


@dataclass(frozen=True)
class CpfConfig:
    J: int = 5
    n_sub: int = 100
    delta: float = 0.1
    time_grid: tuple | None = None
    cause: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.J < 1 or self.n_sub < 1:
            raise ValidationError("J and n_sub must be at least 1")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError("delta must be positive")
        if self.time_grid is not None:
            grid = tuple(float(t) for t in self.time_grid)
            if not grid or np.any(np.diff(grid) <= 0):
                raise ValidationError("time_grid must be nonempty and strictly increasing")
            object.__setattr__(self, "time_grid", grid)

    def with_time_grid(self, grid):
        return CpfConfig(self.J, self.n_sub, self.delta, tuple(grid), self.cause, self.seed)

    def to_dict(self):
        return {"J": self.J, "n_sub": self.n_sub, "delta": self.delta,
                "time_grid": list(self.time_grid) if self.time_grid is not None else None,
                "cause": self.cause, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_time_grid(times):
    """Interior quintiles (20/40/60/80%) of the observed times."""
    grid = np.unique(np.quantile(np.asarray(times, dtype=float), [0.2, 0.4, 0.6, 0.8]))
    return tuple(float(t) for t in grid)


@dataclass(frozen=True)
class ImportanceVector:
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 1 or not np.all(np.isfinite(u)) or np.any(u < 0):
            raise ValidationError("importances must be a finite nonnegative vector")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def __len__(self):
        return len(self.u)


@dataclass(frozen=True)
class KnockoffStats:
    w: np.ndarray
    statistic_kind: str
    z: np.ndarray | None = field(default=None, repr=False)        # original-side importances
    z_tilde: np.ndarray | None = field(default=None, repr=False)  # knockoff-side importances

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if self.statistic_kind not in STATISTIC_KINDS:
            raise ValidationError(f"unknown statistic kind {self.statistic_kind!r}")

    @property
    def p(self):
        return len(self.w)


# -- CPF ---------------------------------------------------------------------


def _matrix_and_kinds(x_star):
    if isinstance(x_star, FeatureMatrix):
        values, kinds = x_star.values, list(x_star.column_kinds)
    else:
        values = np.asarray(x_star, dtype=float)
        kinds = ["continuous"] * values.shape[1]
    # knockoff columns follow their original's branch (Gaussian knockoffs of
    # binary features are real-valued but are probed at 0 and 1)
    d = len(kinds)
    if d % 2 == 0:
        half = d // 2
        for i in range(half):
            if kinds[i] == BINARY:
                kinds[half + i] = BINARY
    return values, kinds


def _check_model(model, d):
    n_feat = getattr(model, "n_features", None)
    if n_feat is not None and n_feat != d:
        raise ModelDimensionMismatch(f"model was trained on {n_feat} columns, x_star has {d}")


def _subsample_rows(n, n_sub, seed, i):
    rng = np.random.default_rng([seed, i])
    if n_sub <= n:
        return rng.choice(n, size=n_sub, replace=False)
    return rng.choice(n, size=n_sub, replace=True)


def _accumulate(surface, values, kinds, cfg: CpfConfig):
    n, d = values.shape
    grid = percentile_grid(values, cfg.J, kinds)
    half = cfg.delta / 2.0
    u = np.zeros(d)
    for i in range(d):
        rows = values[_subsample_rows(n, cfg.n_sub, cfg.seed, i)]
        if kinds[i] == BINARY:
            hi = rows.copy()
            lo = rows.copy()
            hi[:, i] = 1.0
            lo[:, i] = 0.0
            divisor = 1.0
        else:
            pts = grid[i]
            # (J, n_sub, d) blocks, one per percentile
            hi = np.repeat(rows[None, :, :], len(pts), axis=0)
            lo = hi.copy()
            hi[:, :, i] = (pts + half)[:, None]
            lo[:, :, i] = (pts - half)[:, None]
            hi = hi.reshape(-1, d)
            lo = lo.reshape(-1, d)
            divisor = cfg.delta ** 2 * cfg.J
        m = len(hi)
        pred = np.asarray(surface(np.vstack([hi, lo])), dtype=float).reshape(2 * m, -1)
        if not np.all(np.isfinite(pred)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(pred), axis=1))[0])
            raise NonFinitePrediction(i, bad % m)
        diff = pred[:m] - pred[m:]
        u[i] = float(np.sum(diff * diff)) / divisor
    return ImportanceVector(u)


def _scalar_surface(model):
    kind = getattr(model, "outcome_kind", "continuous")
    if kind == "binary":
        return model.predict_probs
    if kind in ("survival", "competing_risks"):
        raise OutcomeMismatch(f"{kind} models need cpf_importance_survival")
    return lambda x: np.asarray(model.predict_scalar(x), dtype=float).reshape(-1, 1)


def cpf_importance(model, x_star, cfg: CpfConfig = CpfConfig()) -> ImportanceVector:
    """CPF importance for continuous (scalar) or categorical (probability
    vector) predictions.

    Continuous columns add ||M(v + delta/2) - M(v - delta/2)||^2 / (delta^2 J)
    for every subsample row and percentile v; binary columns add
    ||M(1) - M(0)||^2 for every subsample row.
    """
    values, kinds = _matrix_and_kinds(x_star)
    _check_model(model, values.shape[1])
    return _accumulate(_scalar_surface(model), values, kinds, cfg)


def cpf_importance_survival(model, x_star, cfg: CpfConfig) -> ImportanceVector:
    """CPF importance over a time grid: survival curves for survival models,
    the cumulative incidence of ``cfg.cause`` for competing-risks models."""
    if not cfg.time_grid:
        raise MissingTimeGrid("survival CPF needs a time grid")
    values, kinds = _matrix_and_kinds(x_star)
    _check_model(model, values.shape[1])
    grid = np.asarray(cfg.time_grid)
    kind = getattr(model, "outcome_kind", "survival")
    if kind == "competing_risks":
        def surface(x):
            return model.predict_cif(x, grid, cfg.cause)
    elif kind == "survival":
        def surface(x):
            return model.predict_survival(x, grid)
    else:
        raise OutcomeMismatch(f"{kind} models have no survival or incidence curve")
    return _accumulate(surface, values, kinds, cfg)


def importance(model, x_star, cfg: CpfConfig = CpfConfig()) -> ImportanceVector:
    if getattr(model, "outcome_kind", None) in ("survival", "competing_risks"):
        return cpf_importance_survival(model, x_star, cfg)
    return cpf_importance(model, x_star, cfg)


def cpf_statistics(u) -> KnockoffStats:
    """W_m = U_m - U_{m+p}."""
    u = np.asarray(getattr(u, "u", u), dtype=float)
    if len(u) % 2:
        raise OddLength(f"importance vector has odd length {len(u)}")
    p = len(u) // 2
    return KnockoffStats(u[:p] - u[p:], "cpf", u[:p].copy(), u[p:].copy())


# -- lasso-based -------------------------------------------------------------


def lcd_statistics(model, p: int) -> KnockoffStats:
    """W_j = |beta_j| - |beta_tilde_j|."""
    coef = np.asarray(getattr(model, "coef", model), dtype=float)
    if len(coef) != 2 * p:
        raise DimensionMismatch(f"expected {2 * p} coefficients, got {len(coef)}")
    z, zt = np.abs(coef[:p]), np.abs(coef[p:])
    return KnockoffStats(z - zt, "lcd", z, zt)


def lsm_statistics(model, p: int) -> KnockoffStats:
    """W_j = max(Z_j, Z_tilde_j) * sign(Z_j - Z_tilde_j), Z = entry lambda."""
    entry = getattr(model, "entry_lambdas", model)
    if entry is None:
        raise PathMissing("lasso model carries no lambda path")
    entry = np.asarray(entry, dtype=float)
    if len(entry) != 2 * p:
        raise DimensionMismatch(f"expected {2 * p} entry penalties, got {len(entry)}")
    z, zt = entry[:p], entry[p:]
    return KnockoffStats(np.maximum(z, zt) * np.sign(z - zt), "lsm", z, zt)


def write_stats_csv(path, stats: KnockoffStats, names):
    """One row per original feature: name, U_original, U_knockoff, W, kind."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "U_original", "U_knockoff", "W", "statistic_kind"])
        for j, name in enumerate(names):
            zo = "" if stats.z is None else repr(float(stats.z[j]))
            zk = "" if stats.z_tilde is None else repr(float(stats.z_tilde[j]))
            w.writerow([name, zo, zk, repr(float(stats.w[j])), stats.statistic_kind])


def read_stats_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["feature"] for r in rows]
    kind = rows[0]["statistic_kind"] if rows else "cpf"
    w = np.array([float(r["W"]) for r in rows])
    return names, KnockoffStats(w, kind)
