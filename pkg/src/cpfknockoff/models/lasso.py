"""L1-penalized gaussian, logistic and Cox regression along a lambda path.

Gaussian and binomial fits use cyclic coordinate descent on a (weighted)
Gram matrix, the binomial case inside an IRLS loop.  The Cox fit uses
proximal gradient steps on the Breslow partial likelihood.  Objectives are
scaled per observation:

    gaussian:  1/(2N) ||y - b0 - X b||^2             + lam ||b||_1
    binomial:  -1/N  loglik(b0, b)                    + lam ||b||_1
    cox:       -1/N  log partial likelihood(b)        + lam ||b||_1
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..data import Dataset
from ..errors import FamilyMismatch, NoEvents, NonConvergence, ValidationError
from .base import PredictionModel
from .network import _sigmoid

FAMILIES = ("gaussian", "binomial", "cox")
_OUTCOME_FAMILY = {"continuous": "gaussian", "binary": "binomial", "survival": "cox"}


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


@njit(cache=True)
def _sweep(G, diag, c, gb, lam, beta, idx):
    """One cyclic pass over ``idx``; returns the largest coefficient change."""
    maxd = 0.0
    p = G.shape[0]
    for j in idx:
        gjj = diag[j]
        if gjj <= 0.0:
            continue
        old = beta[j]
        rho = c[j] - gb[j] + gjj * old
        if rho > lam:
            new = (rho - lam) / gjj
        elif rho < -lam:
            new = (rho + lam) / gjj
        else:
            new = 0.0
        if new != old:
            delta = new - old
            for k in range(p):
                gb[k] += G[k, j] * delta
            beta[j] = new
            if abs(delta) > maxd:
                maxd = abs(delta)
    return maxd


def _cd_gram(G, c, lam, beta, tol, max_sweeps, trace=None):
    """Minimize 1/2 b'Gb - c'b + lam |b|_1 by cyclic coordinate descent.

    Full sweeps alternate with sweeps over the current active set until a
    full sweep moves no coefficient by ``tol`` or more.  ``beta`` is updated
    in place (warm start).  Returns the number of sweeps.
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    diag = np.diag(G).copy()
    gb = G @ beta
    everything = np.arange(len(c))
    sweeps = 0

    def record():
        if trace is not None:
            trace.append(0.5 * beta @ gb - c @ beta + lam * np.abs(beta).sum())

    while True:
        maxd = _sweep(G, diag, c, gb, lam, beta, everything)
        sweeps += 1
        record()
        if maxd < tol:
            return sweeps
        if sweeps >= max_sweeps:
            raise NonConvergence(f"coordinate descent did not converge in {max_sweeps} sweeps")
        active = np.flatnonzero(beta)
        while True:
            maxd = _sweep(G, diag, c, gb, lam, beta, active)
            sweeps += 1
            record()
            if maxd < tol:
                break
            if sweeps >= max_sweeps:
                raise NonConvergence(f"coordinate descent did not converge in {max_sweeps} sweeps")


# -- family-specific pieces ---------------------------------------------------


def _gaussian_lambda_max(x, y):
    xc = x - x.mean(axis=0)
    return float(np.max(np.abs(xc.T @ (y - y.mean()))) / len(y))


def _gaussian_path(x, y, lambdas, tol, max_sweeps, trace=None):
    n = len(y)
    xm = x.mean(axis=0)
    ym = y.mean()
    xc = x - xm
    G = xc.T @ xc / n
    c = xc.T @ (y - ym) / n
    beta = np.zeros(x.shape[1])
    coefs, intercepts = [], []
    for lam in lambdas:
        _cd_gram(G, c, lam, beta, tol, max_sweeps, trace)
        coefs.append(beta.copy())
        intercepts.append(ym - xm @ beta)
    return np.array(coefs), np.array(intercepts)


def _binomial_objective(x, y, b0, beta, lam):
    eta = b0 + x @ beta
    ll = y * eta - np.logaddexp(0.0, eta)
    return -ll.mean() + lam * np.abs(beta).sum()


def _binomial_lambda_max(x, y):
    return _gaussian_lambda_max(x, y)


def _binomial_fit(x, y, lam, b0, beta, tol, max_sweeps, max_irls=100):
    n = len(y)
    obj = _binomial_objective(x, y, b0, beta, lam)
    for _ in range(max_irls):
        eta = b0 + x @ beta
        pr = _sigmoid(eta)
        w = np.clip(pr * (1 - pr), 1e-5, None)
        z = eta + (y - pr) / w
        sw = w.sum()
        xm = w @ x / sw
        zm = w @ z / sw
        xc = x - xm
        G = (xc * w[:, None]).T @ xc / n
        c = (xc * w[:, None]).T @ (z - zm) / n
        new_beta = beta.copy()
        _cd_gram(G, c, lam, new_beta, tol, max_sweeps)
        new_b0 = zm - xm @ new_beta
        new_obj = _binomial_objective(x, y, new_b0, new_beta, lam)
        step = 1.0
        # step-halving keeps the penalized objective monotone
        while new_obj > obj + 1e-12 and step > 1e-6:
            step /= 2
            cand_beta = beta + step * (new_beta - beta)
            cand_b0 = b0 + step * (new_b0 - b0)
            cand_obj = _binomial_objective(x, y, cand_b0, cand_beta, lam)
            if cand_obj <= obj + 1e-12:
                new_beta, new_b0, new_obj = cand_beta, cand_b0, cand_obj
                break
        if new_obj > obj + 1e-12:
            break
        change = max(np.max(np.abs(new_beta - beta), initial=0.0), abs(new_b0 - b0))
        beta, b0, obj = new_beta, new_b0, new_obj
        if change < tol:
            return b0, beta
    return b0, beta


def _binomial_path(x, y, lambdas, tol, max_sweeps):
    ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    b0 = float(np.log(ybar / (1 - ybar)))
    beta = np.zeros(x.shape[1])
    coefs, intercepts = [], []
    for lam in lambdas:
        b0, beta = _binomial_fit(x, y, lam, b0, beta, tol, max_sweeps)
        coefs.append(beta.copy())
        intercepts.append(b0)
    return np.array(coefs), np.array(intercepts)


class _CoxData:
    """Precomputed ordering for Breslow partial likelihood evaluations."""

    def __init__(self, x, time, event):
        order = np.argsort(time, kind="stable")
        self.x = x[order]
        self.t = time[order]
        self.d = event[order].astype(float)
        self.first = np.searchsorted(self.t, self.t, side="left")
        self.last = np.searchsorted(self.t, self.t, side="right") - 1
        self.n = len(time)

    def loglik(self, beta):
        eta = self.x @ beta
        log_risk = np.logaddexp.accumulate(eta[::-1])[::-1][self.first]
        return float(np.sum(self.d * (eta - log_risk)))

    def loglik_grad(self, beta):
        eta = self.x @ beta
        log_risk = np.logaddexp.accumulate(eta[::-1])[::-1][self.first]
        ll = float(np.sum(self.d * (eta - log_risk)))
        terms = np.where(self.d > 0, -log_risk, -np.inf)
        cum = np.logaddexp.accumulate(terms)[self.last]
        weight = self.d - np.exp(eta + cum)  # d loglik / d eta
        return ll, self.x.T @ weight


def _cox_lambda_max(cd: _CoxData):
    _, g = cd.loglik_grad(np.zeros(cd.x.shape[1]))
    return float(np.max(np.abs(g)) / cd.n)


def _cox_fit(cd: _CoxData, lam, beta, tol, max_iter, step0=1.0):
    """Proximal gradient (ISTA with backtracking) for one lambda."""
    n = cd.n

    def smooth(b):
        ll, g = cd.loglik_grad(b)
        return -ll / n, -g / n

    f, g = smooth(beta)
    step = step0
    for it in range(max_iter):
        while True:
            cand = soft_threshold(beta - step * g, step * lam)
            diff = cand - beta
            fc, gc = smooth(cand)
            # relative slack: near the optimum the decrease is below rounding
            if fc <= f + g @ diff + (diff @ diff) / (2 * step) + 1e-12 * max(1.0, abs(f)):
                break
            step /= 2
            if step < 1e-12:
                if np.max(np.abs(diff), initial=0.0) < tol:
                    return beta, step0
                raise NonConvergence("Cox lasso line search failed")
        change = np.max(np.abs(diff), initial=0.0)
        beta, f, g = cand, fc, gc
        if change < tol:
            return beta, step
        step *= 1.5
    raise NonConvergence(f"Cox lasso did not converge in {max_iter} iterations")


def _cox_path(cd: _CoxData, lambdas, tol, max_iter):
    beta = np.zeros(cd.x.shape[1])
    coefs = []
    step = 1.0
    for lam in lambdas:
        beta, step = _cox_fit(cd, lam, beta, tol, max_iter, step)
        coefs.append(beta.copy())
    return np.array(coefs), np.zeros(len(lambdas))


# -- public API ---------------------------------------------------------------


@dataclass
class LassoModel(PredictionModel):
    coef: np.ndarray
    intercept: float
    lam: float
    family: str
    lambdas: np.ndarray = field(repr=False, default=None)
    path_coefs: np.ndarray = field(repr=False, default=None)
    path_intercepts: np.ndarray = field(repr=False, default=None)
    cv_deviance: np.ndarray | None = field(repr=False, default=None)

    def __post_init__(self):
        self.n_features = len(self.coef)
        self.outcome_kind = {"gaussian": "continuous", "binomial": "binary", "cox": "survival"}[self.family]

    @property
    def entry_lambdas(self):
        """Largest path lambda at which each coefficient is nonzero (0 if never)."""
        if self.lambdas is None or self.path_coefs is None:
            return None
        nz = self.path_coefs != 0
        entered = nz.any(axis=0)
        first = np.argmax(nz, axis=0)
        return np.where(entered, self.lambdas[first], 0.0)

    @property
    def lambda_max(self):
        return float(self.lambdas[0]) if self.lambdas is not None else None

    def linear_predictor(self, x):
        x = self._check(x)
        return self.intercept + x @ self.coef

    def predict_scalar(self, x):
        if self.family != "gaussian":
            return super().predict_scalar(x)
        return self.linear_predictor(x)

    def predict_probs(self, x):
        if self.family != "binomial":
            return super().predict_probs(x)
        p1 = _sigmoid(self.linear_predictor(x))
        return np.column_stack([1 - p1, p1])

    def risk_score(self, x):
        return self.linear_predictor(x)

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {"type": "lasso", "coef": arr(self.coef), "intercept": self.intercept, "lam": self.lam,
                "family": self.family, "lambdas": arr(self.lambdas), "path_coefs": arr(self.path_coefs),
                "path_intercepts": arr(self.path_intercepts), "cv_deviance": arr(self.cv_deviance)}

    @classmethod
    def from_dict(cls, d):
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)
        return cls(coef=arr(d["coef"]), intercept=float(d["intercept"]), lam=float(d["lam"]),
                   family=d["family"], lambdas=arr(d.get("lambdas")), path_coefs=arr(d.get("path_coefs")),
                   path_intercepts=arr(d.get("path_intercepts")), cv_deviance=arr(d.get("cv_deviance")))


def _family_of(outcome):
    return _OUTCOME_FAMILY.get(outcome.kind)


def lambda_max(x, outcome, family=None):
    family = family or _family_of(outcome)
    x = np.asarray(x, dtype=float)
    if family == "gaussian":
        return _gaussian_lambda_max(x, np.asarray(outcome.y))
    if family == "binomial":
        return _binomial_lambda_max(x, np.asarray(outcome.y))
    return _cox_lambda_max(_CoxData(x, np.asarray(outcome.time), np.asarray(outcome.event)))


def lambda_path(lam_max, n_lambdas=100, min_ratio=1e-3):
    if n_lambdas == 1:
        return np.array([lam_max])
    return lam_max * min_ratio ** (np.arange(n_lambdas) / (n_lambdas - 1))


def _path(family, x, outcome, lambdas, tol, max_sweeps):
    if family == "gaussian":
        return _gaussian_path(x, np.asarray(outcome.y), lambdas, tol, max_sweeps)
    if family == "binomial":
        return _binomial_path(x, np.asarray(outcome.y), lambdas, tol, max_sweeps)
    cd = _CoxData(x, np.asarray(outcome.time), np.asarray(outcome.event))
    return _cox_path(cd, lambdas, tol, max_sweeps)


def _deviance(family, x_tr, out_tr, x_te, out_te, coefs, intercepts):
    """Held-out deviance for every lambda on the path."""
    if family == "gaussian":
        pred = intercepts[None, :] + x_te @ coefs.T
        return np.mean((np.asarray(out_te.y)[:, None] - pred) ** 2, axis=0)
    if family == "binomial":
        y = np.asarray(out_te.y)[:, None]
        eta = intercepts[None, :] + x_te @ coefs.T
        return -2 * np.mean(y * eta - np.logaddexp(0.0, eta), axis=0)
    # cross-validated partial likelihood (full minus training part)
    x_all = np.vstack([x_tr, x_te])
    cd_all = _CoxData(x_all, np.concatenate([out_tr.time, out_te.time]),
                      np.concatenate([out_tr.event, out_te.event]))
    cd_tr = _CoxData(x_tr, np.asarray(out_tr.time), np.asarray(out_tr.event))
    return np.array([-2 * (cd_all.loglik(b) - cd_tr.loglik(b)) for b in coefs])


def fit_lasso(d: Dataset, family: str | None = None, lambdas=None, cv_folds: int | None = None,
              seed: int = 0, lam: float | None = None, n_lambdas: int = 100,
              min_ratio: float | None = None, tol: float = 1e-7, max_sweeps: int = 100_000,
              trace: list | None = None) -> LassoModel:
    """Fit an L1-penalized model over a decreasing lambda path.

    The reported model sits at ``lam`` if given, else at the CV-optimal
    lambda when ``cv_folds`` is set, else at the smallest path lambda.
    ``trace`` (gaussian only) collects the objective after every sweep.
    """
    outcome = d.outcome
    inferred = _family_of(outcome)
    family = family or inferred
    if family not in FAMILIES:
        raise FamilyMismatch(f"unknown lasso family {family!r}")
    if family != inferred:
        raise FamilyMismatch(f"family {family!r} does not match a {outcome.kind} outcome")
    if family == "cox" and np.sum(outcome.event) == 0:
        raise NoEvents("Cox lasso needs at least one observed event")
    x = np.asarray(d.features.values, dtype=float)
    n, p = x.shape

    if lambdas is None:
        lmax = lambda_max(x, outcome, family)
        if lmax <= 0:
            lmax = 1e-8
        ratio = min_ratio if min_ratio is not None else (1e-3 if n > p else 1e-2)
        lambdas = lambda_path(lmax, n_lambdas, ratio)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    if lam is not None and lam not in lambdas:
        lambdas = np.sort(np.append(lambdas, lam))[::-1]
    if np.any(lambdas < 0):
        raise ValidationError("lambdas must be nonnegative")

    if family == "gaussian" and trace is not None:
        coefs, intercepts = _gaussian_path(x, np.asarray(outcome.y), lambdas, tol, max_sweeps, trace)
    else:
        coefs, intercepts = _path(family, x, outcome, lambdas, tol, max_sweeps)

    cv_dev = None
    if lam is not None:
        k = int(np.flatnonzero(lambdas == lam)[0])
    elif cv_folds:
        if cv_folds < 2 or cv_folds > n:
            raise ValidationError("cv_folds must be between 2 and N")
        folds = np.random.default_rng(seed).permutation(n) % cv_folds
        dev = np.zeros(len(lambdas))
        for f in range(cv_folds):
            tr, te = folds != f, folds == f
            out_tr, out_te = outcome.take(np.flatnonzero(tr)), outcome.take(np.flatnonzero(te))
            if family == "cox" and np.sum(out_tr.event) == 0:
                continue
            c_f, i_f = _path(family, x[tr], out_tr, lambdas, tol, max_sweeps)
            fold_dev = _deviance(family, x[tr], out_tr, x[te], out_te, c_f, i_f)
            dev += fold_dev * (te.sum() if family != "cox" else 1.0)
        cv_dev = dev / (n if family != "cox" else 1.0)
        k = int(np.argmin(cv_dev))
    else:
        k = len(lambdas) - 1
    return LassoModel(
        coef=coefs[k].copy(),
        intercept=float(intercepts[k]),
        lam=float(lambdas[k]),
        family=family,
        lambdas=lambdas,
        path_coefs=coefs,
        path_intercepts=intercepts,
        cv_deviance=cv_dev,
    )
