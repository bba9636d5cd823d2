"""Second-order Gaussian model-X knockoffs with the equicorrelated construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import CONTINUOUS, FeatureMatrix
from .errors import DimensionMismatch, NotPositiveDefinite, ValidationError

KNOCKOFF_SUFFIX = "_knockoff"
S_SAFETY = 1.0 - 1e-6
DEFAULT_SHRINKAGE_FLOOR = 1e-6


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    ridge: float  # amount added to the diagonal; 0 when no shrinkage was needed

    def __iter__(self):
        return iter((self.mean, self.cov))


def fit_moments(m: FeatureMatrix | np.ndarray, shrinkage_floor: float = DEFAULT_SHRINKAGE_FLOOR) -> MomentEstimate:
    """Sample mean and covariance, ridged up to ``shrinkage_floor`` if needed."""
    x = m.values if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValidationError("need at least two rows to estimate a covariance")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2
    lam_min = np.linalg.eigvalsh(cov)[0]
    ridge = 0.0
    if lam_min < shrinkage_floor:
        ridge = float(shrinkage_floor - lam_min)
        cov = cov + ridge * np.eye(cov.shape[0])
    return MomentEstimate(mean, cov, ridge)


def solve_equicorrelated_s(sigma) -> np.ndarray:
    """Equicorrelated diagonal: s_j = min(1, 2*lambda_min(corr)) on the
    correlation scale, mapped back to the covariance scale and shrunk by
    (1 - 1e-6)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatch("sigma must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise NotPositiveDefinite("sigma is not symmetric")
    d = np.diag(sigma)
    if np.any(d <= 0):
        raise NotPositiveDefinite("sigma has a non-positive diagonal entry")
    sd = np.sqrt(d)
    corr = sigma / np.outer(sd, sd)
    lam_min = np.linalg.eigvalsh((corr + corr.T) / 2)[0]
    if lam_min <= 0:
        raise NotPositiveDefinite(f"sigma is not positive definite (lambda_min={lam_min:.3g})")
    s_corr = min(1.0, 2.0 * lam_min)
    return s_corr * d * S_SAFETY


def _lower_factor(c):
    """Lower-triangular L with L L^T = c, tolerating a singular PSD c."""
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh((c + c.T) / 2)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        r = np.linalg.qr(root.T, mode="r")
        lower = r.T
        # fix signs so the diagonal is nonnegative
        signs = np.where(np.diag(lower) < 0, -1.0, 1.0)
        return lower * signs


@dataclass(frozen=True)
class GaussianKnockoffSampler:
    mu: np.ndarray
    sigma: np.ndarray
    s: np.ndarray
    conditional_mean_map: np.ndarray = field(repr=False)
    conditional_cov_factor: np.ndarray = field(repr=False)
    ridge: float = 0.0
    construction: str = "equicorrelated"

    @classmethod
    def from_moments(cls, mu, sigma, s=None, ridge=0.0):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if s is None:
            s = solve_equicorrelated_s(sigma)
        s = np.asarray(s, dtype=float)
        p = len(mu)
        if sigma.shape != (p, p) or s.shape != (p,):
            raise DimensionMismatch("mu, sigma and s have inconsistent sizes")
        D = np.diag(s)
        sigma_inv_d = np.linalg.solve(sigma, D)  # Sigma^{-1} D
        mean_map = np.eye(p) - sigma_inv_d.T  # (Sigma - D) Sigma^{-1}
        cond_cov = 2 * D - D @ sigma_inv_d
        cond_cov = (cond_cov + cond_cov.T) / 2
        factor = _lower_factor(cond_cov)
        for a in (mu, sigma, s, mean_map, factor):
            a.setflags(write=False)
        return cls(mu, sigma, s, mean_map, factor, float(ridge))

    @classmethod
    def fit(cls, m: FeatureMatrix | np.ndarray, shrinkage_floor: float = DEFAULT_SHRINKAGE_FLOOR):
        est = fit_moments(m, shrinkage_floor)
        return cls.from_moments(est.mean, est.cov, ridge=est.ridge)

    @property
    def p(self):
        return len(self.mu)

    def joint_covariance(self):
        """G = [[Sigma, Sigma - D], [Sigma - D, Sigma]]."""
        off = self.sigma - np.diag(self.s)
        return np.block([[self.sigma, off], [off, self.sigma]])

    def to_dict(self):
        return {
            "construction": self.construction,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "s": self.s.tolist(),
            "ridge": self.ridge,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls.from_moments(d["mu"], d["sigma"], d["s"], d.get("ridge", 0.0))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def sample_knockoffs(sampler: GaussianKnockoffSampler, m: FeatureMatrix | np.ndarray, seed: int):
    """Draw X_tilde row-wise from N(mu + A (x - mu), 2D - D Sigma^{-1} D).

    Knockoff columns are always continuous, even for binary originals.
    Returns a FeatureMatrix when given one, otherwise an array.
    """
    as_matrix = isinstance(m, FeatureMatrix)
    x = m.values if as_matrix else np.asarray(m, dtype=float)
    if x.ndim != 2 or x.shape[1] != sampler.p:
        raise DimensionMismatch(f"sampler fitted on p={sampler.p}, got matrix of shape {x.shape}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(x.shape)
    centered = x - sampler.mu
    xk = sampler.mu + centered @ sampler.conditional_mean_map.T + z @ sampler.conditional_cov_factor.T
    if not as_matrix:
        return xk
    names = tuple(n + KNOCKOFF_SUFFIX for n in m.column_names)
    return FeatureMatrix(xk, names, (CONTINUOUS,) * sampler.p)


def combine(x: FeatureMatrix, x_knock: FeatureMatrix) -> FeatureMatrix:
    """[X, X_tilde], originals first."""
    if x.values.shape != x_knock.values.shape:
        raise DimensionMismatch("originals and knockoffs differ in shape")
    return x.hstack(x_knock)


@dataclass(frozen=True)
class ExchangeabilityReport:
    cov_deviation: float          # max |cov(X) - cov(X_tilde)|
    cross_cov_deviation: float    # max off-diagonal |cov(X, X_tilde) - cov(X)|
    mean_deviation: float         # max |mean(X) - mean(X_tilde)|
    mean_differences: np.ndarray
    d_hat: np.ndarray             # diag(cov(X) - cov(X, X_tilde))
    n: int
    p: int

    @property
    def max_deviation(self):
        return max(self.cov_deviation, self.cross_cov_deviation, self.mean_deviation)

    def passed(self, threshold):
        return self.max_deviation < threshold

    def to_dict(self):
        return {
            "n": self.n,
            "p": self.p,
            "cov_deviation": self.cov_deviation,
            "cross_cov_deviation": self.cross_cov_deviation,
            "mean_deviation": self.mean_deviation,
            "mean_differences": self.mean_differences.tolist(),
            "d_hat": self.d_hat.tolist(),
        }


def exchangeability_diagnostic(x, x_knock) -> ExchangeabilityReport:
    """Empirical second-moment checks of pairwise exchangeability.

    A passing report is necessary but not sufficient for valid knockoffs.
    """
    a = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)
    b = x_knock.values if isinstance(x_knock, FeatureMatrix) else np.asarray(x_knock, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    n, p = a.shape
    joint = np.cov(np.hstack([a, b]), rowvar=False)
    cov_x = joint[:p, :p]
    cov_k = joint[p:, p:]
    cross = joint[:p, p:]
    d_hat = np.diag(cov_x - cross)
    off = ~np.eye(p, dtype=bool)
    cross_dev = float(np.max(np.abs((cross - cov_x)[off]))) if p > 1 else 0.0
    mean_diff = a.mean(axis=0) - b.mean(axis=0)
    return ExchangeabilityReport(
        cov_deviation=float(np.max(np.abs(cov_x - cov_k))),
        cross_cov_deviation=cross_dev,
        mean_deviation=float(np.max(np.abs(mean_diff))),
        mean_differences=mean_diff,
        d_hat=d_hat,
        n=n,
        p=p,
    )
