"""Synthetic scenarios and the replicated knockoff-filter pipeline.

A replication runs generate -> standardize -> fit knockoff sampler ->
sample knockoffs -> fit model on [X, X_tilde] -> statistic -> threshold ->
score against the known truth (the first ``true_k`` columns).
"""

from __future__ import annotations

import json
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    BinaryOutcome,
    CompetingRisksOutcome,
    ContinuousOutcome,
    Dataset,
    FeatureMatrix,
    SurvivalOutcome,
    standardize,
)
from .errors import ConfigError, EmptyResults, FamilyMismatch, KnockoffError, ReplicationError
from .knockoffs import GaussianKnockoffSampler, combine, sample_knockoffs
from .models import ModelSpec, NetworkConfig, fit_lasso, fit_model
from .selection import score_selection, select
from .statistics import (
    CpfConfig,
    cpf_statistics,
    default_time_grid,
    importance,
    lcd_statistics,
    lsm_statistics,
)

FAMILIES = ("continuous", "binary", "survival", "competing_risks")
LINKS = ("linear", "nonlinear")
DESIGNS = ("iid_normal", "ar1")

CR_BASELINE_Q = 0.5


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def _values(x):
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)


# -- generators ---------------------------------------------------------------


def gen_features(N: int, p: int, design: str = "iid_normal", seed: int = 0, rho: float = 0.2) -> FeatureMatrix:
    """iid N(0, 1) columns, or AR(1) rows with covariance rho^|i-j|."""
    if N < 1 or p < 1:
        raise ConfigError("N and p must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((N, p))
    if design == "iid_normal":
        x = z
    elif design == "ar1":
        if not -1.0 < rho < 1.0:
            raise ConfigError("rho must lie in (-1, 1)")
        x = np.empty_like(z)
        x[:, 0] = z[:, 0]
        c = math.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            x[:, j] = rho * x[:, j - 1] + c * z[:, j]
    else:
        raise ConfigError(f"unknown feature design {design!r}")
    return FeatureMatrix.from_array(x)


def gen_continuous(x, link="linear", seed=0, true_k=10, noise_sd=1.0) -> ContinuousOutcome:
    """linear: y = 3 * sum(x_j) + 100 + N(0, noise_sd^2); nonlinear: y = sum(x_j^2)."""
    v = _values(x)[:, :true_k]
    if link == "linear":
        eps = np.random.default_rng(seed).standard_normal(len(v)) * noise_sd
        return ContinuousOutcome(3.0 * v.sum(axis=1) + 100.0 + eps)
    if link == "nonlinear":
        return ContinuousOutcome((v * v).sum(axis=1))
    raise ConfigError(f"unknown link {link!r}")


def binary_probability(x, link="linear", true_k=10):
    v = _values(x)[:, :true_k]
    if link == "linear":
        return _logistic(v.sum(axis=1))
    if link == "nonlinear":
        z = (v * v).sum(axis=1)
        sd = z.std(ddof=1) if len(z) > 1 else 0.0
        z = (z - z.mean()) / sd if sd > 0 else z - z.mean()
        return _logistic(z)
    raise ConfigError(f"unknown link {link!r}")


def gen_binary(x, link="linear", seed=0, true_k=10) -> BinaryOutcome:
    """linear: P(y=1) = logistic(sum x_j); nonlinear: logistic of the
    standardized sum of squares."""
    prob = binary_probability(x, link, true_k)
    u = np.random.default_rng(seed).random(len(prob))
    return BinaryOutcome((u < prob).astype(float))


def survival_log_hazard(x, link="linear", true_k=10):
    v = _values(x)[:, :true_k]
    if link == "linear":
        return 0.5 * v.sum(axis=1)
    if link == "nonlinear":
        return 0.5 * (v * v).sum(axis=1)
    raise ConfigError(f"unknown link {link!r}")


def gen_survival(x, link="linear", seed=0, true_k=10, censor_rate=None) -> SurvivalOutcome:
    """Exponential event times with rate exp(Z); exponential censoring with
    rate 0.05 (linear) or 0.1 (nonlinear)."""
    z = survival_log_hazard(x, link, true_k)
    if censor_rate is None:
        censor_rate = 0.05 if link == "linear" else 0.1
    rng = np.random.default_rng(seed)
    t = rng.exponential(1.0, len(z)) / np.exp(z)
    c = rng.exponential(1.0 / censor_rate, len(z))
    return SurvivalOutcome(np.minimum(t, c), (t <= c).astype(float))


def cr_linear_predictor(x, link="linear", true_k=10):
    v = _values(x)[:, :true_k]
    if link == "linear":
        return v.sum(axis=1)
    if link == "nonlinear":
        return (v * v).sum(axis=1) - 10.0
    raise ConfigError(f"unknown link {link!r}")


def cause1_probability(z, q=CR_BASELINE_Q):
    """F1(inf | x) = 1 - (1 - q)^exp(z)."""
    return -np.expm1(np.exp(z) * np.log1p(-q))


def cause1_conditional_cdf(t, z, q=CR_BASELINE_Q):
    """F1(t | x) / F1(inf | x) with F1(t | x) = 1 - (1 - q(1 - e^-t))^exp(z)."""
    f01 = q * -np.expm1(-np.asarray(t, dtype=float))
    f1 = -np.expm1(np.exp(z) * np.log1p(-f01))
    return f1 / cause1_probability(z, q)


def _bisect_cause1_time(u, z, q, tol=1e-10):
    lo, hi = 0.0, 1.0
    while cause1_conditional_cdf(hi, z, q) < u:
        hi *= 2.0
        if hi > 1e6:
            return hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if cause1_conditional_cdf(mid, z, q) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cause1_inverse_cdf(u, z, q=CR_BASELINE_Q):
    """Solve F1(t | x) / F1(inf | x) = u for t."""
    u = np.asarray(u, dtype=float)
    z = np.broadcast_to(np.asarray(z, dtype=float), u.shape)
    target = u * cause1_probability(z, q)
    a = np.exp(-z) * np.log1p(-target)  # log of (1 - F01(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -np.log1p(np.expm1(a) / q)
    bad = ~(np.isfinite(t) & (t > 0))
    for i in np.flatnonzero(bad):
        t.flat[i] = _bisect_cause1_time(float(u.flat[i]), float(z.flat[i]), q)
    return t


def _cr_latent(z, rng, q):
    n = len(z)
    is_one = rng.random(n) < cause1_probability(z, q)
    u = rng.random(n)
    t = rng.exponential(1.0, n)
    if is_one.any():
        t[is_one] = cause1_inverse_cdf(u[is_one], z[is_one], q)
    return np.maximum(t, 1e-12), np.where(is_one, 1, 2)


def gen_competing_risks_latent(x, link="linear", seed=0, true_k=10, q=CR_BASELINE_Q):
    """Uncensored event times and causes (1 or 2), drawn from the same
    stream as :func:`gen_competing_risks` before censoring is applied."""
    z = cr_linear_predictor(x, link, true_k)
    return _cr_latent(z, np.random.default_rng(seed), q)


def gen_competing_risks(x, link="linear", seed=0, true_k=10, q=CR_BASELINE_Q) -> CompetingRisksOutcome:
    """Two-step generator: cause-1 membership ~ Bernoulli(F1(inf | x)),
    cause-1 times by inverse CDF, cause-2 times ~ Exp(1), censoring ~ Exp(1)."""
    z = cr_linear_predictor(x, link, true_k)
    rng = np.random.default_rng(seed)
    t, latent = _cr_latent(z, rng, q)
    c = rng.exponential(1.0, len(z))
    cause = np.where(t <= c, latent, 0)
    return CompetingRisksOutcome(np.minimum(t, c), cause)


def generate_outcome(family, x, link, seed, true_k=10, noise_sd=1.0):
    if family == "continuous":
        return gen_continuous(x, link, seed, true_k, noise_sd)
    if family == "binary":
        return gen_binary(x, link, seed, true_k)
    if family == "survival":
        return gen_survival(x, link, seed, true_k)
    if family == "competing_risks":
        return gen_competing_risks(x, link, seed, true_k)
    raise ConfigError(f"unknown outcome family {family!r}")


# -- scenario configuration -----------------------------------------------------


def default_model_spec(family: str, link: str = "linear") -> ModelSpec:
    """Architectures and training settings used in the simulation study."""
    if family in ("continuous", "binary"):
        hidden = (8,) if link == "linear" else (64, 32, 16)
        net = NetworkConfig(hidden=hidden, activation="relu", l1=0.001, learning_rate=0.01,
                            batch_size=20, validation_fraction=0.1, patience=50)
        return ModelSpec(kind="mlp", network=net)
    if family == "survival":
        hidden = (64, 32, 16, 8) if link == "linear" else (128, 64, 32, 16)
        # dropout lowered from 0.5: without batch norm the 0.5 setting
        # collapses the risk score to a constant at this sample size
        net = NetworkConfig(hidden=hidden, activation="relu", dropout=0.2, l2=0.01,
                            learning_rate=1e-4, batch_size=50, validation_fraction=0.2, patience=50)
        return ModelSpec(kind="cox", risk="network", network=net)
    if family == "competing_risks":
        # weight penalty 0.1 only works alongside batch norm; 0.01 here
        net = NetworkConfig(hidden=(128, 64, 32, 16), activation="relu", dropout=0.5, l2=0.01,
                            learning_rate=1e-3, batch_size=50, validation_fraction=0.2, patience=200)
        return ModelSpec(kind="discrete_cr", cutpoints=20, network=net)
    raise ConfigError(f"unknown outcome family {family!r}")


@dataclass
class ScenarioConfig:
    outcome_family: str = "continuous"
    link: str = "linear"
    p: int = 50
    N: int = 2000
    true_k: int = 10
    feature_design: str = "iid_normal"
    rho: float = 0.2
    q: float = 0.2
    statistic: str = "cpf"
    selection_kind: str = "knockoff_plus"
    model: ModelSpec | None = None
    cpf: CpfConfig = field(default_factory=CpfConfig)
    replications: int = 50
    seed: int = 0
    lasso_cv_folds: int = 5
    noise_sd: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.outcome_family not in FAMILIES:
            raise ConfigError(f"unknown outcome family {self.outcome_family!r}")
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}")
        if self.feature_design not in DESIGNS:
            raise ConfigError(f"unknown feature design {self.feature_design!r}")
        if not 0 <= self.true_k <= self.p:
            raise ConfigError("true_k must lie in [0, p]")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (-1, 1)")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0.0 < self.q < 1.0:
            raise ConfigError("q must lie in (0, 1)")
        if self.statistic not in ("cpf", "lcd", "lsm"):
            raise ConfigError(f"unknown statistic {self.statistic!r}")
        if self.selection_kind not in ("knockoff", "knockoff_plus"):
            raise ConfigError(f"unknown selection kind {self.selection_kind!r}")
        if self.statistic in ("lcd", "lsm") and self.outcome_family == "competing_risks":
            raise FamilyMismatch("lasso statistics are not available for competing-risks outcomes")
        if isinstance(self.model, dict):
            self.model = ModelSpec.from_dict(self.model)
        if self.model is None:
            self.model = default_model_spec(self.outcome_family, self.link)
        if isinstance(self.cpf, dict):
            self.cpf = CpfConfig.from_dict(self.cpf)
        if self.statistic == "cpf":
            self.model.check_outcome(self.outcome_family)

    @property
    def truth(self):
        return frozenset(range(self.true_k))

    def to_dict(self):
        return {
            "name": self.name,
            "outcome_family": self.outcome_family,
            "link": self.link,
            "p": self.p,
            "N": self.N,
            "true_k": self.true_k,
            "feature_design": self.feature_design,
            "rho": self.rho,
            "q": self.q,
            "statistic": self.statistic,
            "selection_kind": self.selection_kind,
            "model": self.model.to_dict(),
            "cpf": self.cpf.to_dict(),
            "replications": self.replications,
            "seed": self.seed,
            "lasso_cv_folds": self.lasso_cv_folds,
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"scenario file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# -- replications -----------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    seed: int
    fdp: float
    mfdp: float
    power: float
    n_selected: int
    wall_time: float = field(compare=False)
    w: tuple = field(default=(), repr=False)
    selected: tuple = ()

    def record(self):
        """Deterministic fields only (wall time excluded)."""
        return {"rep": self.rep, "seed": self.seed, "fdp": self.fdp, "mfdp": self.mfdp,
                "power": self.power, "n_selected": self.n_selected}


def replication_seed(master_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([master_seed, rep]).generate_state(1)[0])


def simulate_dataset(cfg: ScenarioConfig, rep_seed: int):
    """Raw features and outcome for one replication."""
    ss = np.random.SeedSequence(rep_seed)
    s_feat, s_out = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    x = gen_features(cfg.N, cfg.p, cfg.feature_design, s_feat, cfg.rho)
    y = generate_outcome(cfg.outcome_family, x, cfg.link, s_out, cfg.true_k, cfg.noise_sd)
    return Dataset(x, y)


def knockoff_dataset(d: Dataset, seed: int):
    """Standardize, fit a Gaussian sampler and return ([X, X_tilde], sampler)."""
    x_std, params = standardize(d.features)
    sampler = GaussianKnockoffSampler.fit(x_std)
    x_knock = sample_knockoffs(sampler, x_std, seed)
    return Dataset(combine(x_std, x_knock), d.outcome, params), sampler


def compute_statistic(cfg: ScenarioConfig, d_star: Dataset, seed: int, model_factory=None):
    p = d_star.p // 2
    if cfg.statistic == "cpf":
        if model_factory is not None:
            model = model_factory(d_star, seed)
        else:
            model = fit_model(cfg.model, d_star, seed=seed)
        cpf_cfg = cfg.cpf
        if cfg.outcome_family in ("survival", "competing_risks") and cpf_cfg.time_grid is None:
            cpf_cfg = cpf_cfg.with_time_grid(default_time_grid(d_star.outcome.time))
        cpf_cfg = CpfConfig(cpf_cfg.J, cpf_cfg.n_sub, cpf_cfg.delta, cpf_cfg.time_grid, cpf_cfg.cause, seed)
        return cpf_statistics(importance(model, d_star.features, cpf_cfg))
    lasso = fit_lasso(d_star, cv_folds=cfg.lasso_cv_folds, seed=seed)
    if cfg.statistic == "lcd":
        return lcd_statistics(lasso, p)
    return lsm_statistics(lasso, p)


def run_replication(cfg: ScenarioConfig, rep: int, model_factory=None) -> ReplicationResult:
    """One end-to-end knockoff filter run, deterministic in (cfg.seed, rep)."""
    start = _time.perf_counter()
    rep_seed = replication_seed(cfg.seed, rep)
    try:
        d = simulate_dataset(cfg, rep_seed)
        s_knock, s_model = (int(s.generate_state(1)[0])
                            for s in np.random.SeedSequence([rep_seed, 1]).spawn(2))
        d_star, _ = knockoff_dataset(d, s_knock)
        stats = compute_statistic(cfg, d_star, s_model, model_factory)
        sel = select(stats.w, cfg.q, cfg.selection_kind)
        score = score_selection(sel.selected, cfg.truth, cfg.q, require_truth=False)
    except KnockoffError as exc:
        raise ReplicationError(rep, exc) from exc
    return ReplicationResult(
        rep=rep,
        seed=rep_seed,
        fdp=score.fdp,
        mfdp=score.mfdp,
        power=score.power,
        n_selected=score.n_selected,
        wall_time=_time.perf_counter() - start,
        w=tuple(float(v) for v in stats.w),
        selected=tuple(sorted(sel.selected)),
    )


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_scenario(cfg: ScenarioConfig, reps=None, threads: int = 1, on_result=None):
    """Run the given replication indices (default all), optionally in
    parallel processes.  ``on_result`` is called in completion order;
    the returned list is sorted by replication index."""
    reps = list(range(cfg.replications)) if reps is None else list(reps)
    results = []
    if threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_run_one, [(cfg, r) for r in reps]):
                results.append(res)
                if on_result:
                    on_result(res)
    else:
        for r in reps:
            res = run_replication(cfg, r)
            results.append(res)
            if on_result:
                on_result(res)
    return sorted(results, key=lambda r: r.rep)


# -- aggregation ---------------------------------------------------------------------

METRICS = ("fdp", "mfdp", "power")


def _describe(values):
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    return {
        "mean": float(v.mean()),
        "se": float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "median": float(np.quantile(v, 0.5)),
        "q1": float(np.quantile(v, 0.25)),
        "q3": float(np.quantile(v, 0.75)),
        "min": float(v[0]),
        "max": float(v[-1]),
    }


def aggregate(results) -> dict:
    """Mean, standard error, median and quartiles of FDP, mFDP and power.

    Records are sorted by replication index so the summary does not depend
    on completion order.
    """
    results = list(results)
    if not results:
        raise EmptyResults("no replication results to aggregate")
    recs = sorted((r.record() if hasattr(r, "record") else dict(r) for r in results),
                  key=lambda r: r["rep"])
    summary = {"n_replications": len(recs)}
    for m in METRICS:
        summary[m] = _describe([r[m] for r in recs])
    summary["n_selected"] = _describe([r["n_selected"] for r in recs])
    summary["records"] = recs
    return summary


def long_format_rows(summary: dict, scenario: str, statistic: str):
    """(scenario, statistic, metric, value) rows for box plots."""
    for rec in summary["records"]:
        for m in METRICS:
            yield (scenario, statistic, m, rec[m])
