import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpfknockoff.data import (
    BinaryOutcome,
    CompetingRisksOutcome,
    ContinuousOutcome,
    Dataset,
    FeatureMatrix,
    SurvivalOutcome,
    train_test_split,
)
from cpfknockoff.errors import FamilyMismatch, NoEvents, OutcomeMismatch, SingleCauseData
from cpfknockoff.models import (
    ModelSpec,
    breslow_baseline,
    concordance_index,
    fit_cox,
    fit_discrete_cr,
    fit_lasso,
    fit_metrics,
    fit_mlp,
    fit_model,
    load_model,
    nelson_aalen,
    save_model,
)
from cpfknockoff.models.competing import likelihood_mask, make_cutpoints
from cpfknockoff.models.lasso import lambda_max, soft_threshold
from cpfknockoff.models.network import (
    Network,
    NetworkConfig,
    backprop_gradient,
    build_network,
)


def _fm(x):
    return FeatureMatrix.from_array(np.asarray(x, dtype=float))


def orthonormal_design(n, p, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, p))
    a -= a.mean(axis=0)
    q, _ = np.linalg.qr(a)
    return np.sqrt(n) * q  # centered, X'X / n = I


def survival_data(n, beta, seed, censor_rate=0.3, binary=False):
    rng = np.random.default_rng(seed)
    p = len(beta)
    x = rng.integers(0, 2, size=(n, p)).astype(float) if binary else rng.normal(size=(n, p))
    t = rng.exponential(1.0 / np.exp(x @ beta))
    c = rng.exponential(1.0 / censor_rate, size=n)
    return Dataset(_fm(x), SurvivalOutcome(np.minimum(t, c), (t <= c).astype(int)))


# -- lasso ----------------------------------------------------------------------


class TestLasso:
    def test_soft_threshold(self):
        np.testing.assert_array_equal(soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0),
                                      [-2.0, 0.0, 0.0, 0.0, 2.0])

    @pytest.mark.parametrize("lam", [0.01, 0.1, 0.3])
    def test_orthonormal_closed_form(self, lam):
        n, p = 200, 8
        x = orthonormal_design(n, p, seed=1)
        rng = np.random.default_rng(2)
        y = x @ np.array([1.0, -0.5, 0.2, 0, 0, 0, 0.05, 0]) + rng.normal(size=n)
        model = fit_lasso(Dataset(_fm(x), ContinuousOutcome(y)), lambdas=[lam])
        expected = soft_threshold(x.T @ (y - y.mean()) / n, lam)
        np.testing.assert_allclose(model.coef, expected, rtol=0, atol=1e-6)

    def test_lambda_max_zeroes_everything(self, rng):
        x = rng.normal(size=(100, 5))
        d = Dataset(_fm(x), ContinuousOutcome(x[:, 0] + rng.normal(size=100)))
        lmax = lambda_max(x, d.outcome)
        assert np.all(fit_lasso(d, lambdas=[lmax]).coef == 0.0)
        assert np.any(fit_lasso(d, lambdas=[0.99 * lmax]).coef != 0.0)

    @pytest.mark.parametrize("family_data", ["binomial", "cox"])
    def test_lambda_max_other_families(self, rng, family_data):
        x = rng.normal(size=(150, 4))
        if family_data == "binomial":
            out = BinaryOutcome((x[:, 0] + rng.normal(size=150) > 0).astype(int))
        else:
            out = survival_data(150, [1.0, 0, 0, 0], 3).outcome
        d = Dataset(_fm(x), out)
        lmax = lambda_max(x, out)
        assert np.all(fit_lasso(d, lambdas=[lmax]).coef == 0.0)

    def test_objective_monotone(self, rng):
        x = rng.normal(size=(300, 20))
        x[:, 1] = x[:, 0] + 0.1 * rng.normal(size=300)  # correlated pair slows CD
        y = x[:, :3].sum(axis=1) + rng.normal(size=300)
        trace = []
        fit_lasso(Dataset(_fm(x), ContinuousOutcome(y)), lambdas=[0.05], trace=trace)
        assert len(trace) > 2
        assert np.all(np.diff(trace) <= 1e-12)

    def test_null_outcome_cv(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2000, 50))
        y = rng.normal(size=2000)
        d = Dataset(_fm(x), ContinuousOutcome(y))
        tr, te = train_test_split(d, 0.7, seed=0)
        model = fit_lasso(tr, cv_folds=5, seed=0)
        assert np.max(np.abs(model.coef)) < 0.1
        mse = fit_metrics(model, te)["mse"]
        assert abs(mse - np.var(te.outcome.y)) / np.var(te.outcome.y) < 0.1

    def test_binomial_recovers_signal(self, rng):
        x = rng.normal(size=(1000, 6))
        p1 = 1 / (1 + np.exp(-(2 * x[:, 0] - x[:, 1])))
        d = Dataset(_fm(x), BinaryOutcome((rng.random(1000) < p1).astype(int)))
        model = fit_lasso(d, cv_folds=5, seed=0)
        assert model.coef[0] > 1.0 and model.coef[1] < -0.5
        probs = model.predict_probs(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_cox_recovers_signal(self):
        d = survival_data(800, [0.8, -0.6, 0, 0], seed=5)
        model = fit_lasso(d, cv_folds=5, seed=0)
        assert model.coef[0] > 0.4 and model.coef[1] < -0.3
        assert model.outcome_kind == "survival"

    def test_entry_lambdas(self, rng):
        x = rng.normal(size=(200, 4))
        y = 3 * x[:, 0] + x[:, 1] + rng.normal(size=200)
        model = fit_lasso(Dataset(_fm(x), ContinuousOutcome(y)), n_lambdas=50)
        z = model.entry_lambdas
        assert z[0] == model.lambdas[1]  # nothing is active at lambda_max itself
        assert z[0] >= z[1] > 0
        assert set(z) <= set(model.lambdas) | {0.0}

    def test_family_mismatch(self, rng):
        d = Dataset(_fm(rng.normal(size=(20, 2))), ContinuousOutcome(rng.normal(size=20)))
        with pytest.raises(FamilyMismatch):
            fit_lasso(d, family="cox")

    def test_deterministic(self, rng):
        x = rng.normal(size=(200, 10))
        d = Dataset(_fm(x), ContinuousOutcome(x[:, 0] + rng.normal(size=200)))
        a, b = fit_lasso(d, cv_folds=5, seed=3), fit_lasso(d, cv_folds=5, seed=3)
        np.testing.assert_array_equal(a.coef, b.coef)


# -- network ----------------------------------------------------------------------


def _fd_check(net, x, target, loss, l1=0.0, l2=0.0, h=1e-6):
    _, gws, gbs = backprop_gradient(net, x, target, loss, l1, l2)
    analytic = np.concatenate([g.ravel() for g in gws + gbs])
    numeric = []
    for p in net.weights + net.biases:
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = backprop_gradient(net, x, target, loss, l1, l2)[0]
            flat[k] = old - h
            down = backprop_gradient(net, x, target, loss, l1, l2)[0]
            flat[k] = old
            numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)


acts = st.sampled_from(["relu", "leaky_relu", "sigmoid", "tanh", "linear"])


class TestBackprop:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 5), min_size=0, max_size=3),
           st.lists(acts, min_size=3, max_size=3), st.sampled_from(["mse", "bce", "cox", "masked_softmax"]))
    def test_matches_finite_differences(self, seed, hidden, act_pool, loss):
        rng = np.random.default_rng(seed)
        n, p = 7, 3
        n_out = 5 if loss == "masked_softmax" else 1
        widths = [p] + hidden + [n_out]
        net = Network(widths, act_pool[:len(hidden)] + ["linear"], leaky_alpha=0.3, seed=seed)
        for b in net.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(n, p))
        if loss == "mse":
            target = (rng.normal(size=n),)
        elif loss == "bce":
            target = (rng.integers(0, 2, n).astype(float),)
        elif loss == "cox":
            target = (rng.exponential(size=n), rng.integers(0, 2, n).astype(float))
            target[1][0] = 1.0
        else:
            mask = rng.random((n, n_out)) < 0.5
            mask[np.arange(n), rng.integers(0, n_out, n)] = True
            target = (mask,)
        err = _fd_check(net, x, target, loss, l1=0.01, l2=0.02)
        assert err < 1e-4

    def test_zero_weight_linear_net_is_stationary(self, rng):
        net = Network([3, 4, 1], ["linear", "linear"])
        for w in net.weights:
            w[:] = 0.0
        value, gws, gbs = backprop_gradient(net, rng.normal(size=(10, 3)), (np.zeros(10),), "mse")
        assert value == 0.0
        assert all(np.all(g == 0.0) for g in gws + gbs)

    def test_l1_subgradient_at_zero(self):
        net = Network([2, 2, 1], ["relu", "linear"])
        for w in net.weights:
            w[:] = 0.0
        assert all(np.all(g == 0.0) for g in net.penalty_grad(l1=1.0))

    def test_forward_deterministic_and_finite(self, rng):
        net = build_network(4, 2, NetworkConfig(hidden=(6, 5), activation="leaky_relu"))
        x = rng.normal(size=(20, 4)) * 100
        a, b = net.predict(x), net.predict(x)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.isfinite(a))


# -- mlp ----------------------------------------------------------------------------


class TestMlp:
    def test_linear_fit_quality(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2000, 5))
        y = 3 * x[:, 0] + 100 + rng.normal(size=2000)
        tr, te = train_test_split(Dataset(_fm(x), ContinuousOutcome(y)), 0.7, seed=0)
        model = fit_mlp(tr, NetworkConfig(hidden=(8,), l1=0.001), seed=0)
        assert fit_metrics(model, te)["mse"] < 2.0

    def test_quadratic_beats_constant(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2000, 10))
        y = (x**2).sum(axis=1)
        tr, te = train_test_split(Dataset(_fm(x), ContinuousOutcome(y)), 0.7, seed=0)
        model = fit_mlp(tr, NetworkConfig(hidden=(64, 32, 16), l1=0.001), seed=0)
        assert fit_metrics(model, te)["mse"] < np.var(te.outcome.y)

    def test_zero_epochs_keeps_initialization(self, rng):
        cfg = NetworkConfig(hidden=(4,), max_epochs=0, seed=9)
        d = Dataset(_fm(rng.normal(size=(30, 3))), ContinuousOutcome(rng.normal(size=30)))
        model = fit_mlp(d, cfg)
        init = build_network(3, 1, cfg)
        for a, b in zip(model.net.weights, init.weights):
            np.testing.assert_array_equal(a, b)
        assert np.all(np.isfinite(model.predict_scalar(d.features.values)))

    def test_classifier(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1000, 3))
        y = (x[:, 0] + 0.3 * rng.normal(size=1000) > 0).astype(int)
        tr, te = train_test_split(Dataset(_fm(x), BinaryOutcome(y)), 0.7, seed=0)
        model = fit_mlp(tr, NetworkConfig(hidden=(8,)), seed=0)
        m = fit_metrics(model, te)
        assert m["accuracy"] > 0.85
        probs = model.predict_probs(rng.normal(size=(50, 3)) * 10)
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-8)

    def test_deterministic(self, rng):
        d = Dataset(_fm(rng.normal(size=(100, 3))), ContinuousOutcome(rng.normal(size=100)))
        cfg = NetworkConfig(hidden=(4,), dropout=0.2, max_epochs=10)
        a, b = fit_mlp(d, cfg, seed=2), fit_mlp(d, cfg, seed=2)
        for wa, wb in zip(a.net.weights, b.net.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_wrong_outcome(self, rng):
        d = survival_data(30, [0.5], 1)
        with pytest.raises(OutcomeMismatch):
            fit_mlp(d)


# -- cox -----------------------------------------------------------------------------


class TestCox:
    def test_hazard_ratio_recovery(self):
        d = survival_data(5000, [0.5], seed=7, binary=True)
        model = fit_cox(d, risk="linear")
        assert abs(model.coef[0] - 0.5) < 0.1

    def test_breslow_null_is_nelson_aalen(self, rng):
        t = rng.exponential(size=300)
        e = rng.integers(0, 2, 300)
        bt, bh = breslow_baseline(t, e, np.zeros(300))
        nt, nh = nelson_aalen(t, e)
        np.testing.assert_array_equal(bt, nt)
        np.testing.assert_array_equal(bh, nh)

    def test_all_censored(self, rng):
        d = Dataset(_fm(rng.normal(size=(10, 2))), SurvivalOutcome(np.arange(1.0, 11.0), np.zeros(10)))
        with pytest.raises(NoEvents):
            fit_cox(d)

    def test_survival_curve_properties(self):
        d = survival_data(500, [0.7, -0.3], seed=8)
        for risk in ("linear", "network"):
            cfg = NetworkConfig(hidden=(8,), max_epochs=30, batch_size=50)
            model = fit_cox(d, risk=risk, config=cfg, seed=0)
            assert model.baseline_cumhaz[0] > 0 and np.all(np.diff(model.baseline_cumhaz) >= 0)
            assert model.cumulative_baseline_hazard([0.0])[0] == 0.0
            times = np.linspace(0, 5, 25)
            s = model.predict_survival(np.random.default_rng(1).normal(size=(40, 2)) * 3, times)
            assert np.all((s >= 0) & (s <= 1))  # may underflow to 0 at extreme risk
            assert np.all(np.diff(s, axis=1) <= 0)

    def test_network_learns_risk(self):
        d = survival_data(1500, [1.0, 0.0], seed=9)
        tr, te = train_test_split(d, 0.7, seed=0)
        model = fit_cox(tr, risk="network", config=NetworkConfig(hidden=(16,), learning_rate=1e-3,
                                                                  batch_size=50, validation_fraction=0.2),
                        seed=0)
        assert fit_metrics(model, te)["c_index"] > 0.65


# -- competing risks -------------------------------------------------------------------


def cr_data(n, seed, effect=0.0, censor=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    p1 = 1 / (1 + np.exp(-effect * x[:, 0]))
    cause = np.where(rng.random(n) < p1, 1, 2)
    t = rng.exponential(size=n)
    if censor:
        c = rng.exponential(2.0, size=n)
        cause = np.where(t <= c, cause, 0)
        t = np.minimum(t, c)
    return Dataset(_fm(x), CompetingRisksOutcome(t, cause))


class TestCompeting:
    def test_mask_rows(self):
        cuts = np.array([1.0, 2.0, 3.0])
        mask = likelihood_mask([0.5, 2.5, 1.5], [1, 2, 0], cuts)
        assert mask[0].tolist() == [True, False, False, False, False, False, False]
        assert mask[1].tolist() == [False, False, False, False, False, True, False]
        assert mask[2].tolist() == [False, False, True, False, False, True, True]

    def test_null_model_matches_frequencies(self):
        rng = np.random.default_rng(12)
        n = 5000
        cause = np.where(rng.random(n) < 0.4, 1, 2)
        t = rng.exponential(size=n)
        d = Dataset(FeatureMatrix.from_array(np.zeros((n, 1))), CompetingRisksOutcome(t, cause))
        cfg = NetworkConfig(hidden=(4,), learning_rate=0.01, batch_size=100, patience=20)
        model = fit_discrete_cr(d, K=10, config=cfg, seed=0)
        freq = likelihood_mask(t, cause, model.cutpoints).mean(axis=0)
        mass = model.predict_mass(np.zeros((1, 1)))[0]
        assert np.max(np.abs(mass - freq)) < 0.05

    def test_cif_properties(self):
        d = cr_data(600, seed=13, effect=1.5)
        model = fit_discrete_cr(d, K=8, config=NetworkConfig(hidden=(8,), max_epochs=20), seed=0)
        x = np.random.default_rng(2).normal(size=(50, 2)) * 4
        times = np.linspace(0, model.cutpoints[-1] * 1.2, 30)
        c1, c2 = model.predict_cif(x, times, 1), model.predict_cif(x, times, 2)
        for c in (c1, c2):
            assert np.all(np.diff(c, axis=1) >= 0) and np.all((c >= 0) & (c <= 1))
        assert np.all(c1 + c2 <= 1 + 1e-8)
        np.testing.assert_allclose(model.predict_mass(x).sum(axis=1), 1.0, atol=1e-8)

    def test_single_cause(self, rng):
        d = Dataset(_fm(rng.normal(size=(10, 1))), CompetingRisksOutcome(np.arange(1.0, 11.0), np.ones(10, int)))
        with pytest.raises(SingleCauseData):
            fit_discrete_cr(d)

    def test_cutpoints(self):
        cuts = make_cutpoints(np.arange(1.0, 101.0), 4)
        np.testing.assert_allclose(cuts, np.quantile(np.arange(1.0, 101.0), [0.25, 0.5, 0.75, 1.0]))


# -- metrics and registry ------------------------------------------------------------


class _Constant:
    outcome_kind = "binary"

    def predict_probs(self, x):
        return np.full((len(x), 2), 0.5)


class _Perfect:
    outcome_kind = "continuous"

    def __init__(self, y):
        self.y = y

    def predict_scalar(self, x):
        return self.y


class TestMetrics:
    def test_random_scores(self):
        rng = np.random.default_rng(14)
        t = rng.exponential(size=4000)
        e = rng.integers(0, 2, 4000)
        assert abs(concordance_index(t, e, rng.normal(size=4000)) - 0.5) < 0.05

    def test_perfect_ranking(self):
        t = np.arange(1.0, 11.0)
        assert concordance_index(t, np.ones(10), -t) == 1.0

    def test_perfect_regressor(self, rng):
        y = rng.normal(size=20)
        d = Dataset(_fm(rng.normal(size=(20, 1))), ContinuousOutcome(y))
        assert fit_metrics(_Perfect(y), d)["mse"] == 0.0

    def test_constant_classifier(self, rng):
        d = Dataset(_fm(rng.normal(size=(20, 1))), BinaryOutcome(np.arange(20) % 2))
        assert fit_metrics(_Constant(), d)["accuracy"] == 0.5

    def test_mismatch(self, rng):
        d = survival_data(20, [0.5], 1)
        with pytest.raises(OutcomeMismatch):
            fit_metrics(_Constant(), d)


class TestRegistry:
    def test_spec_outcome_check(self):
        with pytest.raises(OutcomeMismatch):
            ModelSpec(kind="mlp").check_outcome("survival")

    def test_spec_round_trip(self):
        spec = ModelSpec(kind="cox", network=NetworkConfig(hidden=(3, 2), dropout=0.1))
        assert ModelSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize("kind,data", [
        ("mlp", "continuous"), ("mlp", "binary"), ("cox", "survival"),
        ("discrete_cr", "competing_risks"), ("lasso", "continuous"), ("lasso", "survival"),
    ])
    def test_save_load(self, tmp_path, kind, data):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(200, 3))
        if data == "continuous":
            d = Dataset(_fm(x), ContinuousOutcome(x[:, 0] + rng.normal(size=200)))
        elif data == "binary":
            d = Dataset(_fm(x), BinaryOutcome((x[:, 0] > 0).astype(int)))
        elif data == "survival":
            d = survival_data(200, [0.5, 0, 0], 2)
        else:
            d = cr_data(200, 3, effect=1.0)
        spec = ModelSpec(kind=kind, network=NetworkConfig(hidden=(4,), max_epochs=5), cutpoints=5)
        model = fit_model(spec, d, seed=0)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        xs = d.features.values
        if data == "continuous":
            np.testing.assert_array_equal(back.predict_scalar(xs), model.predict_scalar(xs))
        elif data == "binary":
            np.testing.assert_array_equal(back.predict_probs(xs), model.predict_probs(xs))
        elif data == "survival" and kind == "cox":
            np.testing.assert_array_equal(back.predict_survival(xs, [0.5, 1.0]),
                                          model.predict_survival(xs, [0.5, 1.0]))
        elif data == "survival":
            np.testing.assert_array_equal(back.risk_score(xs), model.risk_score(xs))
        else:
            np.testing.assert_array_equal(back.predict_cif(xs, [0.5, 1.0]), model.predict_cif(xs, [0.5, 1.0]))
