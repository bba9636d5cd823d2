import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FunctionToy, IncidenceToy, LinearToy, SurvivalToy, cpf_enumeration

from cpfknockoff.data import ContinuousOutcome, Dataset, FeatureMatrix
from cpfknockoff.errors import (
    MissingTimeGrid,
    ModelDimensionMismatch,
    NonFinitePrediction,
    OddLength,
    PathMissing,
    ValidationError,
)
from cpfknockoff.models import fit_mlp
from cpfknockoff.models.lasso import LassoModel
from cpfknockoff.models.network import NetworkConfig
from cpfknockoff.statistics import (
    CpfConfig,
    ImportanceVector,
    cpf_importance,
    cpf_importance_survival,
    cpf_statistics,
    default_time_grid,
    importance,
    lcd_statistics,
    lsm_statistics,
    read_stats_csv,
    write_stats_csv,
)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"J": 0}, {"n_sub": 0}, {"delta": 0.0}, {"delta": -1.0},
                                    {"time_grid": (2.0, 1.0)}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            CpfConfig(**kw)

    def test_default_grid_quintiles(self):
        times = np.arange(1.0, 101.0)
        np.testing.assert_allclose(default_time_grid(times), np.quantile(times, [0.2, 0.4, 0.6, 0.8]))


class TestCpfImportance:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5]), st.sampled_from([0.05, 0.1, 0.5]))
    def test_linear_reduction(self, seed, J, delta):
        rng = np.random.default_rng(seed)
        beta = rng.normal(scale=2.0, size=6)
        x = rng.normal(size=(150, 6))
        cfg = CpfConfig(J=J, n_sub=40, delta=delta, seed=seed)
        u = cpf_importance(LinearToy(beta), x, cfg).u
        assert np.max(np.abs(u - 40 * beta**2)) <= 1e-8

    def test_binary_branch(self, rng):
        beta = np.array([1.5, -2.0, 0.7, 0.3])
        vals = rng.normal(size=(60, 4))
        vals[:, 1] = rng.integers(0, 2, 60)
        x = FeatureMatrix.from_array(vals, kinds=["continuous", "binary", "continuous", "continuous"])
        u = cpf_importance(LinearToy(beta), x, CpfConfig(n_sub=25)).u
        np.testing.assert_allclose(u, 25 * beta**2, rtol=1e-12)

    def test_knockoff_of_binary_uses_binary_branch(self):
        # a model that is quadratic in column 3: the binary branch gives
        # sum (1 - 0)^2 = n_sub, the continuous branch would not
        grid = np.linspace(-2, 2, 10)
        vals = np.column_stack([np.arange(10) % 2, grid / 2, grid, grid])
        x = FeatureMatrix.from_array(vals, kinds=["binary", "continuous", "continuous", "continuous"])
        model = FunctionToy(lambda r: r[2] ** 2, 4)
        u = cpf_importance(model, x, CpfConfig(n_sub=10)).u
        assert u[2] == 10.0

    def test_brute_force_quadratic(self):
        x = np.array([[0.3, -1.2], [1.1, 0.4], [-0.7, 2.0]])
        cfg = CpfConfig(J=2, n_sub=3, delta=0.1, seed=0)
        model = FunctionToy(lambda r: r[0] ** 2, 2)
        u = cpf_importance(model, x, cfg).u
        # hand value: quotient (2v)^2 / 2 per row and percentile
        v = [np.quantile(x[:, 0], 1 / 3), np.quantile(x[:, 0], 2 / 3)]
        hand = 3 * sum((2 * vi) ** 2 / 2 for vi in v)
        assert abs(u[0] - hand) < 1e-12
        assert u[1] == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 2), st.integers(1, 3), st.booleans())
    def test_matches_enumeration(self, seed, J, n, with_binary):
        rng = np.random.default_rng(seed)
        vals = rng.normal(size=(n, 4))
        kinds = ["continuous"] * 4
        binary = ()
        if with_binary:
            vals[:, 0] = rng.integers(0, 2, n)
            kinds[0] = "binary"
            binary = (0, 2)
        x = FeatureMatrix.from_array(vals, kinds=kinds)
        a = rng.normal(size=4)

        def fn(r):
            return float(np.sin(r @ a) + r[1] * r[3] + 0.5 * r[0] ** 3)

        u = cpf_importance(FunctionToy(fn, 4), x, CpfConfig(J=J, n_sub=n, delta=0.2, seed=seed)).u
        ref = cpf_enumeration(lambda r: [fn(np.array(r))], vals.tolist(), J, 0.2, binary)
        np.testing.assert_allclose(u, ref, rtol=0, atol=1e-12)

    def test_masked_network(self, rng):
        x = rng.normal(size=(200, 4))
        y = x[:, 0] + x[:, 1] ** 2 + rng.normal(scale=0.1, size=200)
        model = fit_mlp(Dataset(FeatureMatrix.from_array(x), ContinuousOutcome(y)),
                        NetworkConfig(hidden=(8,), max_epochs=20), seed=1)
        model.net.weights[0][2, :] = 0.0
        u = cpf_importance(model, x, CpfConfig(n_sub=50)).u
        assert u[2] == 0.0
        assert u[0] > 0 and u[1] > 0

    def test_deterministic(self, rng):
        x = rng.normal(size=(300, 4))
        model = FunctionToy(lambda r: float(np.tanh(r.sum())), 4)
        a = cpf_importance(model, x, CpfConfig(n_sub=30, seed=4)).u
        b = cpf_importance(model, x, CpfConfig(n_sub=30, seed=4)).u
        np.testing.assert_array_equal(a, b)

    def test_subsample_larger_than_n(self, rng):
        x = rng.normal(size=(5, 2))
        u = cpf_importance(LinearToy([1.0, 2.0]), x, CpfConfig(n_sub=20)).u
        np.testing.assert_allclose(u, [20.0, 80.0])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ModelDimensionMismatch):
            cpf_importance(LinearToy([1.0, 2.0, 3.0]), rng.normal(size=(10, 2)))

    def test_non_finite_prediction(self, rng):
        model = FunctionToy(lambda r: np.inf if r[1] > 0 else 0.0, 2)
        with pytest.raises(NonFinitePrediction):
            cpf_importance(model, rng.normal(size=(10, 2)))


class TestSurvivalImportance:
    def test_needs_grid(self, rng):
        with pytest.raises(MissingTimeGrid):
            cpf_importance_survival(SurvivalToy(lambda r: r[0], 2), rng.normal(size=(5, 2)), CpfConfig())

    def test_four_term_enumeration(self):
        x = np.array([[0.2, -0.4], [1.3, 0.9]])
        model = SurvivalToy(lambda r: 0.8 * r[0] + 0.3 * r[0] * r[1], 2)
        times = (0.5, 1.5)
        cfg = CpfConfig(J=1, n_sub=2, delta=0.1, time_grid=times)
        u = cpf_importance_survival(model, x, cfg).u
        ref = cpf_enumeration(lambda r: model.curve(r, times), x.tolist(), 1, 0.1)
        np.testing.assert_allclose(u, ref, rtol=0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 2), st.integers(1, 3), st.integers(1, 2))
    def test_incidence_enumeration(self, seed, J, n, n_t):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 4))
        a = rng.normal(size=4)
        model = IncidenceToy(lambda r: float(r @ a + r[0] * r[1]), 4)
        times = tuple(sorted(rng.uniform(0.1, 3.0, n_t) + np.arange(n_t)))
        cfg = CpfConfig(J=J, n_sub=n, delta=0.3, time_grid=times, cause=2, seed=seed)
        u = cpf_importance_survival(model, x, cfg).u
        ref = cpf_enumeration(lambda r: model.curve(r, times, 2), x.tolist(), J, 0.3)
        np.testing.assert_allclose(u, ref, rtol=0, atol=1e-12)

    def test_ignored_feature(self, rng):
        model = SurvivalToy(lambda r: r[0], 3)
        u = cpf_importance_survival(model, rng.normal(size=(40, 3)),
                                    CpfConfig(n_sub=10, time_grid=(1.0, 2.0))).u
        assert u[1] == 0.0 and u[2] == 0.0 and u[0] > 0

    def test_single_time_matches_scalar(self, rng):
        x = rng.normal(size=(50, 2))
        surv = SurvivalToy(lambda r: 0.5 * r[0] - r[1], 2)
        scalar = FunctionToy(lambda r: surv.curve(r, [1.3])[0], 2)
        cfg = CpfConfig(n_sub=20, time_grid=(1.3,), seed=7)
        np.testing.assert_allclose(cpf_importance_survival(surv, x, cfg).u,
                                   cpf_importance(scalar, x, cfg).u, rtol=1e-12)

    def test_dispatch(self, rng):
        x = rng.normal(size=(30, 2))
        cfg = CpfConfig(n_sub=10, time_grid=(1.0,))
        model = SurvivalToy(lambda r: r[0], 2)
        np.testing.assert_array_equal(importance(model, x, cfg).u, cpf_importance_survival(model, x, cfg).u)


class TestStatistics:
    def test_cpf_example(self):
        st_ = cpf_statistics(ImportanceVector([4.0, 0.0, 1.0, 1.0]))
        np.testing.assert_array_equal(st_.w, [3.0, -1.0])
        assert st_.statistic_kind == "cpf"

    def test_cpf_symmetric(self):
        np.testing.assert_array_equal(cpf_statistics([2.0, 5.0, 2.0, 5.0]).w, [0.0, 0.0])

    def test_cpf_swap_flips_sign(self):
        u = np.array([4.0, 0.5, 1.0, 2.0])
        swapped = u.copy()
        swapped[[0, 2]] = swapped[[2, 0]]
        a, b = cpf_statistics(u).w, cpf_statistics(swapped).w
        assert b[0] == -a[0] and b[1] == a[1]

    def test_cpf_odd(self):
        with pytest.raises(OddLength):
            cpf_statistics([1.0, 2.0, 3.0])

    def _lasso(self, coef, entry=None):
        coef = np.asarray(coef, dtype=float)
        lambdas = path = None
        if entry is not None:
            lambdas = np.array(sorted(set(entry) | {0.0}, reverse=True))
            path = np.array([[1.0 if e >= lam and e > 0 else 0.0 for e in entry] for lam in lambdas])
        return LassoModel(coef=coef, intercept=0.0, lam=0.1, family="gaussian",
                          lambdas=lambdas, path_coefs=path)

    def test_lcd(self):
        np.testing.assert_allclose(lcd_statistics(self._lasso([1.5, 0.0, 0.5, 0.1]), 2).w, [1.0, -0.1])
        np.testing.assert_array_equal(lcd_statistics(self._lasso([0.0] * 4), 2).w, [0.0, 0.0])
        assert lcd_statistics(self._lasso([-2.0, 1.0]), 1).w[0] == 1.0

    def test_lsm(self):
        assert lsm_statistics(self._lasso([1, 1], entry=[0.8, 0.2]), 1).w[0] == 0.8
        assert lsm_statistics(self._lasso([1, 1], entry=[0.2, 0.8]), 1).w[0] == -0.8
        assert lsm_statistics(self._lasso([1, 1], entry=[0.5, 0.5]), 1).w[0] == 0.0

    def test_lsm_needs_path(self):
        with pytest.raises(PathMissing):
            lsm_statistics(self._lasso([1.0, 0.0]), 1)

    def test_csv_round_trip(self, tmp_path):
        stats = cpf_statistics([4.0, 0.0, 1.0, 1.0])
        write_stats_csv(tmp_path / "w.csv", stats, ["a", "b"])
        names, back = read_stats_csv(tmp_path / "w.csv")
        assert names == ["a", "b"]
        np.testing.assert_array_equal(back.w, stats.w)
        header = (tmp_path / "w.csv").read_text().splitlines()[0]
        assert header == "feature,U_original,U_knockoff,W,statistic_kind"
