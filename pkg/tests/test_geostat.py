import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from irmap._validation import FitError
from irmap.geostat import (SHAPES, EmpiricalVariogram, OrdinaryKriging, VariogramModel, deduplicate,
                           empirical_variogram, fit_best_variogram, fit_variogram, gamma, krige_fit,
                           krige_local, krige_predict, krige_predict_many, krige_weights,
                           kriging_matrix)


def _noiseless(model, lags):
    return EmpiricalVariogram(np.asarray(lags), gamma(model, lags), np.full(len(lags), 100),
                              float(max(lags)), len(lags))


class TestGamma:
    def test_spherical_plateau(self):
        m = VariogramModel("spherical", 0.1, 1.0, 0.5)
        assert np.all(gamma(m, [0.5, 0.7, 3.0]) == 1.1)

    @pytest.mark.parametrize("shape", SHAPES)
    def test_zero_lag(self, shape):
        assert gamma(VariogramModel(shape, 0.3, 1.0, 0.5), 0.0) == 0.0

    def test_exponential_practical_range(self):
        m = VariogramModel("exponential", 0.0, 1.0, 0.4)
        assert gamma(m, 0.4) == pytest.approx(1 - math.exp(-3), abs=1e-15)
        assert gamma(m, 0.4) == pytest.approx(0.95021, abs=1e-5)

    @pytest.mark.parametrize("shape", SHAPES)
    def test_matches_formula_oracle(self, shape):
        m = VariogramModel(shape, 0.2, 0.7, 0.3)
        for h in np.linspace(0, 1, 37):
            assert gamma(m, h) == pytest.approx(oracles.semivariance(shape, 0.2, 0.7, 0.3, h), abs=1e-15)

    @pytest.mark.parametrize("kwargs", [{"shape": "cubic"}, {"nugget": -1}, {"sill": -0.1},
                                        {"range": 0.0}])
    def test_invalid_model(self, kwargs):
        base = {"shape": "spherical", "nugget": 0.0, "sill": 1.0, "range": 1.0}
        with pytest.raises(ValueError):
            VariogramModel(**{**base, **kwargs})

    def test_round_trip(self):
        m = VariogramModel("gaussian", 0.01, 2.0, 0.25)
        assert VariogramModel.from_dict(m.to_dict()) == m


class TestEmpiricalVariogram:
    def test_constant_field(self, rng):
        emp = empirical_variogram(rng.uniform(size=(50, 2)), np.full(50, 3.0))
        assert np.all(emp.gamma[emp.usable()] == 0.0)

    def test_two_points(self):
        X = np.array([[0.0, 0.0], [0.3, 0.4]])
        emp = empirical_variogram(X, [0.0, 2.0], n_bins=5, max_lag=0.5)
        assert emp.pairs.sum() == 1
        k = int(np.flatnonzero(emp.pairs)[0])
        assert emp.gamma[k] == 2.0 and emp.h[k] == pytest.approx(0.5)

    def test_white_noise_level(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(size=(500, 2))
        z = rng.normal(0, 0.5, 500)
        emp = empirical_variogram(X, z)
        big = emp.pairs >= 100
        assert big.sum() >= 10
        assert np.all(np.abs(emp.gamma[big] / 0.25 - 1) < 0.15)

    def test_pair_count(self, rng):
        X = rng.uniform(size=(40, 2))
        emp = empirical_variogram(X, rng.normal(size=40), max_lag=10.0)
        assert emp.pairs.sum() == 40 * 39 // 2


class TestFitVariogram:
    def test_recovers_spherical(self):
        true = VariogramModel("spherical", 0.1, 1.0, 0.5)
        fit = fit_variogram(_noiseless(true, np.linspace(0.05, 0.75, 10)), "spherical")
        assert fit.nugget == pytest.approx(0.1, rel=0.01)
        assert fit.sill == pytest.approx(1.0, rel=0.01)
        assert fit.range == pytest.approx(0.5, rel=0.01)

    @pytest.mark.parametrize("shape", ["exponential", "gaussian"])
    def test_recovers_other_shapes(self, shape):
        true = VariogramModel(shape, 0.05, 0.8, 0.4)
        fit = fit_variogram(_noiseless(true, np.linspace(0.03, 0.6, 15)), shape)
        lags = np.linspace(0.01, 0.6, 50)
        assert np.allclose(gamma(fit, lags), gamma(true, lags), atol=1e-4)

    def test_all_zero(self):
        emp = _noiseless(VariogramModel("spherical", 0, 0, 1), np.linspace(0.1, 1, 8))
        fit = fit_variogram(emp, "spherical")
        assert (fit.nugget, fit.sill) == (0.0, 0.0)
        assert fit.range > 0

    def test_flat_behaves_as_nugget(self):
        emp = _noiseless(VariogramModel("pure_nugget", 0.4, 0.0, 1.0), np.linspace(0.1, 1, 10))
        fit = fit_variogram(emp, "spherical")
        assert np.allclose(gamma(fit, emp.h), 0.4, atol=1e-4)

    def test_pure_nugget_shape(self):
        emp = _noiseless(VariogramModel("pure_nugget", 0.4, 0.0, 1.0), np.linspace(0.1, 1, 10))
        fit = fit_variogram(emp, "pure_nugget")
        assert fit.nugget == pytest.approx(0.4) and fit.sill == 0.0

    def test_best_shape_wins(self):
        true = VariogramModel("gaussian", 0.0, 1.0, 0.5)
        model, loss = fit_best_variogram(_noiseless(true, np.linspace(0.05, 0.8, 12)))
        assert model.shape == "gaussian" and loss < 1e-10

    def test_too_few_bins(self):
        with pytest.raises(FitError):
            fit_variogram(_noiseless(VariogramModel("spherical", 0, 1, 1), [0.1, 0.2]))

    @pytest.mark.parametrize("seed", range(3))
    def test_fitted_models_nondecreasing(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(150, 2))
        emp = empirical_variogram(X, np.sin(4 * X[:, 0]) + 0.1 * rng.normal(size=150))
        grid = np.linspace(0, 2, 1000)
        for shape in SHAPES:
            assert np.all(np.diff(gamma(fit_variogram(emp, shape), grid)) >= 0)


MODEL = VariogramModel("spherical", 0.0, 1.0, 0.6)


class TestKrigingSystem:
    def test_single_point(self):
        system = krige_fit([[0.3, 0.3]], [4.2], MODEL)
        w, mu, _ = krige_weights(system, [[0.9, 0.1], [0.0, 0.0]])
        assert np.all(w == 1.0)
        assert krige_predict(system, [0.9, 0.9])[0] == 4.2

    def test_two_point_matrix(self):
        X = np.array([[0.0, 0.0], [0.3, 0.4]])
        g12 = gamma(MODEL, 0.5)
        want = np.array([[0.0, g12, 1.0], [g12, 0.0, 1.0], [1.0, 1.0, 0.0]])
        assert np.array_equal(kriging_matrix(X, MODEL), want)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("shape", ["spherical", "exponential", "gaussian"])
    def test_dense_solve_oracle(self, seed, shape):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(3, 2))
        z = rng.normal(size=3)
        q = rng.uniform(size=2)
        model = VariogramModel(shape, 0.05, 1.0, 0.7)
        w_o, mu_o, est_o, var_o = oracles.ordinary_kriging(X, z, q, shape, 0.05, 1.0, 0.7)
        system = krige_fit(X, z, model)
        w, mu, _ = krige_weights(system, [q])
        est, var = krige_predict(system, q)
        assert np.allclose(w[0], w_o, rtol=0, atol=1e-8)
        assert mu[0] == pytest.approx(mu_o, abs=1e-8)
        assert est == pytest.approx(est_o, abs=1e-8)
        assert var == pytest.approx(var_o, abs=1e-8)

    def test_exact_at_data(self, rng):
        X = rng.uniform(size=(60, 2))
        z = rng.normal(size=60)
        rate, var = krige_predict_many(krige_fit(X, z, MODEL), X)
        assert np.allclose(rate, z, rtol=0, atol=1e-8)
        assert np.all(np.abs(var) <= 1e-8)

    def test_constant_field(self, rng):
        X = rng.uniform(size=(30, 2))
        rate, _ = krige_predict_many(krige_fit(X, np.full(30, 1.7), MODEL), rng.uniform(size=(100, 2)))
        assert np.allclose(rate, 1.7, rtol=0, atol=1e-10)

    def test_duplicates_merged(self):
        X = np.array([[0.1, 0.1], [0.1, 0.1], [0.8, 0.2], [0.4, 0.9]])
        Xd, zd = deduplicate(X, np.array([1.0, 3.0, 5.0, 7.0]))
        assert len(Xd) == 3 and 2.0 in zd
        system = krige_fit(X, [1.0, 3.0, 5.0, 7.0], MODEL)
        assert not system.jittered
        assert krige_predict(system, [0.1, 0.1])[0] == pytest.approx(2.0, abs=1e-10)

    def test_singular_system_gets_jitter(self):
        # pure nugget: every off-diagonal entry equal, the system is rank deficient
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        system = krige_fit(X, [1.0, 2.0, 3.0, 4.0], VariogramModel("pure_nugget", 0.0, 0.0, 1.0))
        assert system.jittered

    def test_local_matches_global_when_all_neighbors(self, rng):
        X = rng.uniform(size=(25, 2))
        z = rng.normal(size=25)
        Q = rng.uniform(size=(10, 2))
        r1, v1 = krige_local(X, z, MODEL, Q, n_neighbors=25)
        r2, v2 = krige_predict_many(krige_fit(X, z, MODEL), Q)
        assert np.allclose(r1, r2, atol=1e-10) and np.allclose(v1, v2, atol=1e-10)


class TestKrigingProperties:
    @given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.floats(0.1, 2.0))
    def test_unbiased_and_nonnegative(self, seed, nugget, rng_):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(int(rng.integers(3, 20)), 2))
        model = VariogramModel("exponential", nugget, 1.0, rng_)
        system = krige_fit(X, rng.normal(size=len(X)), model)
        Q = rng.uniform(-0.2, 1.2, size=(50, 2))
        w, _, _ = krige_weights(system, Q)
        assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-10)
        assert np.all(krige_predict_many(system, Q)[1] >= -1e-10)

    @given(st.integers(0, 10_000), st.floats(-50, 50))
    def test_shift_equivariance(self, seed, c):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(10, 2))
        z = rng.normal(size=10)
        Q = rng.uniform(size=(20, 2))
        a = krige_predict_many(krige_fit(X, z, MODEL), Q)[0]
        b = krige_predict_many(krige_fit(X, z + c, MODEL), Q)[0]
        # exact in real arithmetic; weights sum to 1 only to rounding
        assert np.allclose(b, a + c, rtol=0, atol=1e-9 * max(1, abs(c)))


class TestOrdinaryKriging:
    def test_fixed_parameters(self, rng):
        X = rng.uniform(size=(20, 2))
        y = rng.normal(size=20)
        est = OrdinaryKriging(variogram_parameters={"nugget": 0.0, "sill": 1.0, "range": 0.6})
        assert np.allclose(est.fit(X, y).predict(X), y, atol=1e-8)
        assert est.variogram_ == MODEL

    def test_variance_output(self, rng):
        X = rng.uniform(size=(80, 2))
        y = np.sin(3 * X[:, 0]) + X[:, 1]
        pred, var = OrdinaryKriging("auto").fit(X, y).predict(X[:5] + 0.01, return_variance=True)
        assert pred.shape == var.shape == (5,)
        assert np.all(var >= -1e-10)

    def test_local_neighbourhood(self, rng):
        X = rng.uniform(size=(80, 2))
        y = X[:, 0] + X[:, 1]
        est = OrdinaryKriging(n_neighbors=16).fit(X, y)
        assert est.score(X, y) > 0.999

    def test_clone(self):
        est = OrdinaryKriging("gaussian", n_bins=10)
        assert clone(est).get_params() == est.get_params()
