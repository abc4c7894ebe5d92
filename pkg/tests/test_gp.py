import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodprior import gp
from periodprior.kernels import Periodic, Product, SquaredExp, Sum, eval_kernel
from periodprior.timeseries import from_arrays

from oracles import gauss_jordan_inverse, gaussian_logpdf_brute, gram


def random_case(rng, M):
    t = np.sort(rng.uniform(0, 10, M))
    while np.any(np.diff(t) < 1e-3):
        t = np.sort(rng.uniform(0, 10, M))
    spec = Sum(Product(Periodic(rng.uniform(0.5, 2), rng.uniform(1, 5), rng.uniform(0.3, 2)),
                       SquaredExp(1.0, rng.uniform(2, 10))),
               SquaredExp(rng.uniform(0.1, 1), rng.uniform(0.5, 3)))
    return spec, rng.uniform(0.1, 1.0), from_arrays(t, rng.normal(0, 1.5, M))


def naive_predict(spec, sigma_e, data, ts):
    k = lambda a, b: eval_kernel(spec, a, b)  # noqa: E731
    K = gram(k, data.times, data.times) + sigma_e ** 2 * np.eye(data.M)
    Kinv = gauss_jordan_inverse(K)
    kt = gram(k, [ts], data.times)[0]
    return float(kt @ Kinv @ data.values), float(k(ts, ts) - kt @ Kinv @ kt)


class TestFit:
    def test_scalar_alpha(self):
        fit = gp.fit_gp(Periodic(2.0, 1.0, 1.0), 0.5, from_arrays([0.0], [4.5]))
        np.testing.assert_allclose(fit.alpha, [2.0], rtol=1e-15)

    def test_zero_data_zero_alpha(self):
        fit = gp.fit_gp(Periodic(1.0, 2.0, 1.0), 0.3, from_arrays([0, 1, 2.5], [0, 0, 0]))
        np.testing.assert_array_equal(fit.alpha, 0.0)

    def test_alpha_matches_gauss_jordan(self):
        spec, se, data = random_case(np.random.default_rng(4), 4)
        fit = gp.fit_gp(spec, se, data)
        K = gram(lambda a, b: eval_kernel(spec, a, b), data.times, data.times) + se ** 2 * np.eye(4)
        np.testing.assert_allclose(fit.alpha, gauss_jordan_inverse(K) @ data.values, rtol=1e-10)

    def test_fit_invariants(self):
        spec, se, data = random_case(np.random.default_rng(5), 6)
        fit = gp.fit_gp(spec, se, data)
        K = gram(lambda a, b: eval_kernel(spec, a, b), data.times, data.times) + se ** 2 * np.eye(6)
        recon = fit.chol @ fit.chol.T
        assert np.linalg.norm(recon - K) <= 1e-8 * np.linalg.norm(K)
        assert np.linalg.norm(K @ fit.alpha - data.values) <= 1e-8 * np.linalg.norm(data.values)
        assert np.allclose(np.triu(fit.chol, 1), 0)

    def test_negative_noise(self):
        with pytest.raises(gp.GPError):
            gp.fit_gp(SquaredExp(1, 1), -1.0, from_arrays([0, 1], [0, 1]))


class TestPredict:
    def test_noiseless_interpolation(self):
        data = from_arrays([0.0, 0.7, 1.9, 3.2], [0.3, -1.0, 2.0, 0.5])
        fit = gp.fit_gp(SquaredExp(1.0, 0.8), 0.0, data)
        mean, var = gp.gp_predict(fit, data.times)
        np.testing.assert_allclose(mean, data.values, atol=1e-6)
        assert np.all(var <= 1e-8 * 1.0)

    def test_far_away_reverts_to_prior(self):
        fit = gp.fit_gp(SquaredExp(2.0, 0.5), 0.1, from_arrays([0.0, 1.0], [1.0, -1.0]))
        mean, var = gp.gp_predict(fit, 100.0)
        assert isinstance(mean, float)
        assert abs(mean) < 1e-6
        assert var == pytest.approx(2.0, abs=1e-6)

    def test_three_point_naive_oracle(self):
        spec, se, data = random_case(np.random.default_rng(6), 3)
        fit = gp.fit_gp(spec, se, data)
        for ts in (0.1, 4.2, 11.0):
            m, v = gp.gp_predict(fit, ts)
            mo, vo = naive_predict(spec, se, data, ts)
            assert m == pytest.approx(mo, abs=1e-8)
            assert v == pytest.approx(vo, abs=1e-8)

    def test_variance_independent_of_sign_of_y(self):
        spec, se, data = random_case(np.random.default_rng(7), 6)
        grid = np.linspace(-1, 11, 25)
        _, v1 = gp.gp_predict(gp.fit_gp(spec, se, data), grid)
        _, v2 = gp.gp_predict(gp.fit_gp(spec, se, data.replace(values=-data.values)), grid)
        np.testing.assert_array_equal(v1, v2)

    def test_variance_clamp_counted(self, monkeypatch):
        data = from_arrays([0.0, 1.0, 2.0], [1.0, 1.0, 0.0])
        fit = gp.fit_gp(SquaredExp(1.0, 3.0), 0.0, data)
        # understate k(t, t) so the variance at training inputs goes negative
        monkeypatch.setattr(gp.kern, "prior_variance", lambda spec: 1.0 - 1e-6)
        before = gp.CLAMP_COUNTER["n"]
        _, var = gp.gp_predict(fit, data.times)
        np.testing.assert_array_equal(var, 0.0)
        assert gp.CLAMP_COUNTER["n"] == before + 3


class TestLogMarginal:
    def test_standard_normal(self):
        val = gp.log_marginal_likelihood(SquaredExp(0.75, 1.0), 0.5, from_arrays([0.0], [0.0]))
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_scalar_gaussian(self):
        v, y = 2.0 + 0.3 ** 2, 1.7
        val = gp.log_marginal_likelihood(Periodic(2.0, 1, 1), 0.3, from_arrays([5.0], [y]))
        assert val == pytest.approx(-0.5 * (y * y / v + math.log(v) + math.log(2 * math.pi)),
                                    abs=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_five_point_cofactor_oracle(self, seed):
        spec, se, data = random_case(np.random.default_rng(100 + seed), 5)
        K = gram(lambda a, b: eval_kernel(spec, a, b), data.times, data.times) + se ** 2 * np.eye(5)
        assert gp.log_marginal_likelihood(spec, se, data) == pytest.approx(
            gaussian_logpdf_brute(data.values, K), abs=1e-10)

    def test_failure_is_minus_inf(self):
        data = from_arrays([0.0, 1.0], [1.0, -1.0])
        overflow = Sum(SquaredExp(1e308, 1.0), SquaredExp(1e308, 1.0))
        assert gp.log_marginal_likelihood(overflow, 0.1, data) == -math.inf
        # a negative-definite matrix cannot be factorised
        assert gp._log_normal_zero(-np.eye(2), data.values, 0.1) == -math.inf

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_hyper_closure_matches_direct(self, seed, M):
        rng = np.random.default_rng(seed)
        _, _, data = random_case(rng, M)
        for fam, (_, names) in gp.FAMILIES.items():
            hm = gp.HyperModel(fam)
            theta = rng.uniform(0.3, 3.0, len(hm.names))
            spec, se = hm.build(theta)
            assert hm.log_likelihood_fn(data)(theta) == pytest.approx(
                gp.log_marginal_likelihood(spec, se, data), abs=1e-10)


class TestHyperModel:
    def test_names(self):
        assert gp.HyperModel("periodic").names == ("A", "P", "L", "sigma_e")
        assert gp.HyperModel("periodic", 0.5).names == ("A", "P", "L")
        assert gp.HyperModel("quasi_periodic_sum").names == ("s1", "P", "L", "s2", "l", "sigma_e")

    def test_invalid_theta_gives_minus_inf(self):
        f = gp.HyperModel("periodic").log_likelihood_fn(from_arrays([0, 1, 2], [0, 1, 0]))
        assert f([1.0, -2.0, 1.0, 0.1]) == -math.inf
        assert f([1.0, 2.0, 1.0, -0.1]) == -math.inf

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            gp.HyperModel("matern")
