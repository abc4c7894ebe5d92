import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from periodprior import ais
from periodprior.kernels import SquaredExp
from periodprior.gp import fit_gp, gp_predict
from periodprior.timeseries import from_arrays

from oracles import binomial_band, sorted_scan_quantile

INF = math.inf


def free_space(D):
    return ais.ParamSpace([f"x{i}" for i in range(D)], [(-INF, INF)] * D)


def make_set(x, w, log_target=None):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    lw = np.log(np.asarray(w, dtype=float))
    lt = lw if log_target is None else np.asarray(log_target, dtype=float)
    return ais.WeightedSampleSet(tuple(f"x{i}" for i in range(x.shape[1])), x, lw, lt,
                                 np.zeros(len(x), dtype=int))


def gaussian_target(mean, cov):
    dist = stats.multivariate_normal(mean, cov)
    return lambda theta: float(dist.logpdf(theta))


class TestParamSpace:
    def test_validation(self):
        with pytest.raises(ValueError):
            ais.ParamSpace(["a"], [(1.0, 0.0)])
        with pytest.raises(ValueError):
            ais.ParamSpace(["a", "b"], [(0.0, 1.0)])
        with pytest.raises(ValueError):
            ais.ParamSpace(["a"], [(-1.0, 1.0)], ["log"])
        with pytest.raises(ValueError):
            ais.ParamSpace(["a"], [(0.0, 1.0)], ["logit"])

    def test_transforms_round_trip(self):
        sp = ais.ParamSpace(["a", "b"], [(0.0, 10.0), (-1.0, 1.0)], ["log", "identity"])
        theta = np.array([[2.5, -0.3], [0.1, 0.9]])
        np.testing.assert_allclose(sp.from_unconstrained(sp.to_unconstrained(theta)), theta,
                                   rtol=1e-15)
        np.testing.assert_allclose(sp.log_jacobian(sp.to_unconstrained(theta)),
                                   np.log(theta[:, 0]))

    def test_in_bounds(self):
        sp = ais.ParamSpace(["a"], [(0.0, 1.0)])
        np.testing.assert_array_equal(sp.in_bounds(np.array([[0.5], [1.5], [-0.1]])),
                                      [True, False, False])


class TestProposal:
    def test_rejects_non_pd(self):
        with pytest.raises(ValueError):
            ais.ProposalState([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_logpdf_matches_scipy(self):
        q = ais.ProposalState([1.0, -1.0], [[2.0, 0.3], [0.3, 0.5]])
        z = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_allclose(q.logpdf(z), stats.multivariate_normal(q.mean, q.cov).logpdf(z),
                                   rtol=1e-12)


class TestAdapt:
    def test_two_point_moments(self):
        q = ais.adapt_proposal([[0.0], [2.0]], [0.0, 0.0], ridge=1e-3)
        assert q.mean[0] == pytest.approx(1.0)
        assert q.cov[0, 0] == pytest.approx(1.0 + 1e-3)

    def test_degenerate_weight_moves_mean_keeps_cov(self):
        prev = ais.ProposalState([0.0, 0.0], np.diag([4.0, 9.0]))
        q = ais.adapt_proposal([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [-INF, 0.0, -INF], prev)
        np.testing.assert_array_equal(q.mean, [3.0, 4.0])
        np.testing.assert_array_equal(q.cov, prev.cov)

    def test_no_finite_weight(self):
        with pytest.raises(ais.AISError):
            ais.adapt_proposal([[0.0], [1.0]], [-INF, -INF])

    def test_weighted_cloud_brute_force(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(40, 3))
        lw = rng.normal(size=40)
        q = ais.adapt_proposal(z, lw, ridge=1e-3)
        w = [math.exp(v) for v in lw]
        tot = sum(w)
        mean = [sum(wi * zi[d] for wi, zi in zip(w, z)) / tot for d in range(3)]
        cov = [[sum(wi * (zi[a] - mean[a]) * (zi[b] - mean[b]) for wi, zi in zip(w, z)) / tot
                for b in range(3)] for a in range(3)]
        tr = sum(cov[d][d] for d in range(3))
        expected = np.array(cov) + 1e-3 * tr / 3 * np.eye(3)
        np.testing.assert_allclose(q.mean, mean, rtol=1e-12)
        np.testing.assert_allclose(q.cov, expected, rtol=1e-10)

    def test_eigen_floor(self):
        z = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        q = ais.adapt_proposal(z, [0.0, 0.0, 0.0], ridge=0.0)
        vals = np.linalg.eigvalsh(q.cov)
        # rank-one cloud: weighted trace 4/3, one zero eigenvalue lifted to the floor
        assert vals.min() == pytest.approx(ais.EIG_FLOOR * 4 / 3, rel=1e-6)

    def test_shrink_floor_relative_to_previous(self):
        prev = ais.ProposalState([0.0], [[1.0]])
        z = np.array([[0.0], [1e-3], [-1e-3]])
        q = ais.adapt_proposal(z, [0.0, 0.0, 0.0], prev, min_shrink=0.3)
        assert q.cov[0, 0] == pytest.approx(0.3)
        q0 = ais.adapt_proposal(z, [0.0, 0.0, 0.0], prev, min_shrink=0.0)
        assert q0.cov[0, 0] < 1e-5


class TestRun:
    def test_target_equals_proposal_uniform_weights(self):
        init = ais.ProposalState([0.5, -1.0], [[2.0, 0.4], [0.4, 1.0]])
        target = lambda th: float(init.logpdf(th)[0])  # noqa: E731
        for T, mode in ((1, "local"), (5, "none")):
            res = ais.run_ais(target, free_space(2), init, 200, T, seed=3, adapt=mode)
            assert np.max(np.abs(res.weights - 1.0 / (200 * T))) < 1e-10

    def test_one_d_gaussian(self):
        res = ais.run_ais(gaussian_target([3.0], [[1.0]]), free_space(1),
                          ais.ProposalState([0.0], [[25.0]]), 500, 10, seed=1)
        assert ais.summarize(res, 0).mmse_mean == pytest.approx(3.0, abs=0.1)

    def test_deterministic(self):
        args = (gaussian_target([1.0], [[0.5]]), free_space(1), ais.ProposalState([0.0], [[9.0]]),
                100, 5)
        a, b = ais.run_ais(*args, seed=11), ais.run_ais(*args, seed=11)
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.log_weights.tobytes() == b.log_weights.tobytes()
        c = ais.run_ais(*args, seed=12)
        assert a.samples.tobytes() != c.samples.tobytes()

    def test_parallel_map_same_result(self):
        from concurrent.futures import ThreadPoolExecutor
        args = (gaussian_target([1.0, 2.0], np.eye(2)), free_space(2),
                ais.ProposalState([0.0, 0.0], 9 * np.eye(2)), 64, 4)
        with ThreadPoolExecutor(4) as pool:
            a = ais.run_ais(*args, seed=5, map_fn=pool.map)
        b = ais.run_ais(*args, seed=5)
        assert a.log_weights.tobytes() == b.log_weights.tobytes()

    def test_out_of_bounds_zero_weight(self):
        sp = ais.ParamSpace(["x"], [(0.0, 1.0)])
        res = ais.run_ais(lambda th: 0.0, sp, ais.ProposalState([0.5], [[1.0]]), 200, 1, seed=0)
        outside = ~sp.in_bounds(res.samples)
        assert outside.any()
        assert np.all(res.log_weights[outside] == -INF)
        assert np.all(res.weights[outside] == 0)

    def test_all_zero_weights_abort(self):
        sp = ais.ParamSpace(["x"], [(0.0, 1.0)])
        with pytest.raises(ais.AISError, match="iteration 0"):
            ais.run_ais(lambda th: -INF, sp, ais.ProposalState([0.5], [[1.0]]), 10, 2, seed=0)

    def test_log_transform_keeps_natural_density(self):
        # Exp(1) target on (0, inf) sampled in log space must keep mean 1
        sp = ais.ParamSpace(["x"], [(0.0, INF)], ["log"])
        res = ais.run_ais(lambda th: -th[0], sp, ais.ProposalState([0.0], [[4.0]]), 2000, 8,
                          seed=4)
        assert ais.summarize(res, "x").mmse_mean == pytest.approx(1.0, abs=0.05)

    def test_nan_target_treated_as_zero_weight(self):
        res = ais.run_ais(lambda th: math.nan if th[0] > 0 else 0.0,
                          ais.ParamSpace(["x"], [(-5.0, 5.0)]),
                          ais.ProposalState([0.0], [[1.0]]), 50, 1, seed=2)
        assert np.all(res.weights[res.samples[:, 0] > 0] == 0)

    def test_ess_trace_and_bounds(self):
        res = ais.run_ais(gaussian_target([0.0], [[1.0]]), free_space(1),
                          ais.ProposalState([2.0], [[4.0]]), 100, 6, seed=9)
        assert len(res.ess_trace) == 6
        assert 1.0 <= ais.ess(res) <= 600 + 1e-9


class TestSummaries:
    def test_ess_examples(self):
        assert ais.ess(make_set([1, 2, 3, 4], [1, 1, 1, 1])) == pytest.approx(4.0)
        assert ais.ess(make_set([1, 2, 3], [1.0, 1e-320, 1e-320])) == pytest.approx(1.0)
        assert ais.ess(make_set([1, 2, 3], [0.5, 0.25, 0.25])) == pytest.approx(1 / 0.375)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=60))
    def test_weights_normalised_and_ess_in_range(self, lw):
        s = ais.WeightedSampleSet(("x",), np.zeros((len(lw), 1)), np.array(lw), np.array(lw),
                                  np.zeros(len(lw), dtype=int))
        assert abs(s.weights.sum() - 1.0) <= 1e-12
        assert np.all(s.weights >= 0)
        assert 1.0 - 1e-9 <= ais.ess(s) <= len(lw) + 1e-9

    def test_symmetric_mean(self):
        s = make_set([-2.0, -1.0, 1.0, 2.0], [1.0, 3.0, 3.0, 1.0])
        assert ais.summarize(s, 0).mmse_mean == pytest.approx(0.0, abs=1e-15)

    def test_concentrated_weights(self):
        s = make_set([1.0, 7.0, 9.0], [1e-300, 1.0, 1e-300], log_target=[0.0, 5.0, 1.0])
        st_ = ais.summarize(s, 0)
        assert st_.mmse_mean == pytest.approx(7.0)
        assert (st_.map, st_.cred_lo, st_.cred_hi) == (7.0, 7.0, 7.0)

    def test_map_is_argmax_of_log_target(self):
        s = make_set([1.0, 2.0, 3.0], [0.6, 0.3, 0.1], log_target=[0.0, 3.0, 1.0])
        assert ais.summarize(s, 0).map == 2.0

    def test_quantiles_match_scan(self):
        x = [0.3, -1.2, 4.0, 2.2, 0.9]
        w = [0.1, 0.25, 0.05, 0.3, 0.3]
        for q in (0.05, 0.1, 0.35, 0.5, 0.65, 0.95, 1.0):
            assert ais.weighted_quantile(x, w, q) == sorted_scan_quantile(x, w, q)
        st_ = ais.summarize(make_set(x, w), 0, 0.9)
        assert st_.cred_lo == sorted_scan_quantile(x, w, 0.05)
        assert st_.cred_hi == sorted_scan_quantile(x, w, 0.95)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(1e-3, 1.0)), min_size=1,
                    max_size=25), st.floats(0.0, 1.0))
    def test_quantile_scan_property(self, pairs, q):
        x, w = zip(*pairs)
        got = ais.weighted_quantile(x, w, q)
        assert got == sorted_scan_quantile(x, w, q)


class TestResample:
    def test_all_weight_on_one(self):
        s = make_set([1.0, 2.0, 3.0], [1e-320, 1.0, 1e-320])
        np.testing.assert_array_equal(ais.resample(s, 50, 0)[:, 0], 2.0)

    def test_uniform_frequencies_binomial(self):
        n_s, n = 20, 100_000
        s = make_set(np.arange(n_s), np.ones(n_s))
        counts = np.bincount(ais.resample(s, n, 1)[:, 0].astype(int), minlength=n_s)
        lo, hi = binomial_band(n, 1 / n_s)
        assert np.all((counts >= lo) & (counts <= hi))

    def test_ninety_ten(self):
        s = make_set([0.0, 1.0], [0.9, 0.1])
        draws = ais.resample(s, 10_000, 2)[:, 0]
        lo, hi = binomial_band(10_000, 0.9)
        assert lo <= np.sum(draws == 0.0) <= hi

    def test_deterministic(self):
        s = make_set(np.arange(5), [1, 2, 3, 4, 5])
        np.testing.assert_array_equal(ais.resample(s, 30, 7), ais.resample(s, 30, 7))

    def test_mean_converges(self):
        rng = np.random.default_rng(0)
        s = make_set(rng.normal(size=200), rng.uniform(0.1, 1, 200))
        wm = ais.summarize(s, 0).mmse_mean
        draws = ais.resample(s, 200_000, 3)[:, 0]
        sd = np.sqrt(np.sum(s.weights * (s.samples[:, 0] - wm) ** 2) / 200_000)
        assert abs(draws.mean() - wm) < 4 * sd


class TestFullBayes:
    data = from_arrays([0.0, 1.0, 2.5, 4.0], [0.5, -0.2, 1.0, 0.3])
    grid = np.linspace(-1, 5, 31)

    def decode(self, theta):
        return SquaredExp(theta[0], theta[1]), 0.2

    def test_single_mass_collapses(self):
        s = make_set([[1.0, 1.5], [2.0, 0.5]], [1.0, 1e-320])
        c = ais.full_bayes_gp(s, self.data, self.grid, self.decode, min_weight=1e-12)
        m, v = gp_predict(fit_gp(SquaredExp(1.0, 1.5), 0.2, self.data), self.grid)
        np.testing.assert_allclose(c.mean, m, rtol=1e-12)
        np.testing.assert_allclose(c.var, v, rtol=1e-12, atol=1e-15)
        assert c.n_used == 1

    def test_identical_components_no_inflation(self):
        s = make_set([[1.0, 1.5], [1.0, 1.5]], [0.5, 0.5])
        c = ais.full_bayes_gp(s, self.data, self.grid, self.decode)
        _, v = gp_predict(fit_gp(SquaredExp(1.0, 1.5), 0.2, self.data), self.grid)
        np.testing.assert_allclose(c.var, v, rtol=1e-12, atol=1e-15)

    def test_mixture_variance_adds_spread(self):
        s = make_set([[1.0, 1.5], [3.0, 0.7]], [0.5, 0.5])
        c = ais.full_bayes_gp(s, self.data, self.grid, self.decode)
        m1, v1 = gp_predict(fit_gp(SquaredExp(1.0, 1.5), 0.2, self.data), self.grid)
        m2, v2 = gp_predict(fit_gp(SquaredExp(3.0, 0.7), 0.2, self.data), self.grid)
        d = 0.5 * (m1 - m2)
        np.testing.assert_allclose(c.mean, 0.5 * (m1 + m2), rtol=1e-12)
        np.testing.assert_allclose(c.var, 0.5 * (v1 + v2) + d * d, rtol=1e-10, atol=1e-14)
        assert np.all(c.var >= 0)

    def test_invalid_draws_skipped(self):
        s = make_set([[1.0, 1.5], [-1.0, 1.0]], [0.5, 0.5])
        c = ais.full_bayes_gp(s, self.data, self.grid, self.decode)
        assert (c.n_used, c.n_skipped) == (1, 1)


class TestSampleFiles:
    def test_round_trip(self, tmp_path):
        res = ais.run_ais(gaussian_target([0.0, 1.0], np.eye(2)),
                          ais.ParamSpace(["a", "b"], [(-5, 5), (-5, 5)]),
                          ais.ProposalState([0.0, 0.0], 4 * np.eye(2)), 50, 3, seed=0)
        ais.write_samples(res, tmp_path / "s.csv")
        back = ais.read_samples(tmp_path / "s.csv")
        assert back.names == ("a", "b")
        assert back.samples.tobytes() == res.samples.tobytes()
        assert back.log_weights.tobytes() == res.log_weights.tobytes()
        assert back.log_target.tobytes() == res.log_target.tobytes()
        np.testing.assert_array_equal(back.iteration, res.iteration)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "iteration,a,b,log_weight,log_target"
