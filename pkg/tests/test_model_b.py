import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from creditloss.exceptions import DomainError
from creditloss.kernel import RngStream, std_normal_quantile
from creditloss.model_b import (
    LAMBDA_HI,
    LAMBDA_LO,
    ModelBCalibration,
    ModelBLGD,
    ModelBParams,
    clamp_lambda,
    coupling_covariance,
    estimate_lambda,
    f_h,
    lgd_marginal_cdf,
    lgd_marginal_inverse,
    prior_beta_mode,
    sample_lgd_b,
    shape_params,
    truncated_gaussian_cdf,
    xi_from_lambda,
    xi_radical,
)
from creditloss.portfolio import CellIndex
from creditloss.synthetic import synthetic_default_records

from oracles import coupling_cov_quadrature, perturbed_rank_draws


def defaulted_g(p, n, gen):
    return std_normal_quantile(gen.random(n) * p)


class TestMarginal:
    @pytest.mark.parametrize("lbar,coll,expected", [
        (0.5, True, (2, 0.1)), (0.9, False, (0.5, 0.1)), (0.4, True, (2, 0.08))])
    def test_shape_params(self, lbar, coll, expected):
        assert shape_params(lbar, coll) == pytest.approx(expected)

    def test_shape_domain(self):
        with pytest.raises(DomainError):
            shape_params(1.0, True)

    def test_inverse_values(self):
        p = ModelBParams(0.4, False)
        assert lgd_marginal_inverse(0.5, p) == pytest.approx(0.4)
        assert lgd_marginal_inverse(0.0, p) == pytest.approx(0.0)
        assert lgd_marginal_inverse(1.0, p) == pytest.approx(0.8)

    def test_cdf_at_mean(self):
        assert lgd_marginal_cdf(0.3, ModelBParams(0.3, True)) == pytest.approx(0.5)

    @pytest.mark.parametrize("lbar,coll", [(0.4, True), (0.4, False), (0.9, True), (0.9, False)])
    def test_round_trip(self, lbar, coll):
        p = ModelBParams(lbar, coll)
        u = np.linspace(0.001, 0.999, 300)
        assert np.max(np.abs(lgd_marginal_cdf(lgd_marginal_inverse(u, p), p) - u)) < 1e-8

    def test_degenerate(self):
        p = ModelBParams(0.3, False, delta=0.0)
        assert lgd_marginal_inverse(0.9, p) == 0.3
        assert lgd_marginal_cdf([0.29, 0.3], p).tolist() == [0.0, 1.0]

    def test_support_check(self):
        with pytest.raises(DomainError):
            ModelBParams(0.3, False, delta=0.4)

    def test_prior_mode(self):
        assert prior_beta_mode(0.5, 4) == (1.5, 1.5)
        assert prior_beta_mode(0.9, 4) == pytest.approx((2.7, 0.3))
        with pytest.raises(DomainError):
            prior_beta_mode(0.5, 1.0)

    @given(st.floats(0.01, 0.99), st.floats(1.01, 50))
    def test_prior_mean(self, lbar, kappa):
        a, b = prior_beta_mode(lbar, kappa)
        assert a / (a + b) == pytest.approx(lbar)


class TestTruncatedGaussian:
    def test_boundary(self):
        assert truncated_gaussian_cdf(std_normal_quantile(0.1), 0.1) == 1.0
        assert truncated_gaussian_cdf(-np.inf, 0.1) == 0.0

    def test_quarter(self):
        assert truncated_gaussian_cdf(std_normal_quantile(0.25), 0.5) == pytest.approx(0.5)

    def test_domain(self):
        with pytest.raises(DomainError):
            truncated_gaussian_cdf(0.0, 1.0)


class TestFH:
    @pytest.mark.parametrize("xi", [2.0, 2.01, 3.0, 4.0, 20.0])
    def test_boundaries(self, xi):
        assert f_h(1 - xi / 2, xi) == 0.0
        assert f_h(1 + xi / 2, xi) == 1.0
        assert abs(f_h(0.0, xi) - (0.5 - 1 / xi)) < 1e-12

    def test_continuity_at_zero(self):
        for xi in (2.5, 4.0, 9.0):
            assert f_h(1e-12, xi) == pytest.approx(f_h(-1e-12, xi), abs=1e-9)

    def test_quarter_at_zero(self):
        u, h = perturbed_rank_draws(4.0, 10**6, 1)
        assert f_h(0.0, 4.0) == 0.25
        assert abs((h < 0).mean() - 0.25) < 0.002

    def test_monotone_grid(self):
        for xi in (2.0, 2.01, 3.0, 5.0, 20.0):
            y = np.linspace(1 - xi / 2 - 0.1, 1 + xi / 2 + 0.1, 10**4)
            assert np.all(np.diff(f_h(y, xi)) >= 0)

    def test_matches_simulation_at_half(self):
        _, h = perturbed_rank_draws(4.0, 10**6, 2)
        assert abs(f_h(0.5, 4.0) - (h <= 0.5).mean()) < 0.005

    def test_percentile_uniform(self):
        _, h = perturbed_rank_draws(3.0, 10**6, 3)
        assert stats.kstest(f_h(h, 3.0), "uniform").statistic < 0.005

    def test_domain(self):
        with pytest.raises(DomainError):
            f_h(0.5, 1.5)


class TestCoupling:
    def test_lambda_hi_gives_two(self):
        assert xi_from_lambda(1 / 18) == (2.0, 1 / 18)

    def test_clamping(self):
        assert xi_from_lambda(0.08) == (2.0, LAMBDA_HI)
        xi, lam = xi_from_lambda(-0.01)
        assert lam == LAMBDA_LO
        assert xi == pytest.approx(84 / 9)

    @pytest.mark.parametrize("bad", [0.1, -0.2, float("nan"), float("inf")])
    def test_invalid(self, bad):
        with pytest.raises(DomainError):
            clamp_lambda(bad)

    @pytest.mark.parametrize("lam", [1 / 84, 1 / 30, 1 / 24, 1 / 18])
    def test_quadrature_oracle(self, lam):
        xi, _ = xi_from_lambda(lam)
        assert abs(coupling_cov_quadrature(xi) - lam) < 2e-4
        assert coupling_covariance(xi) == pytest.approx(lam)

    def test_radical_formula_values(self):
        assert xi_radical(1 / 18) == pytest.approx(2.0)
        assert xi_radical(1 / 24) == pytest.approx(2.71358, abs=1e-4)

    def test_radical_formula_misses_target(self):
        # the closed-form radical only hits its target at the upper clamp
        xi, _ = xi_from_lambda(1 / 24, method="radical")
        assert abs(coupling_cov_quadrature(xi) - 1 / 24) > 5e-4

    def test_monte_carlo_covariance(self):
        xi = 3.0
        u, h = perturbed_rank_draws(xi, 10**6, 4)
        w = f_h(h, xi)
        prod = (w - w.mean()) * (u - u.mean())
        assert abs(prod.mean() - 1 / 27) < 3 * prod.std() / 1e3

    def test_strictly_decreasing(self):
        lams = np.linspace(1 / 84, 1 / 18, 50)
        xis = [xi_from_lambda(x)[0] for x in lams]
        assert all(a > b for a, b in zip(xis, xis[1:]))


class TestSampling:
    def test_degenerate(self):
        p = ModelBParams(0.35, False, delta=0.0)
        x = sample_lgd_b(np.full(100, -3.0), 0.05, p, RngStream(1))
        assert np.all(x == 0.35)

    def test_precondition(self):
        with pytest.raises(DomainError):
            sample_lgd_b(0.0, 0.05, ModelBParams(0.4, True), RngStream(1))

    @pytest.mark.parametrize("lbar,coll", [(0.4, True), (0.9, False)])
    def test_marginal_and_moments(self, lbar, coll):
        p = ModelBParams(lbar, coll, lam=1 / 30)
        gen = RngStream(5).generator()
        g = defaulted_g(0.02, 10**6, gen)
        x = sample_lgd_b(g, 0.02, p, gen)
        assert stats.kstest(x, lambda y: lgd_marginal_cdf(y, p)).statistic < 0.005
        se = x.std() / 1e3
        assert abs(x.mean() - lbar) < 3 * se
        assert abs(stats.skew(x)) < 3 * math.sqrt(6 / 1e6)
        assert x.min() >= lbar - p.delta - 1e-12 and x.max() <= lbar + p.delta + 1e-12

    def test_coupling_sign(self):
        p = ModelBParams(0.5, False, lam=1 / 18)
        gen = RngStream(6).generator()
        g = defaulted_g(0.05, 10**5, gen)
        x = sample_lgd_b(g, 0.05, p, gen)
        assert np.corrcoef(g, x)[0, 1] > 0.3


class TestEstimation:
    params = {CellIndex(1, 1): ModelBParams(0.45, False)}

    def records(self, u, w, p=0.02):
        prm = self.params[CellIndex(1, 1)]
        return pd.DataFrame({"time": 1, "industry": 1, "region": 1,
                             "g": std_normal_quantile(np.clip(u, 1e-12, 1 - 1e-9) * p), "pd": p,
                             "lgd": lgd_marginal_inverse(w, prm)})

    def test_perfect_dependence(self):
        u = np.random.default_rng(1).random(10**4)
        recs = self.records(u, u)
        per_cell, _ = estimate_lambda(recs, self.params)
        assert per_cell[CellIndex(1, 1)] == pytest.approx(1 / 12, abs=0.003)
        est = ModelBLGD().fit(recs, self.params)
        assert est.lambda_[CellIndex(1, 1)] == LAMBDA_HI
        assert est.xi_[CellIndex(1, 1)] == 2.0

    def test_independent(self):
        gen = np.random.default_rng(2)
        per_cell, _ = estimate_lambda(self.records(gen.random(10**4), gen.random(10**4)), self.params)
        assert abs(per_cell[CellIndex(1, 1)]) < 0.003
        assert xi_from_lambda(per_cell[CellIndex(1, 1)])[1] == LAMBDA_LO

    def test_anticorrelated(self):
        u = np.random.default_rng(3).random(2000)
        recs = self.records(u, 1 - u)
        per_cell, _ = estimate_lambda(recs, self.params)
        assert per_cell[CellIndex(1, 1)] < 0
        assert ModelBLGD().fit(recs, self.params).lambda_[CellIndex(1, 1)] == LAMBDA_LO

    def test_small_cell_uses_pool(self):
        gen = np.random.default_rng(4)
        a = self.records(gen.random(500), gen.random(500))
        b = self.records(gen.random(3), gen.random(3)).assign(industry=2)
        params = dict(self.params)
        params[CellIndex(2, 1)] = ModelBParams(0.45, False)
        with pytest.warns(RuntimeWarning, match="pooled"):
            per_cell, pooled = estimate_lambda(pd.concat([a, b]), params)
        assert per_cell[CellIndex(2, 1)] == pooled

    def test_estimator_recovers_xi(self):
        cells = [CellIndex(1, 1), CellIndex(2, 1)]
        recs = synthetic_default_records(cells, n_per_cell=20_000, xi=3.0, seed=7)
        est = ModelBLGD().fit(recs)
        for c in cells:
            assert est.lambda_[c] == pytest.approx(1 / 27, abs=0.003)
            assert est.xi_[c] == pytest.approx(3.0, rel=0.1)
        again = ModelBCalibration.from_dict(est.calibration_.to_dict())
        assert again.xi == est.xi_
        assert est.params_for(0.4, True, (1, 1)).xi == est.xi_[CellIndex(1, 1)]
        assert est.get_params() == {"min_records": 10, "xi_method": "exact"}
