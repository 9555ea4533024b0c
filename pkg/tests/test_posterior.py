import numpy as np
import pytest
from scipy import stats

from bayesproj.glm import Dataset
from bayesproj.posterior import (PosteriorSample, PriorSpec, SingularDesignError, batch_means_se,
                                 make_rng, sample_bayesian_lasso, sample_gaussian_noninformative,
                                 sample_logistic_normal, split_half_z)


def _trapz(f, x):
    return float(np.sum((f[1:] + f[:-1]) * np.diff(x)) / 2)


class TestRng:
    def test_streams_are_reproducible_and_distinct(self):
        a = make_rng(5, 1, 2).random(4)
        assert np.array_equal(a, make_rng(5, 1, 2).random(4))
        assert not np.array_equal(a, make_rng(5, 2, 1).random(4))


class TestGaussianReferencePrior:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.X = rng.normal(size=(40, 3))
        self.y = self.X @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=40)
        self.ds = Dataset(self.X, self.y)

    def test_moments_match_closed_form(self):
        s = sample_gaussian_noninformative(self.ds, 40000, seed=1)
        bhat, rss = np.linalg.lstsq(self.X, self.y, rcond=None)[:2]
        n, p = self.X.shape
        cov = rss[0] / (n - p - 2) * np.linalg.inv(self.X.T @ self.X)
        se = np.sqrt(np.diag(cov) / s.n_draws)
        assert np.all(np.abs(s.mean() - bhat) < 4 * se)
        np.testing.assert_allclose(np.cov(s.draws.T), cov, rtol=0, atol=0.03 * np.max(np.diag(cov)))
        assert np.mean(s.phi_draws) == pytest.approx(rss[0] / (n - p - 2), rel=0.03)

    def test_determinism(self):
        a = sample_gaussian_noninformative(self.ds, 50, seed=3)
        b = sample_gaussian_noninformative(self.ds, 50, seed=3)
        assert np.array_equal(a.draws, b.draws) and np.array_equal(a.phi_draws, b.phi_draws)

    def test_rank_deficient_design_names_columns(self):
        X = np.column_stack([self.X, self.X[:, 0] + self.X[:, 1]])
        ds = Dataset(X, self.y, names=["a", "b", "c", "d"])
        with pytest.raises(SingularDesignError) as err:
            sample_gaussian_noninformative(ds, 10, seed=0)
        assert len(err.value.columns) == 1


class TestLogisticMetropolis:
    def test_one_coefficient_against_quadrature(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=60)
        y = (rng.random(60) < 1 / (1 + np.exp(-0.8 * x))).astype(float)
        ds = Dataset(x[:, None], y, "binomial")
        grid = np.linspace(-4, 6, 4001)
        eta = np.outer(grid, x)
        logp = np.sum(y * eta - np.logaddexp(0, eta), axis=1) - grid**2 / 6.0
        dens = np.exp(logp - logp.max())
        dens /= _trapz(dens, grid)
        m = _trapz(grid * dens, grid)
        sd = np.sqrt(_trapz((grid - m) ** 2 * dens, grid))
        s = sample_logistic_normal(ds, PriorSpec.logistic(3.0), 1000, 20000, seed=4)
        mcse = batch_means_se(s.draws)[0]
        assert abs(s.mean()[0] - m) < 5 * mcse
        assert s.draws[:, 0].std() == pytest.approx(sd, rel=0.05)
        assert 0.2 <= s.diagnostics["acceptance_rate"] <= 0.5

    def test_determinism_and_diagnostics(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(30), rng.normal(size=30)])
        ds = Dataset(X, rng.integers(0, 2, 30).astype(float), "binomial")
        a = sample_logistic_normal(ds, PriorSpec.logistic(), 200, 300, seed=9)
        b = sample_logistic_normal(ds, PriorSpec.logistic(), 200, 300, seed=9)
        assert np.array_equal(a.draws, b.draws)
        for key in ("sampler", "seed", "burn_in", "thinning", "acceptance_rate"):
            assert key in a.diagnostics

    def test_wrong_family(self):
        ds = Dataset(np.ones((5, 1)), np.zeros(5))
        with pytest.raises(ValueError):
            sample_logistic_normal(ds, PriorSpec.logistic(), 10, 10)


class TestBayesianLasso:
    def test_one_coefficient_against_quadrature(self):
        rng = np.random.default_rng(5)
        n = 15
        x = rng.normal(size=n)
        y = 0.7 * x + rng.normal(size=n)
        lam, a, b = 2.0, 0.5, 0.5
        bg = np.linspace(-2, 3, 801)
        lsg = np.linspace(np.log(0.05), np.log(20), 801)
        B, LS = np.meshgrid(bg, lsg, indexing="ij")
        S2 = np.exp(LS)
        rss = np.sum((y[None, None, :] - B[..., None] * x[None, None, :]) ** 2, axis=-1)
        logp = (-0.5 * n * LS - 0.5 * rss / S2
                + np.log(lam / (2 * np.sqrt(S2))) - lam * np.abs(B) / np.sqrt(S2)
                + stats.invgamma.logpdf(S2, a, scale=b) + LS)
        w = np.exp(logp - logp.max())
        marg = w.sum(axis=1)
        marg /= _trapz(marg, bg)
        m = _trapz(bg * marg, bg)
        s = sample_bayesian_lasso(Dataset(x[:, None], y), PriorSpec.bayesian_lasso(lam, a, b),
                                  1000, 20000, seed=6)
        mcse = batch_means_se(s.draws)[0]
        assert abs(s.mean()[0] - m) < 5 * mcse + 1e-3

    def test_intercept_gets_flat_prior(self):
        rng = np.random.default_rng(7)
        X = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
        y = 10.0 + X[:, 1] + rng.normal(size=50)
        ds = Dataset(X, y, intercept=[True, False, False])
        s = sample_bayesian_lasso(ds, PriorSpec.bayesian_lasso(1.0), 300, 2000, seed=1)
        assert s.mean()[0] == pytest.approx(10.0, abs=0.5)

    def test_rejects_non_gaussian(self):
        ds = Dataset(np.ones((5, 1)), np.zeros(5), "binomial")
        with pytest.raises(ValueError):
            sample_bayesian_lasso(ds, PriorSpec.bayesian_lasso(), 1, 1)


class TestSampleContainer:
    def test_validation(self):
        with pytest.raises(ValueError):
            PosteriorSample(np.array([[np.nan]]))
        with pytest.raises(ValueError):
            PosteriorSample(np.zeros((2, 1)), [1.0])
        with pytest.raises(ValueError):
            PosteriorSample(np.zeros((2, 1)), [1.0, -1.0])

    def test_draws_are_read_only(self):
        s = PosteriorSample(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            s.draws[0, 0] = 1.0

    def test_split_half_on_iid_chain(self):
        d = np.random.default_rng(0).normal(size=(4000, 2))
        assert np.all(split_half_z(PosteriorSample(d)) < 4)


class TestPriorSpec:
    def test_invalid_prior(self):
        with pytest.raises(ValueError):
            PriorSpec("logistic_normal", cov=-1.0)
        with pytest.raises(ValueError):
            PriorSpec("bayesian_lasso", lam=0.0)
        with pytest.raises(ValueError):
            PriorSpec("nope")
