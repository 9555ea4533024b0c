import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesproj.glm import Dataset, ParamPoint
from bayesproj.posterior import PosteriorSample, sample_gaussian_noninformative
from bayesproj.projection import (CalibrationError, ConstraintSpec, ProjectionError,
                                  calibrate_lambda, explanatory_loss, project_draw, project_sample)
from bayesproj.solvers import HeredityGraph


def _gaussian_case(seed, p=None, intercept=False):
    rng = np.random.default_rng(seed)
    p = p or int(rng.integers(2, 5))
    n = int(rng.integers(p + 4, 20))
    X = rng.normal(size=(n, p))
    if intercept:
        X[:, 0] = 1.0
    mask = np.zeros(p, bool)
    mask[0] = intercept
    ds = Dataset(X, rng.normal(size=n), intercept=mask)
    beta = rng.normal(size=p) * rng.uniform(0.2, 2.0)
    return ds, ParamPoint(beta, float(rng.uniform(0.3, 3.0)))


def _binomial_case(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 4))
    X = np.column_stack([np.ones(25), rng.normal(size=(25, p))])
    mask = np.zeros(p + 1, bool)
    mask[0] = True
    ds = Dataset(X, rng.integers(0, 2, 25).astype(float), "binomial", intercept=mask)
    return ds, ParamPoint(rng.normal(size=p + 1), 1.0)


class TestSingleDraw:
    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["lasso", "adaptive_lasso", "garotte"]),
           st.booleans())
    def test_monotone_in_level(self, seed, kind, intercept):
        ds, draw = _gaussian_case(seed, intercept=intercept)
        spec = ConstraintSpec(kind)
        top = spec.size(ds, draw.beta)
        levels = np.linspace(0, 1.2 * top, 7)
        out = [project_draw(ds, draw, spec, lam) for lam in levels]
        kls = np.array([o[2] for o in out])
        assert np.all(kls >= 0)
        assert np.all(np.diff(kls) <= 1e-9 * (1 + kls[0]))
        measure = ConstraintSpec(kind, beta_star=draw.beta)
        for lam, (pt, _, _) in zip(levels, out):
            assert measure.size(ds, pt.beta) <= lam + 1e-8 * (1 + lam)
        full = out[-1][0]
        np.testing.assert_allclose(full.beta, draw.beta, atol=1e-7 * (1 + np.abs(draw.beta).max()))
        assert kls[-1] < 1e-9 * (1 + kls[0])

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["lasso", "adaptive_lasso", "garotte"]),
           st.floats(0.05, 0.95))
    def test_idempotent(self, seed, kind, frac):
        ds, draw = _gaussian_case(seed)
        fixed = ConstraintSpec(kind, beta_star=None if kind == "lasso" else draw.beta)
        lam = frac * fixed.size(ds, draw.beta)
        once, _, _ = project_draw(ds, draw, fixed, lam)
        twice, _, kl2 = project_draw(ds, once, fixed, lam)
        tol = 1e-7 * (1 + np.abs(once.beta).max())
        np.testing.assert_allclose(twice.beta, once.beta, atol=tol)
        assert kl2 < 1e-8 * (1 + once.phi)

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["lasso", "adaptive_lasso"]))
    def test_binomial_monotone(self, seed, kind):
        ds, draw = _binomial_case(seed)
        spec = ConstraintSpec(kind)
        levels = np.linspace(0, spec.size(ds, draw.beta), 5)
        kls = np.array([project_draw(ds, draw, spec, lam)[2] for lam in levels])
        assert np.all(kls >= 0)
        assert np.all(np.diff(kls) <= 1e-8 * (1 + kls[0]))

    def test_gaussian_kl_is_log_variance_ratio(self):
        ds, draw = _gaussian_case(5, p=3)
        pt, _, kl = project_draw(ds, draw, ConstraintSpec("lasso"), 0.3)
        assert kl == pytest.approx(0.5 * ds.n * np.log(pt.phi / draw.phi), rel=1e-12)
        resid = ds.X @ (draw.beta - pt.beta)
        assert pt.phi == pytest.approx(draw.phi + resid @ resid / ds.n, rel=1e-12)

    def test_heredity_respected(self):
        ds, draw = _gaussian_case(6, p=4)
        graph = HeredityGraph({3: (0, 1)}, "strong", 4)
        spec = ConstraintSpec("garotte", heredity=graph)
        for lam in np.linspace(0, 4, 9):
            _, gamma, _ = project_draw(ds, draw, spec, lam)
            assert not gamma[3] or (gamma[0] and gamma[1])

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            ConstraintSpec("ridge")
        with pytest.raises(ValueError):
            ConstraintSpec("lasso", heredity=HeredityGraph({1: (0,)}))
        with pytest.raises(ValueError):
            ConstraintSpec("lasso", ridge=1.0)
        ds, draw = _gaussian_case(7)
        with pytest.raises(ValueError):
            project_draw(ds, draw, ConstraintSpec("lasso"), -1.0)


@pytest.fixture(scope="module")
def ensemble_case():
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 4))])
    y = X @ np.array([1.0, 2.0, 0.0, -1.0, 0.0]) + rng.normal(size=40)
    ds = Dataset(X, y, intercept=[True, False, False, False, False])
    sample = sample_gaussian_noninformative(ds, 60, seed=2)
    return ds, sample


class TestEnsemble:
    def test_loss_curve_properties(self, ensemble_case):
        ds, sample = ensemble_case
        ens = project_sample(ds, sample, ConstraintSpec("adaptive_lasso"), np.linspace(0, 4, 21))
        loss = ens.losses()
        assert loss[0] == pytest.approx(1.0)
        assert loss[-1] == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(loss) <= 1e-12)
        assert ens.expected_sizes()[0] == 0 and ens.expected_sizes()[-1] == 4
        for k in (3, 10):
            assert explanatory_loss(ens, ens.lambdas[k]) == pytest.approx(loss[k], rel=1e-12)

    def test_parallel_matches_serial(self, ensemble_case):
        ds, sample = ensemble_case
        grid = np.linspace(0, 4, 11)
        a = project_sample(ds, sample, ConstraintSpec("lasso"), grid, workers=1)
        b = project_sample(ds, sample, ConstraintSpec("lasso"), grid, workers=2)
        assert np.array_equal(a.betas, b.betas) and np.array_equal(a.kl, b.kl)
        assert a.path_models == b.path_models

    def test_calibration(self, ensemble_case):
        ds, sample = ensemble_case
        ens = project_sample(ds, sample, ConstraintSpec("adaptive_lasso"), np.linspace(0, 4, 41))
        lam = calibrate_lambda(ens, loss_bound=0.1)
        k = ens.level(lam)
        assert explanatory_loss(ens, lam) < 0.1
        assert k == 0 or explanatory_loss(ens, ens.lambdas[k - 1]) >= 0.1
        lam2 = calibrate_lambda(ens, target_size=2)
        sizes = ens.expected_sizes()
        assert abs(sizes[ens.level(lam2)] - 2) == pytest.approx(np.min(np.abs(sizes - 2)))
        with pytest.raises(ValueError):
            calibrate_lambda(ens, loss_bound=0.1, target_size=2)
        short = project_sample(ds, sample, ConstraintSpec("adaptive_lasso"), np.linspace(0, 0.1, 3))
        with pytest.raises(CalibrationError):
            calibrate_lambda(short, loss_bound=0.01)

    def test_default_grid_for_lasso(self, ensemble_case):
        ds, sample = ensemble_case
        ens = project_sample(ds, sample.subset(np.arange(10)), ConstraintSpec("lasso"))
        assert ens.lambdas.size == 100 and ens.lambdas[0] == 0

    def test_failed_draws_are_ledgered(self):
        rng = np.random.default_rng(9)
        X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
        ds = Dataset(X, rng.poisson(2.0, 20).astype(float), "poisson", intercept=[True, False, False])
        good = np.tile([0.5, 0.1, -0.1], (300, 1))
        bad = good.copy()
        bad[5] = [800.0, 0.0, 0.0]
        ens = project_sample(ds, PosteriorSample(bad), ConstraintSpec("lasso"), [0.0, 0.1])
        assert ens.n_draws == 299 and ens.excluded[0][0] == 5
        assert 5 not in ens.draw_index
        worse = bad.copy()
        worse[6] = worse[7] = worse[8] = [800.0, 0.0, 0.0]
        with pytest.raises(ProjectionError):
            project_sample(ds, PosteriorSample(worse), ConstraintSpec("lasso"), [0.0, 0.1])
