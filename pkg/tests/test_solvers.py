import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesproj.glm import Dataset
from bayesproj.solvers import (HeredityGraph, PenaltySpec, SolverError, elastic_net_at_constraint,
                               garotte_fit, garotte_path, glm_constrained_at, glm_lasso_path,
                               glm_penalized_path, kkt_check, lasso_path_gaussian)

from oracles import (garotte_face_oracle, garotte_qp, lasso_sign_oracle, logistic_l1_grid_oracle,
                     logistic_objective, projected_gradient_qp)


def random_lasso_instance(rng, p=None):
    p = p or int(rng.integers(2, 6))
    n = int(rng.integers(p + 3, 25))
    X = rng.normal(size=(n, p))
    t = X @ (rng.normal(size=p) * rng.integers(0, 2, p)) + rng.normal(size=n)
    w = rng.uniform(0.3, 3.0, p) if rng.random() < 0.5 else np.ones(p)
    return X, t, w


def random_garotte_instance(rng, mode):
    p = int(rng.integers(2, 5))
    n = int(rng.integers(p + 3, 20))
    X = rng.normal(size=(n, p))
    bs = rng.normal(size=p) * 2
    t = X @ (bs * rng.uniform(0, 1.2, p)) + 0.5 * rng.normal(size=n)
    parents = {}
    for i in range(1, p):
        if rng.random() < 0.7:
            k = int(rng.integers(1, i + 1))
            parents[i] = tuple(sorted(rng.choice(i, size=k, replace=False).tolist()))
    graph = HeredityGraph(parents, mode, p) if parents else None
    lam = float(rng.uniform(0.05, 1.2) * p)
    return X, bs, t, graph, lam


class TestLassoHomotopy:
    def test_knots_match_sign_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            X, t, w = random_lasso_instance(rng)
            path = lasso_path_gaussian(X, t, PenaltySpec("adaptive_lasso", w))
            for d, b in zip(path.deltas, path.betas):
                ref, _ = lasso_sign_oracle(X, t, w, d)
                np.testing.assert_allclose(b, ref, atol=1e-6)

    def test_unpenalized_column_stays_active(self):
        rng = np.random.default_rng(12)
        X = np.column_stack([np.ones(20), rng.normal(size=(20, 3))])
        t = X @ np.array([2.0, 1.0, 0.0, -1.0]) + rng.normal(size=20)
        pen = PenaltySpec.lasso(4, [0])
        path = lasso_path_gaussian(X, t, pen)
        assert path.betas[0][0] == pytest.approx(t.mean())
        assert np.all(path.betas[0][1:] == 0)
        for d, b in zip(path.deltas, path.betas):
            np.testing.assert_allclose(b, lasso_sign_oracle(X, t, pen.weights, d)[0], atol=1e-6)

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_kkt_and_monotone_constraint(self, seed):
        X, t, w = random_lasso_instance(np.random.default_rng(seed))
        pen = PenaltySpec("adaptive_lasso", w)
        path = lasso_path_gaussian(X, t, pen)
        assert kkt_check(path, X, t, pen).passed
        assert np.all(np.diff(path.constraint_values) >= -1e-10)
        assert np.all(np.diff(path.deltas) <= 1e-12)

    def test_at_constraint_interpolates_exactly(self):
        rng = np.random.default_rng(13)
        X, t, w = random_lasso_instance(rng, 4)
        pen = PenaltySpec("adaptive_lasso", w)
        path = lasso_path_gaussian(X, t, pen)
        lam = 0.5 * path.constraint_values[-1]
        b = path.at_constraint(lam)
        assert pen.value(b) == pytest.approx(lam, rel=1e-10)
        k, frac = path.segment(lam)
        delta = (1 - frac) * path.deltas[k] + frac * path.deltas[k + 1]
        np.testing.assert_allclose(b, lasso_sign_oracle(X, t, w, delta)[0], atol=1e-8)

    def test_adaptive_weights_are_capped(self):
        pen = PenaltySpec.adaptive([0.0, 2.0, 1e-12])
        assert pen.weights[0] == pen.weights[2] == 1e8
        assert pen.weights[1] == 0.5


class TestGarotte:
    @pytest.mark.parametrize("mode", ["strong", "weak"])
    def test_matches_face_oracle(self, mode):
        rng = np.random.default_rng(21 if mode == "strong" else 22)
        for _ in range(25):
            X, bs, t, graph, lam = random_garotte_instance(rng, mode)
            sol = garotte_fit(X, bs, t, lam, graph)
            rows = graph.constraint_rows(X.shape[1]) if graph else None
            Q, q, A, b, c = garotte_qp(X, bs, t, lam, rows)
            _, fmin = garotte_face_oracle(Q, q, A, b)
            assert sol.objective <= fmin + c + 1e-8 * (1 + abs(fmin + c))
            assert np.all(A @ sol.theta <= b + 1e-9)
            assert kkt_check(sol, X, t, beta_star=bs, heredity=graph).passed

    def test_face_oracle_agrees_with_projected_gradient(self):
        rng = np.random.default_rng(23)
        for _ in range(4):
            X, bs, t, graph, lam = random_garotte_instance(rng, "strong")
            rows = graph.constraint_rows(X.shape[1]) if graph else None
            Q, q, A, b, _ = garotte_qp(X, bs, t, lam, rows)
            _, f_face = garotte_face_oracle(Q, q, A, b)
            _, f_pg = projected_gradient_qp(Q, q, A, b, iters=3000, tol=1e-11)
            assert f_pg == pytest.approx(f_face, abs=1e-6 * (1 + abs(f_face)))

    def test_heredity_holds_along_path(self):
        rng = np.random.default_rng(24)
        X = rng.normal(size=(30, 4))
        bs = np.array([1.0, -1.0, 2.0, 1.5])
        t = X @ bs + rng.normal(size=30)
        graph = HeredityGraph({2: (0, 1), 3: (0,)}, "strong", 4)
        gp = garotte_path(X, bs, t, np.linspace(0, 4, 41), graph)
        for sol in gp:
            assert graph.satisfied(sol.theta)
            assert sol.theta.sum() <= sol.lam + 1e-9
        assert np.all(np.diff(gp.objectives) <= 1e-9)

    def test_zero_budget_gives_zero(self):
        X = np.eye(3)
        sol = garotte_fit(X, np.ones(3), np.ones(3), 0.0)
        assert np.all(sol.theta == 0)

    def test_heredity_graph_validation(self):
        with pytest.raises(ValueError):
            HeredityGraph({0: (1,), 1: (0,)})
        with pytest.raises(ValueError):
            HeredityGraph({0: (0,)})
        with pytest.raises(ValueError):
            HeredityGraph({}, "medium")


class TestGlmPaths:
    def _logistic(self, seed, p=2, n=40):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, p))
        mu = 1 / (1 + np.exp(-(X @ rng.normal(size=p) * 1.5)))
        return X, mu

    def test_constrained_fit_matches_dense_grid(self):
        for seed in range(6):
            X, mu = self._logistic(seed)
            pen = PenaltySpec.lasso(2)
            path = glm_lasso_path(X, mu, pen, "binomial")
            full = np.sum(np.abs(path.betas[-1]))
            for frac in (0.2, 0.5, 0.8):
                lam = frac * full
                b = glm_constrained_at(path, X, pen, lam)
                ref, fref, h = logistic_l1_grid_oracle(X, mu, lam)
                assert np.sum(np.abs(b)) == pytest.approx(lam, rel=1e-8)
                assert logistic_objective(X, mu, b) <= fref + 1e-10
                assert np.max(np.abs(b - ref)) < 2 * h + 1e-3

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["binomial", "poisson"]))
    def test_homotopy_points_satisfy_kkt(self, seed, family):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(2, 5))
        X = np.column_stack([np.ones(30), rng.normal(size=(30, p))])
        beta = rng.normal(size=p + 1) * 0.7
        eta = X @ beta
        mu = 1 / (1 + np.exp(-eta)) if family == "binomial" else np.exp(eta)
        pen = PenaltySpec.adaptive(beta, [0])
        path = glm_lasso_path(X, mu, pen, family)
        assert kkt_check(path, X, mu, pen, family, tol=1e-6).passed
        cv = path.constraint_values
        assert np.all(np.diff(cv) >= -1e-8 * (1 + cv[-1]))

    def test_penalized_path_kkt(self):
        X, mu = self._logistic(3, p=4, n=60)
        ds = Dataset(X, mu, "binomial")
        pen = PenaltySpec.lasso(4)
        path = glm_penalized_path(ds, pen, np.linspace(0.1, 5, 8), tol=1e-12)
        assert kkt_check(path, X, mu, pen, "binomial", tol=1e-5).passed

    def test_penalized_and_homotopy_agree(self):
        X, mu = self._logistic(4, p=3, n=50)
        pen = PenaltySpec.lasso(3)
        hom = glm_lasso_path(X, mu, pen, "binomial")
        k = len(hom) // 2
        cd = glm_penalized_path(Dataset(X, mu, "binomial"), pen, [hom.deltas[k]], tol=1e-12)
        np.testing.assert_allclose(cd.betas[0], hom.betas[k], atol=1e-6)

    def test_elastic_net_hits_constraint(self):
        X, mu = self._logistic(5, p=3, n=50)
        ds = Dataset(X, mu, "binomial")
        pen = PenaltySpec.elastic_net(3, 0.5)
        b = elastic_net_at_constraint(ds, pen, 0.8)
        assert pen.value(b) == pytest.approx(0.8, rel=1e-5)
