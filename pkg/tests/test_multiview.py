import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_L, random_groups
from oracles import brute_multiview_fit, multiview_step_lstsq
from rankpursuit import (
    Dictionary,
    FitOptions,
    KernelSpec,
    MultiViewFitOptions,
    MultiViewModel,
    PreferenceGraph,
    ScoredDataset,
    SparseExpansion,
    UnscoredDataset,
    ViewSpec,
    coefficient_system,
    evaluate_candidate,
    fit_pursuit,
    fit_semisupervised,
    predict_average,
    split_feature_views,
)
from rankpursuit.data import WeightedLaplacian, _group_codes
from rankpursuit.multiview import multiview_prefix
from rankpursuit.pursuit import DegenerateCandidate


def graph(groups):
    return PreferenceGraph(_group_codes(list(groups)))


def increment_disagreement(a, kbars, Lbd):
    M = len(a)
    total = 0.0
    for v in range(M):
        for u in range(M):
            d = a[v] * kbars[v] - a[u] * kbars[u]
            total += d @ Lbd @ d
    return total


def random_instance(rng, n=10, l=8, d=4):
    X = rng.normal(size=(n, d))
    s = X[:, 0] - X[:, 2] + 0.3 * rng.normal(size=n)
    train = ScoredDataset(X, s, random_groups(rng, n, 2, min_rank=2))
    U = UnscoredDataset(rng.normal(size=(l, d)), random_groups(rng, l, 2))
    return train, U


# ------------------------------------------------------------ coefficient system


class TestCoefficientSystem:
    def test_hand_example(self):
        # [DERIVED] diagonal 1 + 2*1*1*1 = 3, off-diagonal -2*1*(-1) = 2, rhs (1, 1)
        L, Lb = graph([0, 0]), graph([0, 0])
        k = np.array([1.0, 0.0])
        a, J = coefficient_system([k, k], [np.array([1.0, 0.0]), np.array([0.0, 1.0])], [k, k], L, Lb, 1.0)
        np.testing.assert_allclose(a, np.linalg.solve([[3.0, 2.0], [2.0, 3.0]], [1.0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(a, [0.2, 0.2], atol=1e-12)

    def test_nu_zero_decouples(self, rng):
        groups = [0, 0, 0, 1, 1]
        L, Lb = graph(groups), graph([0, 0, 1])
        ks = [rng.normal(size=5) for _ in range(3)]
        rs = [rng.normal(size=5) for _ in range(3)]
        kb = [rng.normal(size=3) for _ in range(3)]
        a, J = coefficient_system(ks, kb, rs, L, Lb, 0.0)
        lap = WeightedLaplacian(L, 0.0)
        singles = [evaluate_candidate(r, k, lap) for r, k in zip(rs, ks)]
        np.testing.assert_allclose(a, [s[0] for s in singles], rtol=1e-12)
        assert J == pytest.approx(sum(s[1] for s in singles), rel=1e-12)

    def test_single_view_is_evaluate_candidate(self, rng):
        L, Lb = graph([0, 0, 0, 0]), graph([0, 0])
        k, r = rng.normal(size=4), rng.normal(size=4)
        a, J = coefficient_system([k], [rng.normal(size=2)], [r], L, Lb, 5.0)
        a1, J1 = evaluate_candidate(r, k, WeightedLaplacian(L, 0.0))
        assert a[0] == pytest.approx(a1, rel=1e-12) and J == pytest.approx(J1, rel=1e-12)

    def test_empty_unscored_set(self, rng):
        L = graph([0, 0, 0])
        ks = [rng.normal(size=3), rng.normal(size=3)]
        a, _ = coefficient_system(ks, [np.zeros(0), np.zeros(0)], ks, L, graph([]), 1.0)
        np.testing.assert_allclose(a, [1.0, 1.0], rtol=1e-12)

    def test_all_degenerate_raises(self):
        L, Lb = graph([0, 0]), graph([0, 0])
        ones = np.ones(2)
        with pytest.raises(DegenerateCandidate):
            coefficient_system([ones, ones], [ones, ones], [np.array([1.0, 0.0])] * 2, L, Lb, 1.0)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.1, 1.0, 10.0]), st.integers(1, 3))
    def test_matches_stacked_least_squares(self, seed, nu, M):
        rng = np.random.default_rng(seed)
        n, l = int(rng.integers(3, 10)), int(rng.integers(2, 8))
        groups, ugroups = random_groups(rng, n, 2, min_rank=2), random_groups(rng, l, 2)
        ks = [rng.normal(size=n) for _ in range(M)]
        kb = [rng.normal(size=l) for _ in range(M)]
        rs = [rng.normal(size=n) for _ in range(M)]
        a, J = coefficient_system(ks, kb, rs, graph(groups), graph(ugroups), nu)
        a_ref, J_ref, _ = multiview_step_lstsq(ks, kb, rs, dense_L(list(groups)), dense_L(list(ugroups)), nu)
        np.testing.assert_allclose(a, a_ref, rtol=1e-8, atol=1e-9)
        assert J == pytest.approx(J_ref, rel=1e-8, abs=1e-9)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_system_symmetric_positive_definite(self, seed):
        from rankpursuit.multiview import _system

        rng = np.random.default_rng(seed)
        M, l = 3, 6
        ugroups = random_groups(rng, l, 2)
        Lbd = dense_L(list(ugroups))
        Kb = rng.normal(size=(l, M))
        g = rng.uniform(0.1, 2.0, M)
        A = _system(g, Kb.T @ Lbd @ Kb, 1.5, M)
        np.testing.assert_allclose(A, A.T, atol=1e-12)
        np.linalg.cholesky(A)  # raises unless positive definite

    def test_increment_disagreement_shrinks_with_nu(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, l = 8, 6
            L, Lb = graph([0] * n), graph([0] * l)
            Lbd = dense_L([0] * l)
            ks = [rng.normal(size=n) for _ in range(2)]
            kb = [rng.normal(size=l) for _ in range(2)]
            rs = [rng.normal(size=n) for _ in range(2)]
            dis = []
            for nu in (1e-3, 1e-1, 1e1, 1e3):
                a, _ = coefficient_system(ks, kb, rs, L, Lb, nu)
                dis.append(increment_disagreement(a, kb, Lbd))
            assert all(d1 < d0 for d0, d1 in zip(dis, dis[1:]))


# ------------------------------------------------------------ fitting


class TestFitSemisupervised:
    def test_nu_zero_tuple_scan_equals_independent_fits(self, rng):
        train, U = random_instance(rng, n=9, l=6)
        spec = KernelSpec("gaussian", 0.4)
        views = split_feature_views(train.n_features, spec, 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=0.0, max_basis=3, shared_index=False))
        for view, exp in m.views:
            Xv = view.project(train)
            single = fit_pursuit(ScoredDataset(Xv, train.scores, train.group_ids),
                                 Dictionary(spec, Xv), FitOptions(max_basis=3, backfit=False))
            np.testing.assert_array_equal(exp.indices, single.indices)
            np.testing.assert_allclose(exp.coefficients, single.coefficients, rtol=1e-10)

    @pytest.mark.parametrize("nu", [0.0, 0.5, 5.0])
    def test_identical_views_share_coefficients(self, rng, nu):
        train, U = random_instance(rng)
        spec = KernelSpec("gaussian", 0.3)
        v = ViewSpec(spec, [0, 1, 2])
        m = fit_semisupervised(train, U, [v, v], MultiViewFitOptions(nu=nu, max_basis=4))
        a, b = m.expansions
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-12)

    def test_small_instance_matches_dense_brute_force(self):
        # [DERIVED] dense-oracle equivalence, n=6, l=4, N=6, M=2, nu=1, P=2
        rng = np.random.default_rng(11)
        X = rng.normal(size=(6, 4))
        s = rng.normal(size=6)
        groups, ugroups = [0, 0, 0, 1, 1, 1], [0, 0, 1, 1]
        train = ScoredDataset(X, s, groups)
        U = UnscoredDataset(rng.normal(size=(4, 4)), ugroups)
        spec = KernelSpec("gaussian", 0.5)
        views = split_feature_views(4, spec, 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=1.0, max_basis=2))
        Ks = [Dictionary(spec, v.project(train)).columns(v.project(train)) for v in views]
        Kbs = [Dictionary(spec, v.project(train)).columns(v.project(U)) for v in views]
        chosen, hist = brute_multiview_fit(Ks, Kbs, s, groups, ugroups, 1.0, 2)
        assert m.expansions[0].indices.tolist() == chosen
        np.testing.assert_allclose(m.trace.objective, hist, rtol=1e-9, atol=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    def test_objective_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        train, U = random_instance(rng, n=14, l=10)
        views = split_feature_views(train.n_features, KernelSpec("gaussian", 0.3), 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=float(rng.uniform(0, 3)), max_basis=8))
        assert np.all(np.diff(m.trace.objective) <= 1e-10)

    def test_equal_p_across_views(self, rng):
        train, U = random_instance(rng)
        views = split_feature_views(train.n_features, KernelSpec("gaussian", 0.3), 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=1.0, max_basis=5))
        assert len({e.n_basis for e in m.expansions}) == 1

    def test_empty_unscored_is_legal(self, rng):
        train, _ = random_instance(rng)
        views = split_feature_views(train.n_features, KernelSpec("gaussian", 0.3), 2)
        m = fit_semisupervised(train, None, views, MultiViewFitOptions(nu=2.0, max_basis=3))
        assert m.expansions[0].n_basis == 3

    def test_joint_backfit_does_not_increase_full_objective(self, rng):
        from rankpursuit.multiview import _full_objective

        train, U = random_instance(rng, n=12, l=8)
        spec = KernelSpec("gaussian", 0.3)
        views = split_feature_views(train.n_features, spec, 2)
        plain = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=1.0, max_basis=4))
        joint = fit_semisupervised(train, U, views,
                                   MultiViewFitOptions(nu=1.0, max_basis=4, backfit_every_step=True))
        # compare the full co-regularized objective of the first selected set
        sel = [e.indices[:1] for e in plain.expansions]
        Ks = [Dictionary(spec, v.project(train)).columns(v.project(train))[:, s_] for v, s_ in zip(views, sel)]
        Kbs = [Dictionary(spec, v.project(train)).columns(v.project(U))[:, s_] for v, s_ in zip(views, sel)]
        from rankpursuit.data import build_preference_graph

        g, gb = build_preference_graph(train), build_preference_graph(U)
        c_plain = [e.coefficients[:1] for e in plain.expansions]
        c_joint = [np.asarray(c[:1]) for c in joint.trace.path[0][1]]
        assert (_full_objective(Ks, Kbs, c_joint, train.scores, g, gb, 1.0)
                <= _full_objective(Ks, Kbs, c_plain, train.scores, g, gb, 1.0) + 1e-10)

    def test_validation_stopping(self, rng):
        train, U = random_instance(rng, n=16, l=10)
        X = rng.normal(size=(12, 4))
        val = ScoredDataset(X, X[:, 0] - X[:, 2], [0] * 12)
        views = split_feature_views(4, KernelSpec("gaussian", 0.3), 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=1.0, max_basis=12, validation_set=val))
        t = m.trace
        assert m.expansions[0].n_basis == t.best_step == int(np.argmin(t.validation)) + 1

    def test_prefix(self, rng):
        train, U = random_instance(rng)
        views = split_feature_views(train.n_features, KernelSpec("gaussian", 0.3), 2)
        m = fit_semisupervised(train, U, views, MultiViewFitOptions(nu=1.0, max_basis=4))
        p2 = multiview_prefix(m, 2)
        assert [e.n_basis for e in p2.expansions] == [2, 2]
        assert multiview_prefix(m, 4).predict(train).tolist() == m.predict(train).tolist()

    def test_tuple_scan_guard(self, rng):
        n = 60
        X = rng.normal(size=(n, 6))
        train = ScoredDataset(X, rng.normal(size=n), [0] * n)
        views = split_feature_views(6, KernelSpec("gaussian", 0.1), 3)
        with pytest.raises(ValueError, match="tuple"):
            fit_semisupervised(train, None, views, MultiViewFitOptions(max_basis=1, shared_index=False))


class TestPredictAverage:
    def _model(self, coef_a, coef_b):
        spec = KernelSpec("linear")
        ea = SparseExpansion(spec, [[1.0]], [0], [coef_a])
        eb = SparseExpansion(spec, [[1.0]], [0], [coef_b])
        return MultiViewModel([(ViewSpec(spec, [0]), ea), (ViewSpec(spec, [1]), eb)], 1.0)

    def test_average_of_views(self):
        m = self._model(1.0, 1.0)
        # view 1 sees x0 = (1, 3), view 2 sees x1 = (3, 1)
        X = np.array([[1.0, 3.0], [3.0, 1.0]])
        np.testing.assert_array_equal(m.predict_views(X), [[1.0, 3.0], [3.0, 1.0]])
        np.testing.assert_array_equal(predict_average(m, X), [2.0, 2.0])

    def test_identical_views(self, rng):
        spec = KernelSpec("gaussian", 0.5)
        e = SparseExpansion(spec, rng.normal(size=(2, 3)), [0, 1], [0.5, -1.0])
        v = ViewSpec(spec)
        m = MultiViewModel([(v, e), (v, e)])
        X = rng.normal(size=(4, 3))
        np.testing.assert_allclose(m.predict(X), e.predict(X), rtol=1e-15)

    def test_empty(self):
        spec = KernelSpec()
        e = SparseExpansion(spec, np.zeros((0, 1)), [], [])
        m = MultiViewModel([(ViewSpec(spec, [0]), e), (ViewSpec(spec, [1]), e)])
        np.testing.assert_array_equal(m.predict(np.ones((3, 2))), np.zeros(3))
        assert MultiViewModel([]).predict(np.ones((2, 2))).tolist() == [0.0, 0.0]

    def test_dimension_mismatch(self, rng):
        spec = KernelSpec("gaussian", 0.5)
        e = SparseExpansion(spec, rng.normal(size=(1, 3)), [0], [1.0])
        m = MultiViewModel([(ViewSpec(spec), e)])
        with pytest.raises(ValueError):
            m.predict(np.ones((2, 2)))


def test_view_spec_validation():
    with pytest.raises(ValueError):
        ViewSpec(KernelSpec(), [])
    with pytest.raises(ValueError):
        split_feature_views(2, KernelSpec(), 3)
    views = split_feature_views(5, KernelSpec(), 2)
    assert [v.feature_slice.tolist() for v in views] == [[0, 1, 2], [3, 4]]
    with pytest.raises(ValueError):
        MultiViewFitOptions(nu=-1.0)
