import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_L, dense_Lw, random_groups, random_scored
from oracles import brute_candidate, brute_select, golden_minimize_coefficient, reference_matching_pursuit
from rankpursuit import (
    Dictionary,
    FitOptions,
    KernelSpec,
    PreferenceGraph,
    ScoredDataset,
    SparseExpansion,
    WeightedLaplacian,
    backfit,
    evaluate_candidate,
    fit_crrp,
    fit_matching_pursuit,
    fit_pursuit,
    normalized_disagreement,
    predict,
    select_best,
)
from rankpursuit.data import _group_codes
from rankpursuit.pursuit import CandidatesExhausted, DegenerateCandidate, FitState


def wl(groups, beta=0.0):
    return WeightedLaplacian(PreferenceGraph(_group_codes(list(groups))), beta)


@pytest.fixture
def linear_example():
    # one group, x = 1, 2, 3, s = 3, 2, 1
    return ScoredDataset([[1.0], [2.0], [3.0]], [3.0, 2.0, 1.0], ["q"] * 3)


# ------------------------------------------------------------ evaluate_candidate


class TestEvaluateCandidate:
    def test_identity_weighting(self):
        a, J = evaluate_candidate([2.0, 0.0], [1.0, 0.0], wl([0, 1], beta=1.0))
        assert (a, J) == (2.0, 0.0)

    def test_pair_laplacian(self):
        # [DERIVED] k'Lk = 1, k'Lr = -1, r'Lr = 1 with L = [[1,-1],[-1,1]]
        Ld = dense_L([0, 0])
        k, r = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert (k @ Ld @ k, k @ Ld @ r, r @ Ld @ r) == (1.0, -1.0, 1.0)
        a, J = evaluate_candidate(r, k, wl([0, 0]))
        assert a == -1.0 and J == pytest.approx(0.0, abs=1e-15)

    def test_groupwise_constant_is_degenerate(self):
        with pytest.raises(DegenerateCandidate):
            evaluate_candidate([1.0, 2.0], [1.0, 1.0], wl([0, 0]))

    @settings(max_examples=60)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.3, 1.0]))
    def test_matches_weighted_least_squares(self, seed, beta):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 15))
        groups = random_groups(rng, n)
        r, k = rng.normal(size=n), rng.normal(size=n)
        Ld = dense_Lw(groups, beta)
        if k @ Ld @ k < 1e-8:
            return
        a, J = evaluate_candidate(r, k, wl(groups, beta))
        a_ref, J_ref = brute_candidate(r, k, Ld)
        assert a == pytest.approx(a_ref, rel=1e-9, abs=1e-10)
        assert J == pytest.approx(J_ref, rel=1e-9, abs=1e-10)
        # closed form J = r'Lr - (k'Lr)^2 / k'Lk
        assert J == pytest.approx(r @ Ld @ r - (k @ Ld @ r) ** 2 / (k @ Ld @ k), rel=1e-8, abs=1e-9)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_coefficient_is_a_minimizer(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 12))
        groups = random_groups(rng, n)
        r, k = rng.normal(size=n), rng.normal(size=n)
        lap = wl(groups, 0.0)
        a, J = evaluate_candidate(r, k, lap)
        Ld = dense_L(groups)
        assert golden_minimize_coefficient(r, k, Ld) == pytest.approx(a, abs=1e-8 * max(1, abs(a)))
        for eps in rng.normal(scale=0.1, size=20):
            e = r - (a + eps) * k
            assert e @ Ld @ e >= J - 1e-10


# ------------------------------------------------------------ select_best


class TestSelectBest:
    def test_single_exact_candidate(self):
        K = np.array([[1.0], [0.0]])
        g, a, J = select_best(np.array([3.0, 0.0]), K, wl([0, 1], 1.0))
        assert (g, a) == (0, 3.0) and J == 0.0

    def test_ties_go_to_lowest_index(self):
        # columns 1 and 2 are identical; column 0 is useless at beta = 0
        K = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 2.0, 2.0]])
        g, _, _ = select_best(np.array([1.0, 0.0, 2.0]), K, wl([0, 0, 0]))
        assert g == 1
        g, _, _ = select_best(np.array([1.0, 0.0, 2.0]), K[:, ::-1], wl([0, 0, 0]))
        assert g == 0  # reversed order: the identical pair now sits at 0 and 1

    def test_near_tie_within_tolerance(self):
        K = np.array([[1.0, 1.0 + 1e-17], [0.0, 0.0]])
        g, _, _ = select_best(np.array([1.0, 0.0]), K, wl([0, 1], 1.0))
        assert g == 0

    def test_excluded_and_exhausted(self):
        K = np.eye(3)
        lap = wl([0, 1, 2], 1.0)
        g, _, _ = select_best(np.array([0.0, 0.0, 5.0]), K, lap, excluded={2})
        assert g != 2
        with pytest.raises(CandidatesExhausted):
            select_best(np.zeros(3), K, lap, excluded={0, 1, 2})

    def test_all_degenerate(self):
        K = np.ones((3, 2))
        with pytest.raises(CandidatesExhausted):
            select_best(np.array([1.0, 2.0, 3.0]), K, wl([0, 0, 0]))

    def test_accepts_state_and_dictionary(self, rng):
        ds = random_scored(rng, n=8)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        lap = WeightedLaplacian(PreferenceGraph(_group_codes(list(ds.group_ids))), 0.0)
        by_matrix = select_best(ds.scores, d.columns(ds), lap)
        by_dict = select_best(FitState(np.array(ds.scores)), (d, ds), lap)
        assert by_matrix == by_dict

    def test_ten_point_instance(self):
        # [DERIVED] exhaustive scan oracle
        rng = np.random.default_rng(3)
        groups = random_groups(rng, 10, 3)
        K = rng.normal(size=(10, 10))
        r = rng.normal(size=10)
        g, a, J = select_best(r, K, wl(groups))
        g_ref, a_ref, J_ref = brute_select(r, K, dense_L(groups))
        assert g == g_ref
        assert a == pytest.approx(a_ref, abs=1e-10)
        assert J == pytest.approx(J_ref, abs=1e-10)

    @settings(max_examples=80)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0]))
    def test_greedy_optimality(self, seed, beta):
        rng = np.random.default_rng(seed)
        n, N = int(rng.integers(3, 21)), int(rng.integers(1, 21))
        groups = random_groups(rng, n, min_rank=2)
        K, r = rng.normal(size=(n, N)), rng.normal(size=n)
        Ld = dense_Lw(groups, beta)
        ref = brute_select(r, K, Ld)
        if ref is None:
            with pytest.raises(CandidatesExhausted):
                select_best(r, K, wl(groups, beta))
            return
        g, a, J = select_best(r, K, wl(groups, beta))
        assert g == ref[0]
        assert a == pytest.approx(ref[1], rel=1e-9, abs=1e-10)
        assert J == pytest.approx(ref[2], rel=1e-9, abs=1e-10)


# ------------------------------------------------------------ backfit


class TestBackfit:
    def test_single_column_matches_candidate(self, rng):
        groups = [0, 0, 0, 1, 1]
        k, s = rng.normal(size=5), rng.normal(size=5)
        a, _ = evaluate_candidate(s, k, wl(groups))
        np.testing.assert_allclose(backfit(k, s, wl(groups)), [a], rtol=1e-12)

    def test_hand_example(self):
        # [DERIVED] K'LK = [[6,-3],[-3,2]], K'Ls = (-6,3) built from the dense L
        Ld = dense_L([0, 0, 0])
        K = np.array([[1.0, 1.0], [2.0, 0.0], [3.0, 0.0]])
        s = np.array([3.0, 2.0, 1.0])
        np.testing.assert_array_equal(K.T @ Ld @ K, [[6, -3], [-3, 2]])
        np.testing.assert_array_equal(K.T @ Ld @ s, [-6, 3])
        np.testing.assert_allclose(backfit(K, s, wl([0, 0, 0])), [-1.0, 0.0], atol=1e-12)

    def test_duplicate_columns_with_jitter(self, rng):
        groups = [0] * 6
        k = rng.normal(size=6)
        K = np.column_stack([k, k])
        s = rng.normal(size=6)
        a = backfit(K, s, wl(groups), jitter=1e-8)
        assert np.all(np.isfinite(a))
        Ld = dense_L(groups)
        a1, J1 = brute_candidate(s, k, Ld)
        e = s - K @ a
        assert e @ Ld @ e <= J1 + 1e-8

    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1))
    def test_never_worse_than_dense_solution(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 15))
        P = int(rng.integers(1, 4))
        groups = random_groups(rng, n, 2)
        K, s = rng.normal(size=(n, P)), rng.normal(size=n)
        Ld = dense_L(groups)
        a = backfit(K, s, wl(groups))
        from oracles import sqrt_factor

        S = sqrt_factor(Ld)
        a_ref = np.linalg.lstsq(S @ K, S @ s, rcond=None)[0]
        e, e_ref = s - K @ a, s - K @ a_ref
        assert e @ Ld @ e == pytest.approx(e_ref @ Ld @ e_ref, rel=1e-8, abs=1e-9)


# ------------------------------------------------------------ fit_pursuit


class TestFitPursuit:
    def test_linear_example(self, linear_example):
        # [DERIVED] Lk = (-3,0,3), k'Ls = -6, k'Lk = 6 for the column (1,2,3)
        d = Dictionary(KernelSpec("linear"), linear_example.features)
        m = fit_pursuit(linear_example, d, FitOptions(max_basis=1))
        assert m.indices.tolist() == [0]
        assert m.coefficients[0] == pytest.approx(-1.0, abs=1e-14)
        assert m.trace.objective[-1] == pytest.approx(0.0, abs=1e-12)
        f = m.predict(linear_example)
        np.testing.assert_allclose(f, [-1.0, -2.0, -3.0], atol=1e-14)
        g = PreferenceGraph(_group_codes(["q"] * 3))
        assert normalized_disagreement(linear_example.scores, f, g) == 0.0

    def test_zero_basis(self, rng):
        ds = random_scored(rng)
        m = fit_pursuit(ds, Dictionary(KernelSpec(), ds.features), FitOptions(max_basis=0))
        assert m.n_basis == 0
        np.testing.assert_array_equal(m.predict(ds), np.zeros(len(ds)))

    def test_beta_one_is_matching_pursuit(self, rng):
        ds = random_scored(rng, n=15, d=2)
        d = Dictionary(KernelSpec("gaussian", 0.7), ds.features)
        m = fit_pursuit(ds, d, FitOptions(max_basis=6, beta=1.0))
        ref = reference_matching_pursuit(d.columns(ds), np.array(ds.scores), 6)
        for (idx, coef), (ridx, rcoef) in zip(m.trace.path, ref):
            assert idx.tolist() == ridx
            np.testing.assert_allclose(coef, rcoef, atol=1e-10)
        assert fit_matching_pursuit(ds, d, FitOptions(max_basis=6)).indices.tolist() == m.indices.tolist()

    def test_crrp_beta_zero_is_ranking(self, rng):
        ds = random_scored(rng, n=12)
        d = Dictionary(KernelSpec("gaussian", 0.4), ds.features)
        a = fit_crrp(ds, d, 0.0, FitOptions(max_basis=4))
        b = fit_pursuit(ds, d, FitOptions(max_basis=4))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    @pytest.mark.parametrize("every_step", [True, False])
    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
    def test_objective_monotone(self, every_step, beta):
        for seed in range(10):
            ds = random_scored(np.random.default_rng(seed), n=18, d=3)
            d = Dictionary(KernelSpec("gaussian", 0.3), ds.features)
            m = fit_pursuit(ds, d, FitOptions(max_basis=10, beta=beta, backfit_every_step=every_step))
            J = np.array(m.trace.objective)
            assert np.all(np.diff(J) <= 1e-10)

    def test_residual_invariant(self, rng):
        ds = random_scored(rng, n=14)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        m = fit_pursuit(ds, d, FitOptions(max_basis=5))
        lap = wl(list(ds.group_ids))
        K = d.columns(ds)
        for (idx, coef), J in zip(m.trace.path, m.trace.objective[1:]):
            r = ds.scores - K[:, idx] @ coef
            assert r @ lap.apply(r) == pytest.approx(J, rel=1e-10, abs=1e-12)

    def test_backfit_every_step_never_hurts(self, rng):
        ds = random_scored(rng, n=20)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        with_bf = fit_pursuit(ds, d, FitOptions(max_basis=8))
        without = fit_pursuit(ds, d, FitOptions(max_basis=8, backfit=False))
        assert with_bf.trace.objective[1] == pytest.approx(without.trace.objective[1])
        assert with_bf.trace.objective[-1] <= without.trace.objective[-1] + 1e-10

    def test_indices_distinct(self, rng):
        ds = random_scored(rng, n=10)
        d = Dictionary(KernelSpec("gaussian", 0.2), ds.features)
        m = fit_pursuit(ds, d, FitOptions(max_basis=10))
        assert len(set(m.indices.tolist())) == m.n_basis

    def test_exhaustion_warns_and_returns_model(self):
        ds = ScoredDataset([[0.0], [1.0], [2.0]], [1.0, 3.0, 2.0], [0, 0, 0])
        # the zero center gives a constant (degenerate) column under a linear kernel
        d = Dictionary(KernelSpec("linear"), [[0.0], [2.0]])
        with pytest.warns(RuntimeWarning, match="exhausted"):
            m = fit_pursuit(ds, d, FitOptions(max_basis=2))
        assert m.trace.exhausted
        assert m.indices.tolist() == [1]

    def test_validation_stopping_returns_best_prefix(self, rng):
        X = rng.normal(size=(40, 2))
        s = X[:, 0] + 0.5 * rng.normal(size=40)
        train = ScoredDataset(X[:20], s[:20], [0] * 20)
        val = ScoredDataset(X[20:], s[20:], [0] * 20)
        d = Dictionary(KernelSpec("gaussian", 2.0), train.features)
        m = fit_pursuit(train, d, FitOptions(max_basis=20, validation_set=val, patience=3))
        t = m.trace
        assert t.best_step == int(np.argmin(t.validation)) + 1
        assert len(t.validation) <= t.best_step + 3
        assert m.n_basis == t.best_step
        g = PreferenceGraph(_group_codes([0] * 20))
        assert normalized_disagreement(val.scores, m.predict(val), g) == pytest.approx(min(t.validation))

    def test_score_shift_invariance(self, rng):
        ds = random_scored(rng, n=16, max_groups=3)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        g0 = ds.group_ids[0]
        shifted = ScoredDataset(ds.features, ds.scores + 7.5 * (ds.group_ids == g0), ds.group_ids)
        a = fit_pursuit(ds, d, FitOptions(max_basis=5))
        b = fit_pursuit(shifted, d, FitOptions(max_basis=5))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-8, atol=1e-9)

    def test_precomputed_columns(self, rng):
        ds = random_scored(rng)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        a = fit_pursuit(ds, d, FitOptions(max_basis=4))
        b = fit_pursuit(ds, d, FitOptions(max_basis=4), columns=d.columns(ds))
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_prefix(self, rng):
        ds = random_scored(rng, n=15)
        d = Dictionary(KernelSpec("gaussian", 0.5), ds.features)
        m = fit_pursuit(ds, d, FitOptions(max_basis=5))
        p2 = m.prefix(2)
        idx, coef = m.trace.path[1]
        np.testing.assert_array_equal(p2.indices, idx)
        np.testing.assert_array_equal(p2.coefficients, coef)
        assert m.prefix(0).n_basis == 0
        with pytest.raises(ValueError):
            m.prefix(6)

    def test_invalid_options(self):
        with pytest.raises(ValueError):
            FitOptions(beta=2.0)
        with pytest.raises(ValueError):
            FitOptions(max_basis=-1)


class TestPredict:
    def test_empty_model(self):
        m = SparseExpansion(KernelSpec(), np.zeros((0, 2)), [], [])
        np.testing.assert_array_equal(predict(m, np.ones((3, 2))), np.zeros(3))

    def test_single_basis_at_center(self):
        m = SparseExpansion(KernelSpec("gaussian", 0.9), [[1.0, -1.0]], [0], [2.0])
        assert predict(m, [[1.0, -1.0]])[0] == 2.0

    def test_dimension_mismatch(self):
        m = SparseExpansion(KernelSpec(), [[1.0, 2.0]], [0], [1.0])
        with pytest.raises(ValueError, match="dimension"):
            predict(m, [[1.0, 2.0, 3.0]])

    def test_invariants(self):
        with pytest.raises(ValueError):
            SparseExpansion(KernelSpec(), [[1.0], [2.0]], [0, 0], [1.0, 2.0])
        with pytest.raises(ValueError):
            SparseExpansion(KernelSpec(), [[1.0]], [0, 1], [1.0, 2.0])
