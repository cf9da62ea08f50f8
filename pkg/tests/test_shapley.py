import math
from fractions import Fraction

import numpy as np
import pytest

from shapscan.errors import CapacityError, DimensionError, ParameterError, PredictorError
from shapscan.shapley import (
    Attribution,
    Dataset,
    Query,
    SelectionMatrix,
    build_selection_matrix,
    coalition_count,
    exact_shapley,
    expected_values,
    hypershap,
    shapley_weight,
    subsample_background,
    tau,
)

from bruteforce import brute_shapley


def linear(weights, intercept=0.0):
    w = np.asarray(weights, dtype=float)
    return lambda batch: np.asarray(batch, dtype=float) @ w + intercept


# ---------------------------------------------------------------------------
# types


class TestTypes:
    def test_dataset_validation(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((0, 3)))
        with pytest.raises(DimensionError):
            Dataset(np.zeros(3))
        with pytest.raises(ParameterError):
            Dataset([[1.0, np.nan]])
        d = Dataset([[1, 2], [3, 4]])
        assert (d.n, d.m) == (2, 2)

    def test_query_validation(self):
        with pytest.raises(ParameterError):
            Query([np.inf, 0.0])
        assert Query([1.0, 2.0]).m == 2

    def test_selection_matrix_rejects_duplicates_and_nonbinary(self):
        with pytest.raises(ParameterError):
            SelectionMatrix([[0, 1], [0, 1]])
        with pytest.raises(ParameterError):
            SelectionMatrix([[0, 2]])
        sel = SelectionMatrix([[0, 1], [1, 1]])
        assert (sel.c, sel.m) == (2, 2)

    def test_attribution_rejects_broken_efficiency(self):
        with pytest.raises(ParameterError):
            Attribution(phi0=0.0, phis=np.array([1.0, 1.0]), prediction=5.0)


# ---------------------------------------------------------------------------
# tau


class TestTau:
    def test_partial_substitution(self):
        assert tau([1, 2], [9, 9], [1, 0]).tolist() == [1, 9]

    def test_full_coalition_returns_query(self):
        assert tau([1, 2], [9, 9], [1, 1]).tolist() == [1, 2]

    def test_empty_coalition_returns_background(self):
        assert tau([1, 2], [9, 9], [0, 0]).tolist() == [9, 9]

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            tau([1, 2], [9, 9, 9], [1, 0])


# ---------------------------------------------------------------------------
# selection matrix construction


class TestBuildSelectionMatrix:
    def test_counts_m5_chi1(self):
        assert build_selection_matrix(5, 1).c == 12  # C(5,0)+C(5,1)+C(5,4)+C(5,5)

    def test_overlapping_ranges_deduplicate(self):
        sel = build_selection_matrix(4, 2)
        assert sel.c == 16  # all subsets of a 4-set, size ranges overlap at k=2

    def test_saturated_ranges(self):
        a = build_selection_matrix(3, 3)
        b = build_selection_matrix(3, 2)
        assert a.c == b.c == 8
        assert np.array_equal(a.rows, b.rows)

    def test_row_order_ascending_size_then_lex(self):
        rows = build_selection_matrix(3, 1).rows.tolist()
        assert rows == [
            [0, 0, 0],
            [0, 0, 1], [0, 1, 0], [1, 0, 0],
            [0, 1, 1], [1, 0, 1], [1, 1, 0],
            [1, 1, 1],
        ]

    def test_matches_closed_form_counts(self):
        for m in range(1, 13):
            for chi in range(1, m + 1):
                sizes = set(range(0, chi + 1)) | set(range(m - chi, m + 1))
                expected = sum(math.comb(m, k) for k in sizes)
                assert build_selection_matrix(m, chi).c == expected
                assert coalition_count(m, chi) == expected

    def test_chi_out_of_range(self):
        with pytest.raises(ParameterError):
            build_selection_matrix(4, 0)
        with pytest.raises(ParameterError):
            build_selection_matrix(4, 5)


# ---------------------------------------------------------------------------
# kernel weights


class TestShapleyWeight:
    def test_rescaled_branch(self):
        # m=4, chi=1 < ceil(4/2): (0! 3! / 4!) * 4/2 = 0.5
        assert shapley_weight(4, 1, 0) == pytest.approx(0.5, abs=1e-15)

    def test_excluded_band_is_zero(self):
        assert shapley_weight(4, 1, 1) == 0.0
        assert shapley_weight(4, 1, 2) == 0.0

    def test_unrescaled_branch(self):
        # m=4, chi=2 = ceil(4/2): 1! 2! / 4! = 1/12
        expected = float(Fraction(1, 12))
        assert shapley_weight(4, 2, 1) == pytest.approx(expected, abs=1e-15)

    def test_matches_exact_rational_formula(self):
        for m in range(1, 9):
            for chi in range(1, m + 1):
                rescale = Fraction(m, 2 * chi) if chi < (m + 1) // 2 else Fraction(1)
                for b in range(m):
                    if chi - 1 < b < m - chi:
                        assert shapley_weight(m, chi, b) == 0.0
                    else:
                        exact = Fraction(math.factorial(b) * math.factorial(m - b - 1),
                                         math.factorial(m)) * rescale
                        assert shapley_weight(m, chi, b) == pytest.approx(float(exact), rel=1e-14)

    def test_normalization(self):
        for m in range(1, 33):
            for chi in range(1, m + 1):
                total = math.fsum(
                    math.comb(m - 1, b) * shapley_weight(m, chi, b) for b in range(m)
                )
                assert abs(total - 1.0) <= 1e-12

    def test_b_out_of_range(self):
        with pytest.raises(ParameterError):
            shapley_weight(4, 2, -1)
        with pytest.raises(ParameterError):
            shapley_weight(4, 2, 4)


# ---------------------------------------------------------------------------
# expected values


class TestExpectedValues:
    def test_all_zero_row_gives_background_mean(self):
        X = [[0.0, 1.0], [2.0, 3.0]]
        f = linear([1.0, 1.0])
        mu = expected_values(X, [5.0, 5.0], f, [[0, 0]])
        assert mu[0] == pytest.approx((1.0 + 5.0) / 2)

    def test_all_one_row_gives_query_prediction(self):
        X = [[0.0, 1.0], [2.0, 3.0]]
        f = linear([1.0, 1.0])
        mu = expected_values(X, [5.0, 5.0], f, [[1, 1]])
        assert mu[0] == pytest.approx(10.0)

    def test_hand_computed_mixed_row(self):
        # composites are (1,0) and (1,0): f = x1 + x2 gives mean 1.0
        mu = expected_values([[0.0, 0.0], [2.0, 0.0]], [1.0, 1.0],
                             linear([1.0, 1.0]), [[1, 0]])
        assert mu[0] == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(5, 4))
        q = rng.normal(size=4)
        w = rng.normal(size=4)
        f = linear(w, 0.3)
        Z = build_selection_matrix(4, 2)
        mu = expected_values(X, q, f, Z)
        for j, z in enumerate(Z.rows):
            acc = [float(f(np.where(z != 0, q, row)[None, :])[0]) for row in X]
            assert mu[j] == pytest.approx(sum(acc) / len(acc), rel=1e-12)

    def test_predictor_failure_carries_row_index(self):
        def broken(batch):
            batch = np.asarray(batch)
            if np.any(batch[:, 0] > 0.5):
                raise RuntimeError("boom")
            return np.zeros(batch.shape[0])

        with pytest.raises(PredictorError, match="selection row"):
            expected_values([[0.0, 0.0]], [1.0, 1.0], broken, [[0, 0], [1, 0]])

    def test_nonfinite_predictions_rejected(self):
        def nanny(batch):
            return np.full(np.asarray(batch).shape[0], np.nan)

        with pytest.raises(PredictorError):
            expected_values([[0.0, 0.0]], [1.0, 1.0], nanny, [[0, 0]])


# ---------------------------------------------------------------------------
# hypershap


class TestHypershap:
    def test_two_feature_linear_exact(self):
        attr = hypershap([[0.0, 0.0]], [1.0, 1.0], linear([1.0, 2.0]), chi=1)
        assert attr.phis[0] == pytest.approx(1.0, abs=1e-12)
        assert attr.phis[1] == pytest.approx(2.0, abs=1e-12)
        assert attr.phi0 == pytest.approx(0.0, abs=1e-12)

    def test_ignored_features_get_zero(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(6, 3))
        q = rng.normal(size=3)
        f = lambda batch: np.asarray(batch)[:, 0].copy()
        for chi in (1, 2, 3):
            attr = hypershap(X, q, f, chi)
            assert abs(attr.phis[1]) <= 1e-12
            assert abs(attr.phis[2]) <= 1e-12

    def test_efficiency_identity(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(4, 5))
        q = rng.normal(size=5)
        f = lambda batch: np.sin(np.asarray(batch)).sum(axis=1)
        for chi in range(1, 6):
            attr = hypershap(X, q, f, chi)
            total = attr.phi0 + float(np.add.reduce(attr.phis))
            assert abs(total - attr.prediction) <= 1e-12 * max(1.0, abs(attr.prediction))

    def test_exact_at_half_depth_vs_bruteforce(self):
        rng = np.random.default_rng(19)
        for m in (2, 3, 4, 5):
            X = rng.normal(size=(3, m))
            q = rng.normal(size=m)
            w = rng.normal(size=m)
            pair = rng.normal()

            def f(batch, w=w, pair=pair):
                batch = np.asarray(batch, dtype=float)
                return batch @ w + pair * batch[:, 0] * batch[:, -1]

            expected = brute_shapley(X, q, f)
            attr = hypershap(X, q, f, chi=(m + 1) // 2)
            np.testing.assert_allclose(attr.phis, expected, atol=1e-9)

    def test_additive_model_exact_at_every_depth(self):
        rng = np.random.default_rng(23)
        m = 6
        X = rng.normal(size=(9, m))
        q = rng.normal(size=m)
        w = rng.normal(size=m)
        expected = w * (q - X.mean(axis=0))
        for chi in range(1, m + 1):
            attr = hypershap(X, q, linear(w, 0.7), chi)
            np.testing.assert_allclose(attr.phis, expected, atol=1e-9)

    def test_single_feature_degenerate_case(self):
        X = [[0.0], [4.0]]
        f = linear([1.0])
        attr = hypershap(X, [3.0], f, chi=1)
        assert attr.phis[0] == pytest.approx(3.0 - 2.0)
        assert attr.phi0 == pytest.approx(2.0)

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(31)
        X = rng.normal(size=(8, 6))
        q = rng.normal(size=6)
        f = lambda batch: np.prod(np.asarray(batch), axis=1)
        a = hypershap(X, q, f, chi=2)
        b = hypershap(X, q, f, chi=2)
        assert a.phis.tobytes() == b.phis.tobytes()
        assert a.phi0 == b.phi0

    def test_budget_guard(self):
        X = np.zeros((10, 8))
        with pytest.raises(CapacityError, match="budget"):
            hypershap(X, np.ones(8), linear(np.ones(8)), chi=4, eval_budget=100)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            hypershap([[0.0, 0.0]], [1.0], linear([1.0, 1.0]), chi=1)


# ---------------------------------------------------------------------------
# exact shapley


class TestExactShapley:
    def test_linear_closed_form(self):
        rng = np.random.default_rng(41)
        m = 4
        X = rng.normal(size=(7, m))
        q = rng.normal(size=m)
        w = rng.normal(size=m)
        attr = exact_shapley(X, q, linear(w, -0.4))
        np.testing.assert_allclose(attr.phis, w * (q - X.mean(axis=0)), atol=1e-9)

    def test_constant_model(self):
        f = lambda batch: np.full(np.asarray(batch).shape[0], 2.5)
        attr = exact_shapley([[0.0, 1.0], [2.0, 3.0]], [9.0, 9.0], f)
        np.testing.assert_allclose(attr.phis, 0.0, atol=1e-12)
        assert attr.phi0 == pytest.approx(2.5)

    def test_product_symmetry_hand_enumeration(self):
        # E_empty=2, E_{1}=E_{2}=1, E_{12}=1: phi1 = phi2 = -0.5, phi0 = 2
        f = lambda batch: np.prod(np.asarray(batch), axis=1)
        attr = exact_shapley([[0.0, 0.0], [2.0, 2.0]], [1.0, 1.0], f)
        assert attr.phis[0] == pytest.approx(-0.5, abs=1e-12)
        assert attr.phis[1] == pytest.approx(-0.5, abs=1e-12)
        assert attr.phi0 == pytest.approx(2.0, abs=1e-12)

    def test_agrees_with_bruteforce(self):
        rng = np.random.default_rng(43)
        m = 4
        X = rng.normal(size=(3, m))
        q = rng.normal(size=m)

        def f(batch):
            batch = np.asarray(batch, dtype=float)
            return np.tanh(batch).sum(axis=1) + batch[:, 1] * batch[:, 2]

        np.testing.assert_allclose(exact_shapley(X, q, f).phis, brute_shapley(X, q, f),
                                   atol=1e-9)

    def test_capacity_guard_names_hypershap(self):
        X = np.zeros((1, 21))
        with pytest.raises(CapacityError, match="hypershap"):
            exact_shapley(X, np.zeros(21), linear(np.ones(21)))


# ---------------------------------------------------------------------------
# axiom properties across depths


class TestAxioms:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        m = 4
        col = rng.normal(size=5)
        X = np.column_stack([col, col, rng.normal(size=5), rng.normal(size=5)])
        qv = rng.normal()
        q = np.array([qv, qv, rng.normal(), rng.normal()])

        def f(batch):
            batch = np.asarray(batch, dtype=float)
            return batch[:, 0] * batch[:, 1] + 0.5 * (batch[:, 0] + batch[:, 1]) + batch[:, 3]

        for chi in range(1, m + 1):
            attr = hypershap(X, q, f, chi)
            assert abs(attr.phis[0] - attr.phis[1]) <= 1e-12

    @pytest.mark.parametrize("chi", [1, 2, 3])
    def test_linearity(self, chi):
        rng = np.random.default_rng(17)
        m = 5
        X = rng.normal(size=(4, m))
        q = rng.normal(size=m)
        w1, w2 = rng.normal(size=m), rng.normal(size=m)
        f = linear(w1, 0.2)
        g = lambda batch: np.cos(np.asarray(batch) @ w2)
        alpha, beta = 1.7, -0.6
        combo = lambda batch: alpha * f(batch) + beta * g(batch)
        a = hypershap(X, q, f, chi)
        b = hypershap(X, q, g, chi)
        c = hypershap(X, q, combo, chi)
        np.testing.assert_allclose(c.phis, alpha * a.phis + beta * b.phis, atol=1e-9)

    def test_background_identical_to_query_gives_zero(self):
        q = np.array([0.3, 0.7, 0.1])
        X = np.tile(q, (4, 1))
        f = lambda batch: np.asarray(batch).sum(axis=1) ** 2
        attr = hypershap(X, q, f, chi=2)
        np.testing.assert_allclose(attr.phis, 0.0, atol=1e-12)
        assert attr.phi0 == pytest.approx(attr.prediction)


# ---------------------------------------------------------------------------
# subsampling


class TestSubsample:
    def test_small_background_unchanged(self):
        X = Dataset(np.arange(12, dtype=float).reshape(6, 2))
        assert subsample_background(X, 10) is X

    def test_stride_subsample_deterministic(self):
        X = np.arange(1000, dtype=float).reshape(500, 2)
        sub = subsample_background(X, 100)
        assert sub.n == 100
        again = subsample_background(X, 100)
        assert np.array_equal(sub.rows, again.rows)
        # first row kept, indices strictly increasing
        assert sub.rows[0, 0] == 0.0
        assert np.all(np.diff(sub.rows[:, 0]) > 0)

    def test_hypershap_applies_cap(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(600, 3))
        q = rng.normal(size=3)
        f = linear([1.0, -1.0, 0.5])
        capped = hypershap(X, q, f, chi=2, background_cap=64)
        manual = hypershap(subsample_background(X, 64).rows, q, f, chi=2, background_cap=None)
        assert capped.phis.tobytes() == manual.phis.tobytes()
