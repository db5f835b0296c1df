"""Tests for contingency tables, Hungarian matching, accuracy, ARI, purity."""

import numpy as np
import pytest

from spiralcluster import metrics
from spiralcluster.errors import ContractError

from oracles import (
    accuracy_relabel_bruteforce,
    ari_pair_counting,
    assignment_bruteforce,
)


class TestContingency:
    def test_diagonal_counts(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 0, 1, 1])
        assert t.w.tolist() == [[2, 0], [0, 2]]
        assert t.e.tolist() == [2, 2]
        assert t.f.tolist() == [2, 2]
        assert t.n == 4

    def test_single_cluster_prediction(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 0, 0, 0])
        assert t.w.tolist() == [[2, 2]]
        assert t.e.tolist() == [4]
        assert t.f.tolist() == [2, 2]

    def test_single_sample(self):
        t = metrics.contingency([0], [0])
        assert t.w.tolist() == [[1]]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            metrics.contingency([0, 1], [0])

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            metrics.contingency([], [])

    def test_non_contiguous_ids_canonicalized(self):
        t = metrics.contingency([7, 7, 3], [10, 2, 2])
        assert t.col_ids == [7, 3]
        assert t.row_ids == [10, 2]
        assert t.w.tolist() == [[1, 0], [1, 1]]

    def test_string_labels(self):
        t = metrics.contingency(["p", "p", "c"], [1, 1, 0])
        assert t.col_ids == ["p", "c"]
        assert t.n == 3


class TestHungarian:
    def test_diagonal_dominant(self):
        assert metrics.hungarian(np.array([[1.0, 2.0], [2.0, 1.0]])) == {0: 0, 1: 1}

    def test_cross_assignment(self):
        # Brute force over both 2x2 permutations: diag cost 7, cross cost 3.
        assert metrics.hungarian(np.array([[4.0, 1.0], [2.0, 3.0]])) == {0: 1, 1: 0}

    def test_empty_matrix(self):
        assert metrics.hungarian(np.zeros((0, 0))) == {}

    def test_lexicographic_tie_break(self):
        assert metrics.hungarian(np.ones((3, 3))) == {0: 0, 1: 1, 2: 2}

    def test_rectangular_row_skip_prefers_early_rows(self):
        # Both rows tie; lexicographic rule assigns row 0 and skips row 1.
        assignment = metrics.hungarian(np.array([[1.0], [1.0]]))
        assert assignment == {0: 0}

    @pytest.mark.parametrize("trial", range(40))
    def test_matches_bruteforce_square(self, trial):
        rng = np.random.default_rng(1000 + trial)
        n = int(rng.integers(2, 7))
        cost = rng.integers(0, 20, size=(n, n)).astype(float)
        oracle_cost, oracle_map = assignment_bruteforce(cost)
        got = metrics.hungarian(cost)
        got_cost = sum(cost[r, c] for r, c in got.items())
        assert got_cost == pytest.approx(oracle_cost, abs=1e-9)
        assert got == oracle_map

    @pytest.mark.parametrize("shape", [(3, 5), (5, 3), (2, 6), (6, 2)])
    def test_matches_bruteforce_rectangular(self, shape):
        rng = np.random.default_rng(hash(shape) % (2**32))
        for _ in range(20):
            cost = rng.integers(0, 15, size=shape).astype(float)
            oracle_cost, oracle_map = assignment_bruteforce(cost)
            got = metrics.hungarian(cost)
            assert sum(cost[r, c] for r, c in got.items()) == pytest.approx(oracle_cost)
            assert len(got) == min(shape)
            assert got == oracle_map

    def test_nonfinite_rejected(self):
        with pytest.raises(ContractError):
            metrics.hungarian(np.array([[np.nan, 1.0], [1.0, 0.0]]))


class TestClusteringAccuracy:
    def test_pure_permutation(self):
        t = metrics.contingency([0, 0, 1, 1], [1, 1, 0, 0])
        assert metrics.clustering_accuracy(t) == 1.0

    def test_half_right(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 1, 0, 1])
        assert metrics.clustering_accuracy(t) == 0.5

    def test_three_of_four(self):
        t = metrics.contingency([0, 0, 0, 1], [0, 0, 1, 1])
        assert metrics.clustering_accuracy(t) == 0.75

    @pytest.mark.parametrize("trial", range(60))
    def test_matches_relabel_bruteforce(self, trial):
        rng = np.random.default_rng(2000 + trial)
        n = int(rng.integers(2, 40))
        k_true = int(rng.integers(1, 5))
        k_pred = int(rng.integers(1, 5))
        y = rng.integers(0, k_true, size=n).tolist()
        yhat = rng.integers(0, k_pred, size=n).tolist()
        t = metrics.contingency(y, yhat)
        assert metrics.clustering_accuracy(t) == pytest.approx(
            accuracy_relabel_bruteforce(y, yhat), abs=1e-12
        )

    def test_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            y = rng.integers(0, 4, size=n).tolist()
            yhat = rng.integers(0, 6, size=n).tolist()
            acc = metrics.clustering_accuracy(metrics.contingency(y, yhat))
            assert 0.0 <= acc <= 1.0


class TestAri:
    def test_perfect_agreement(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 0, 1, 1])
        assert metrics.ari(t) == 1.0

    def test_worse_than_chance(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 1, 0, 1])
        assert metrics.ari(t) == -0.5

    def test_chance_level_single_cluster(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 0, 0, 0])
        assert metrics.ari(t) == 0.0

    def test_degenerate_returns_one(self):
        t = metrics.contingency([0, 0, 0], [1, 1, 1])
        assert metrics.ari(t) == 1.0
        assert metrics.ari_is_degenerate(t)

    def test_requires_two_samples(self):
        with pytest.raises(ContractError):
            metrics.ari(metrics.contingency([0], [0]))

    def test_exhaustive_small_sweep(self):
        # Every canonical labeling pair with n <= 5, K <= 3.
        def canonical(n, kmax):
            seqs = [[0]]
            for _ in range(n - 1):
                seqs = [
                    s + [v]
                    for s in seqs
                    for v in range(min(max(s) + 2, kmax))
                ]
            return seqs

        for n in range(2, 6):
            labelings = canonical(n, 3)
            for y in labelings:
                for yhat in labelings:
                    t = metrics.contingency(y, yhat)
                    assert metrics.ari(t) == pytest.approx(
                        ari_pair_counting(y, yhat), abs=1e-12
                    )

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            a = rng.integers(0, 4, size=n).tolist()
            b = rng.integers(0, 5, size=n).tolist()
            ab = metrics.ari(metrics.contingency(a, b))
            ba = metrics.ari(metrics.contingency(b, a))
            assert ab == pytest.approx(ba, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(13)
        y = rng.integers(0, 3, size=30).tolist()
        yhat = rng.integers(0, 3, size=30).tolist()
        base = metrics.evaluate(y, yhat)
        relabel = {0: 2, 1: 0, 2: 1}
        mapped = [relabel[v] for v in yhat]
        permuted = metrics.evaluate(y, mapped)
        assert permuted.ari == pytest.approx(base.ari, abs=1e-12)
        assert permuted.accuracy == pytest.approx(base.accuracy, abs=1e-12)
        assert sorted(permuted.purity) == pytest.approx(sorted(base.purity))


class TestPurity:
    def test_single_class_cluster(self):
        t = metrics.contingency([0] * 5, [0] * 5)
        assert metrics.purity(t) == [1.0]

    def test_three_quarters(self):
        # One cluster holding 3 of class 0 and 1 of class 1.
        t = metrics.contingency([0, 0, 0, 1], [0, 0, 0, 0])
        assert metrics.purity(t) == [0.75]

    def test_tie(self):
        t = metrics.contingency([0, 0, 1, 1], [0, 0, 0, 0])
        assert metrics.purity(t) == [0.5]


class TestEvaluate:
    def test_perfect_permuted(self):
        rep = metrics.evaluate([0, 0, 1, 1, 2, 2], [2, 2, 0, 0, 1, 1])
        assert rep.accuracy == 1.0
        assert rep.ari == 1.0
        assert rep.purity == [1.0, 1.0, 1.0]
        assert rep.matching == {2: 0, 0: 1, 1: 2}

    def test_worse_than_chance_case(self):
        rep = metrics.evaluate([0, 0, 1, 1], [0, 1, 0, 1])
        assert rep.ari == -0.5
        assert rep.accuracy == 0.5

    def test_matching_covers_min_cluster_count(self):
        # 4 predicted clusters vs 3 truth classes incl. an "other" class.
        y = ["p", "p", "c", "c", "other", "other"]
        yhat = [0, 0, 1, 2, 3, 3]
        rep = metrics.evaluate(y, yhat)
        assert len(rep.matching) == min(4, 3)

    def test_report_json_round_trip(self):
        import json

        rep = metrics.evaluate([0, 1, 1], [1, 0, 0])
        data = json.loads(rep.to_json())
        assert data["n"] == 3
        assert data["accuracy"] == 1.0
        assert "contingency" in data and "w" in data["contingency"]
