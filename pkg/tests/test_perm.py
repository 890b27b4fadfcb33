import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permlearn.errors import DimensionError, DomainError, FeasibilityError
from permlearn.perm import (
    Permutation,
    as_logits,
    check_doubly_stochastic,
    entropy,
    frobenius_inner,
    is_doubly_stochastic,
    kendall_tau,
    reconstruction_metrics,
)

perms = st.integers(1, 9).flatmap(lambda n: st.permutations(range(n)))


def random_ds(rng, n, terms=6):
    """Convex combination of random permutation matrices (a Birkhoff point)."""
    w = rng.dirichlet(np.ones(terms))
    return sum(wk * np.eye(n)[rng.permutation(n)] for wk in w)


class TestPermutation:
    def test_rejects_non_bijection(self):
        with pytest.raises(DomainError):
            Permutation((0, 0, 1))
        with pytest.raises(DomainError):
            Permutation((0, 3, 1))

    def test_matrix_convention(self):
        p = Permutation((2, 0, 1))
        M = p.to_matrix()
        assert M[0, 2] == M[1, 0] == M[2, 1] == 1.0
        assert Permutation.from_matrix(M) == p

    def test_from_matrix_rejects_non_permutation(self):
        with pytest.raises((DomainError, DimensionError)):
            Permutation.from_matrix(np.full((2, 2), 0.5))

    @given(perms)
    def test_inverse_and_reconstruct(self, mapping):
        p = Permutation(tuple(mapping))
        x = np.arange(len(mapping), dtype=float) * 1.5
        np.testing.assert_array_equal(p.reconstruct(x), p.to_matrix().T @ x)
        assert p.inverse().inverse() == p
        np.testing.assert_array_equal(p.to_matrix() @ p.inverse().to_matrix(), np.eye(len(mapping)))

    def test_reconstruct_checks_size(self):
        with pytest.raises(DimensionError):
            Permutation.identity(3).reconstruct(np.zeros(4))


class TestLogitsValidation:
    def test_non_square(self):
        with pytest.raises(DimensionError):
            as_logits(np.zeros((2, 3)))

    def test_non_finite(self):
        with pytest.raises(DomainError):
            as_logits(np.array([[0.0, np.nan], [1.0, 2.0]]))


class TestDoublyStochastic:
    def test_birkhoff_point_accepted(self):
        P = random_ds(np.random.default_rng(0), 4)
        assert is_doubly_stochastic(P)

    def test_bad_sums(self):
        with pytest.raises(FeasibilityError):
            check_doubly_stochastic(np.array([[0.6, 0.6], [0.4, 0.4]]))

    def test_negative_entry(self):
        assert not is_doubly_stochastic(np.array([[1.1, -0.1], [-0.1, 1.1]]))


class TestFrobenius:
    def test_identity(self):
        assert frobenius_inner(np.eye(2), np.eye(2)) == 2.0

    def test_zero(self):
        assert frobenius_inner(np.arange(4.0).reshape(2, 2), np.zeros((2, 2))) == 0.0

    def test_hand_sum(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert frobenius_inner(X, np.array([[0.0, 1.0], [1.0, 0.0]])) == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            frobenius_inner(np.eye(2), np.eye(3))


class TestEntropy:
    def test_vertex(self):
        assert entropy(np.eye(4)[[1, 3, 0, 2]]) == 0.0

    def test_uniform_two(self):
        assert entropy(np.full((2, 2), 0.5)) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_random_ds_resummed(self):
        P = random_ds(np.random.default_rng(3), 3)
        direct = 0.0
        for i in range(3):
            for j in range(3):
                if P[i, j] > 0:
                    direct -= P[i, j] * math.log(P[i, j])
        assert entropy(P) == pytest.approx(direct, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            entropy(np.array([[-0.1, 1.1], [1.1, -0.1]]))

    @given(st.integers(1, 7))
    def test_bounded_by_n_log_n(self, n):
        P = random_ds(np.random.default_rng(n), n)
        assert -1e-12 <= entropy(P) <= n * math.log(n) + 1e-9


def kendall_pairs(a, b):
    concordant = discordant = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        s = (a[i] - a[j]) * (b[i] - b[j])
        concordant += s > 0
        discordant += s < 0
    return (concordant - discordant) / (len(a) * (len(a) - 1) / 2)


class TestKendall:
    def test_identical(self):
        assert kendall_tau((2, 0, 1, 3), (2, 0, 1, 3)) == 1.0

    def test_reversed(self):
        assert kendall_tau(tuple(range(6)), tuple(range(5, -1, -1))) == -1.0

    @given(st.integers(2, 8).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n)))))
    def test_pair_count_oracle(self, pair):
        a, b = pair
        assert kendall_tau(a, b) == pytest.approx(kendall_pairs(a, b), abs=1e-12)

    @given(st.integers(2, 8).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n)))))
    def test_symmetric_and_bounded(self, pair):
        a, b = pair
        assert kendall_tau(a, b) == kendall_tau(b, a)
        assert -1.0 <= kendall_tau(a, b) <= 1.0

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            kendall_tau((0, 1), (0, 1, 2))


class TestReconstructionMetrics:
    def test_perfect(self):
        true = Permutation((3, 1, 0, 2))
        truth = np.arange(4.0)
        scrambled = truth[list(true.mapping)]
        m = reconstruction_metrics(truth, true, scrambled, true)
        assert (m.prop_wrong, m.prop_any_wrong, m.l1, m.l2) == (0.0, 0.0, 0.0, 0.0)
        assert m.kendall_tau == 1.0

    def test_one_transposition(self):
        true = Permutation.identity(5)
        pred = Permutation((0, 2, 1, 3, 4))
        truth = np.arange(5.0)
        m = reconstruction_metrics(truth, pred, truth, true)
        assert m.prop_wrong == pytest.approx(0.4)
        assert m.prop_any_wrong == 1.0

    def test_positionwise_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            true = Permutation(tuple(int(v) for v in rng.permutation(n)))
            pred = Permutation(tuple(int(v) for v in rng.permutation(n)))
            truth = rng.normal(size=(n, 3))
            scrambled = np.empty_like(truth)
            for i in range(n):
                scrambled[i] = truth[true.mapping[i]]
            m = reconstruction_metrics(truth, pred, scrambled, true)
            wrong = sum(pred.mapping[i] != true.mapping[i] for i in range(n))
            rec = np.empty_like(truth)
            for i in range(n):
                rec[pred.mapping[i]] = scrambled[i]
            assert m.prop_wrong == pytest.approx(wrong / n)
            assert m.prop_any_wrong == float(wrong > 0)
            assert m.l1 == pytest.approx(np.abs(truth - rec).mean())
            assert m.l2 == pytest.approx(math.sqrt(((truth - rec) ** 2).mean()))

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            reconstruction_metrics(np.zeros(3), Permutation.identity(3), np.zeros(4), Permutation.identity(3))
