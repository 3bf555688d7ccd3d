"""
test_stats.py - Spearman correlation and its exact permutation p-value.
"""

import numpy as np
import pytest
from scipy import stats as sps

from tubeness.errors import StatsError
from tubeness.stats import spearman, spearman_permutation_pvalue


def fractional_ranks(values):
    """Rank by counting: 1 + number smaller + (number equal - 1) / 2."""
    values = list(values)
    ranks = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks.append(1 + smaller + (equal - 1) / 2.0)
    return np.array(ranks)


class TestSpearman:
    def test_perfect_positive(self):
        result = spearman([1, 2, 3, 4, 5], [2, 4, 6, 8, 10])
        assert result.rho == pytest.approx(1.0)
        assert 0.0 < result.p_value < 1e-300
        assert result.n == 5

    def test_perfect_negative(self):
        result = spearman([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
        assert result.rho == pytest.approx(-1.0)

    def test_against_counting_ranks(self, rng):
        for _ in range(100):
            n = int(rng.integers(3, 9))
            x = rng.integers(0, 4, size=n)
            y = rng.integers(0, 4, size=n)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            rx, ry = fractional_ranks(x), fractional_ranks(y)
            expected = np.corrcoef(rx, ry)[0, 1]
            assert spearman(x, y).rho == pytest.approx(expected, abs=1e-12)

    def test_matches_scipy(self, rng):
        x = rng.normal(size=40)
        y = x + rng.normal(scale=2.0, size=40)
        ours = spearman(x, y)
        ref = sps.spearmanr(x, y)
        assert ours.rho == pytest.approx(ref.correlation, abs=1e-12)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)

    def test_monotone_transform_invariance(self, rng):
        x = rng.uniform(0.1, 10.0, size=30)
        y = rng.uniform(size=30)
        base = spearman(x, y).rho
        assert spearman(np.log(x), y).rho == pytest.approx(base, abs=1e-12)
        assert spearman(3.0 * x + 7.0, y).rho == pytest.approx(base, abs=1e-12)

    def test_symmetric_and_permutation_invariant(self, rng):
        x = rng.integers(0, 10, size=25)
        y = rng.integers(0, 5, size=25)
        order = rng.permutation(25)
        base = spearman(x, y).rho
        assert spearman(y, x).rho == pytest.approx(base, abs=1e-12)
        assert spearman(x[order], y[order]).rho == pytest.approx(base, abs=1e-12)

    def test_p_value_is_a_probability(self, rng):
        for _ in range(20):
            result = spearman(rng.normal(size=12), rng.normal(size=12))
            assert 0.0 < result.p_value <= 1.0
            assert -1.0 <= result.rho <= 1.0

    @pytest.mark.parametrize(
        "x, y, message",
        [
            ([1, 2, 3], [1, 2], "length mismatch"),
            ([1, 2], [1, 2], "at least 3"),
            ([1, 1, 1, 1], [1, 2, 3, 4], "zero rank variance"),
        ],
    )
    def test_errors(self, x, y, message):
        with pytest.raises(StatsError, match=message):
            spearman(x, y)


class TestPermutation:
    def test_perfect_order_of_four(self):
        # only the identity and the reversal reach |rho| = 1
        assert spearman_permutation_pvalue([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(2 / 24)

    def test_uncorrelated_is_one(self):
        # rho = 0 is reached by every ordering
        assert spearman_permutation_pvalue([1, 2, 3], [2, 1, 2]) == pytest.approx(1.0)

    def test_too_many_pairs(self):
        with pytest.raises(StatsError):
            spearman_permutation_pvalue(range(11), range(11))
