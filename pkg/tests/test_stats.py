import itertools
import math

import numpy as np
import pytest

from alpool.stats import (
    PairedErrors,
    StatsError,
    bootstrap_significance,
    relative_reduction,
    wilcoxon_signed_rank,
)


def brute_force_wilcoxon_p(diffs):
    """Exact two-sided p by enumerating every sign assignment."""
    d = [x for x in diffs if x != 0]
    n = len(d)
    mags = sorted(abs(x) for x in d)
    ranks = {}
    # average ranks over ties
    rank_of = []
    for x in d:
        same = [i for i, m in enumerate(mags) if m == abs(x)]
        rank_of.append(sum(i + 1 for i in same) / len(same))
    observed = sum(r for x, r in zip(d, rank_of) if x > 0)
    w_values = []
    for signs in itertools.product([1, -1], repeat=n):
        w_values.append(sum(r for s, r in zip(signs, rank_of) if s > 0))
    le = sum(1 for w in w_values if w <= observed + 1e-12)
    ge = sum(1 for w in w_values if w >= observed - 1e-12)
    return min(1.0, 2 * min(le, ge) / len(w_values))


class TestWilcoxon:
    def test_all_zero_diffs(self):
        w, p = wilcoxon_signed_rank([0.0, 0.0, 0.0])
        assert p == 1.0

    def test_one_sided_run_of_five(self):
        w, p = wilcoxon_signed_rank([1, 2, 3, 4, 5])
        assert math.isclose(p, 0.0625)
        assert w == 0.0  # min(W+, W-) with all-positive diffs

    def test_symmetric_pair(self):
        w, p = wilcoxon_signed_rank([1, -1])
        assert p == 1.0

    @pytest.mark.parametrize(
        "diffs",
        [
            [1, 2, 3],
            [1, -2, 3, -4],
            [0.5, 0.5, -0.5],
            [2, 2, 2, -1],
            [1, -1, 2, -2, 3],
            [3, 1, 4, 1, 5, -9, 2, -6],
        ],
    )
    def test_matches_enumeration_oracle(self, diffs):
        _, p = wilcoxon_signed_rank(diffs)
        assert math.isclose(p, brute_force_wilcoxon_p(diffs), abs_tol=1e-12)

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(0)
        diffs = rng.normal(size=12).tolist()
        _, p_ab = wilcoxon_signed_rank(diffs)
        _, p_ba = wilcoxon_signed_rank([-x for x in diffs])
        assert math.isclose(p_ab, p_ba, abs_tol=1e-12)

    def test_normal_approximation_branch(self):
        rng = np.random.default_rng(1)
        diffs = (rng.normal(size=60) + 1.2).tolist()
        _, p = wilcoxon_signed_rank(diffs)
        assert 0.0 <= p <= 1.0
        assert p < 0.01  # strongly one-sided shift

    def test_p_always_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for n in (1, 2, 5, 26, 40):
            diffs = rng.normal(size=n).tolist()
            _, p = wilcoxon_signed_rank(diffs)
            assert 0.0 <= p <= 1.0


def paired(errors_a, errors_b, slots=None):
    n = len(errors_a)
    return PairedErrors.from_lists(errors_a, errors_b, slots or [2] * n)


class TestBootstrap:
    def test_identical_systems(self):
        pairs = paired([1, 0, 2, 1], [1, 0, 2, 1])
        out = bootstrap_significance(pairs, resamples=200, seed=0)
        assert out["p"] == 1.0

    def test_strict_dominance(self):
        pairs = paired([2] * 30, [1] * 30)
        out = bootstrap_significance(pairs, resamples=100, seed=0)
        assert out["p"] < 0.05

    def test_seed_determinism(self):
        rng = np.random.default_rng(3)
        pairs = paired(rng.integers(0, 3, 50), rng.integers(0, 3, 50))
        a = bootstrap_significance(pairs, resamples=300, seed=7)
        b = bootstrap_significance(pairs, resamples=300, seed=7)
        assert a == b

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(4)
        ea, eb = rng.integers(0, 4, 40), rng.integers(0, 4, 40)
        p_ab = bootstrap_significance(paired(ea, eb), resamples=400, seed=1)["p"]
        p_ba = bootstrap_significance(paired(eb, ea), resamples=400, seed=1)["p"]
        assert math.isclose(p_ab, p_ba, abs_tol=1e-12)

    def test_monotone_in_effect_size(self):
        # Larger shifts should never (on average) raise the bootstrap p.
        rng = np.random.default_rng(5)
        base = rng.integers(1, 4, 120)
        shifts = [0.0, 0.25, 0.5, 1.0]
        mean_ps = []
        for shift in shifts:
            ps = []
            for seed in range(10):
                noise = rng.normal(0, 0.5, len(base))
                better = np.maximum(base - shift + noise * 0, 0)
                pairs = paired(base.astype(float), better.astype(float))
                ps.append(bootstrap_significance(pairs, resamples=200, seed=seed)["p"])
            mean_ps.append(np.mean(ps))
        assert all(a >= b - 1e-9 for a, b in zip(mean_ps, mean_ps[1:]))

    def test_empty_rejected(self):
        with pytest.raises(StatsError):
            bootstrap_significance(paired([], [], []), resamples=10, seed=0)

    def test_misaligned_rejected(self):
        with pytest.raises(StatsError):
            PairedErrors.from_lists([1], [1, 2], [2, 2])


class TestRelativeReduction:
    def test_table_scale_consistency(self):
        assert abs(relative_reduction(0.3059, 0.2801) - 8.43) <= 0.01

    def test_identity(self):
        assert relative_reduction(0.4, 0.4) == 0.0

    def test_halving(self):
        assert relative_reduction(0.4, 0.2) == 50.0

    def test_zero_base_rejected(self):
        with pytest.raises(StatsError):
            relative_reduction(0.0, 0.1)
