"""Significance testing for paired SER comparisons.

Two readings of "Wilcoxon with bootstrap resamples" are provided side by
side: a classical signed-rank test (exact null enumeration up to n=25,
normal approximation with tie correction above) and a paired bootstrap over
utterances; reports quote both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class PairedErrors:
    """Per-utterance error counts for two systems over the same test set."""

    errors_a: np.ndarray
    errors_b: np.ndarray
    reference_slots: np.ndarray

    def __post_init__(self):
        if not (len(self.errors_a) == len(self.errors_b) == len(self.reference_slots)):
            raise StatsError("paired arrays must be aligned and equal length")

    def __len__(self) -> int:
        return len(self.errors_a)

    @classmethod
    def from_lists(cls, errors_a, errors_b, reference_slots) -> "PairedErrors":
        return cls(
            errors_a=np.asarray(errors_a, dtype=np.float64),
            errors_b=np.asarray(errors_b, dtype=np.float64),
            reference_slots=np.asarray(reference_slots, dtype=np.float64),
        )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average of ranks i+1..j+1
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks: list[int], doubled_w_plus: int) -> float:
    """Null distribution of W+ by subset-sum DP over the doubled ranks."""
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    n_assignments = 1 << len(doubled_ranks)
    le = sum(counts[: doubled_w_plus + 1])
    ge = sum(counts[doubled_w_plus:])
    p = 2 * min(Fraction(le, n_assignments), Fraction(ge, n_assignments))
    return float(min(p, Fraction(1)))


def wilcoxon_signed_rank(diffs) -> tuple[float, float]:
    """Two-sided signed-rank test; zero differences are dropped.

    Returns (W, p) where W = min(W+, W-). Exact enumeration for n <= 25,
    normal approximation with tie correction beyond.
    """
    d = np.asarray(list(diffs), dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0

    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= 25:
        doubled = [int(round(2 * r)) for r in ranks]
        p = _exact_two_sided_p(doubled, int(round(2 * w_plus)))
        return w, p

    mean = n * (n + 1) / 4
    var = n * (n + 1) * (2 * n + 1) / 24
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48
    if var <= 0:
        return w, 1.0
    z = (w_plus - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2))
    return w, min(p, 1.0)


def _aggregate_ser(errors: np.ndarray, slots: np.ndarray, idx: np.ndarray) -> float:
    return float(errors[idx].sum() / slots[idx].sum())


def bootstrap_significance(
    pairs: PairedErrors, resamples: int = 1000, seed: int = 0
) -> dict:
    """Paired bootstrap over utterances; p doubles the contradiction rate.

    The full-sample sign of SER_A - SER_B is the claim; each seeded resample
    recomputes both aggregate SERs, and resamples whose sign contradicts the
    claim count against it.
    """
    if len(pairs) == 0:
        raise StatsError("no paired observations")
    errors_a, errors_b, slots = pairs.errors_a, pairs.errors_b, pairs.reference_slots
    full = float(errors_a.sum() / slots.sum() - errors_b.sum() / slots.sum())

    rng = np.random.default_rng(seed)
    n = len(pairs)
    deltas = np.empty(resamples, dtype=np.float64)
    contradictions = 0
    for r in range(resamples):
        idx = rng.integers(0, n, n)
        ser_a = _aggregate_ser(errors_a, slots, idx)
        ser_b = _aggregate_ser(errors_b, slots, idx)
        diff = ser_a - ser_b
        deltas[r] = 100.0 * (ser_a - ser_b) / ser_a if ser_a > 0 else 0.0
        if full > 0 and diff < 0:
            contradictions += 1
        elif full < 0 and diff > 0:
            contradictions += 1

    if full == 0:
        p = 1.0
    else:
        p = min(1.0, 2.0 * contradictions / resamples)
    return {
        "p": p,
        "full_delta": full,
        "delta_ser_pct_mean": float(deltas.mean()),
        "delta_ser_pct_p2.5": float(np.percentile(deltas, 2.5)),
        "delta_ser_pct_p97.5": float(np.percentile(deltas, 97.5)),
    }


def relative_reduction(base_ser: float, new_ser: float) -> float:
    """Percent relative SER reduction against a baseline."""
    if base_ser <= 0:
        raise StatsError("base SER must be positive")
    return 100.0 * (base_ser - new_ser) / base_ser
