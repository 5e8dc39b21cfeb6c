"""Correlation and agreement statistics for the user study.

Pearson r (sample covariance over the product of standard deviations),
Spearman rho (Pearson on fractional mid-ranks), Kendall tau-b (tie
corrected), and Cohen's kappa (chance-corrected two-annotator agreement).
Kappa is computed with exact rational arithmetic so the degenerate
chance-agreement case (p_e = 1) is detected exactly, not up to epsilon.
No significance testing: point estimates only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

CORRELATION_METHODS = ("pearson", "spearman", "kendall")


class StatsError(Exception):
    """Base class for statistics errors."""


class UndefinedCoefficientError(StatsError):
    """The requested coefficient is undefined for this input."""


@dataclass(frozen=True)
class PairedScores:
    """Aligned score vectors (metric vs human), with drops recorded."""

    x: tuple[float, ...]
    y: tuple[float, ...]
    dropped: int = 0

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y):
            raise StatsError(
                f"paired vectors differ in length: {len(self.x)} vs {len(self.y)}"
            )

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_records(
        cls,
        x_by_key: Mapping[Hashable, float],
        y_by_key: Mapping[Hashable, float],
    ) -> "PairedScores":
        """Join two keyed score maps; keys missing on either side are dropped
        pairwise and counted."""
        shared = sorted(set(x_by_key) & set(y_by_key), key=str)
        dropped = len(set(x_by_key) | set(y_by_key)) - len(shared)
        return cls(
            x=tuple(float(x_by_key[k]) for k in shared),
            y=tuple(float(y_by_key[k]) for k in shared),
            dropped=dropped,
        )


@dataclass(frozen=True)
class LabelPairs:
    """Aligned categorical labels from two annotators over shared items."""

    a: tuple[str, ...]
    b: tuple[str, ...]
    alphabet: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.a) != len(self.b):
            raise StatsError("label vectors differ in length")
        if len(self.a) < 1:
            raise StatsError("label pairs require at least one item")
        alphabet = self.alphabet or tuple(sorted(set(self.a) | set(self.b)))
        object.__setattr__(self, "alphabet", alphabet)
        stray = (set(self.a) | set(self.b)) - set(alphabet)
        if stray:
            raise StatsError(f"labels outside the declared alphabet: {sorted(stray)}")


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx, my = _mean(x), _mean(y)
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    var_x = sum((a - mx) ** 2 for a in x)
    var_y = sum((b - my) ** 2 for b in y)
    if var_x == 0:
        raise UndefinedCoefficientError("pearson undefined: zero variance in x")
    if var_y == 0:
        raise UndefinedCoefficientError("pearson undefined: zero variance in y")
    return cov / math.sqrt(var_x * var_y)


def midranks(values: Sequence[float]) -> list[float]:
    """1-based fractional ranks with ties sharing their mid-rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def _tie_term(values: Sequence[float]) -> int:
    groups: dict[float, int] = {}
    for v in values:
        groups[v] = groups.get(v, 0) + 1
    return sum(t * (t - 1) // 2 for t in groups.values())


def _kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    n0 = n * (n - 1) // 2
    n1 = _tie_term(x)
    n2 = _tie_term(y)
    if n0 == n1:
        raise UndefinedCoefficientError("kendall undefined: zero variance in x")
    if n0 == n2:
        raise UndefinedCoefficientError("kendall undefined: zero variance in y")
    concordant_minus_discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            concordant_minus_discordant += dx * dy
    return concordant_minus_discordant / math.sqrt((n0 - n1) * (n0 - n2))


def correlate(pairs: PairedScores, method: str) -> float:
    """Correlation coefficient in [-1, 1] by the named method.

    Raises ``UndefinedCoefficientError`` when a vector has zero variance
    (for spearman, zero rank variance), naming the offending vector.
    """
    if method not in CORRELATION_METHODS:
        raise StatsError(f"unknown correlation method {method!r}")
    if len(pairs) < 2:
        raise StatsError("correlation requires at least two pairs")
    if method == "pearson":
        return _pearson(pairs.x, pairs.y)
    if method == "spearman":
        return _pearson(midranks(pairs.x), midranks(pairs.y))
    return _kendall_tau_b(pairs.x, pairs.y)


def cohen_kappa(pairs: LabelPairs) -> float:
    """Chance-corrected agreement kappa = (p_o - p_e) / (1 - p_e).

    Computed in exact rational arithmetic. When chance agreement p_e is
    exactly 1 (both annotators degenerate on one label), kappa is 1 for
    perfect agreement and undefined otherwise.
    """
    n = len(pairs.a)
    p_o = Fraction(sum(1 for a, b in zip(pairs.a, pairs.b) if a == b), n)
    p_e = Fraction(0)
    for label in pairs.alphabet:
        margin_a = Fraction(sum(1 for a in pairs.a if a == label), n)
        margin_b = Fraction(sum(1 for b in pairs.b if b == label), n)
        p_e += margin_a * margin_b
    if p_e == 1:
        if p_o == 1:
            return 1.0
        raise UndefinedCoefficientError(
            "kappa undefined: chance agreement is 1 with observed disagreement"
        )
    return float((p_o - p_e) / (1 - p_e))
