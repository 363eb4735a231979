"""Limit-ranking analysis for the expected click dynamics.

A class pattern (the sequence of item classes read down the ranked list)
is a stable limit of the dynamics when the type-mixture click
probabilities are strictly decreasing in rank: every item then out-earns
all items below it in expectation, so popularity ranking reproduces the
order. This module constructs the two-block candidate patterns, verifies
stability, brute-forces uniqueness over all C(M, M1) patterns, computes
the class-1 traffic share at the limit, and bounds the partisan share p
under which the minority-on-top block is the unique limit for extreme
preferences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .model import (
    Population,
    Ranking,
    expected_choice_distribution,
    total_class_probability,
)

__all__ = [
    "ClassPattern",
    "Thresholds",
    "NoStableLimitError",
    "ENUMERATION_LIMIT",
    "thresholds",
    "block_limit_ranking",
    "pattern_ranking",
    "is_stable_limit",
    "enumerate_stable_patterns",
    "stable_pattern_count",
    "unique_block_limit",
    "limit_traffic_share",
    "max_p_for_uniqueness",
    "limit_share_table",
]

ClassPattern = tuple[int, ...]

#: Enumeration guard: refuse pattern spaces larger than this.
ENUMERATION_LIMIT = 10**6

_CHUNK = 65536


class NoStableLimitError(RuntimeError):
    """No class pattern satisfies the stability condition."""


@dataclass(frozen=True)
class Thresholds:
    """Class-size bounds delimiting the regime with a two-block limit.

    ``minority_bound`` is M / (1 + beta) and ``majority_bound`` is
    beta * M / (1 + beta); they sum to M and straddle M / 2 for beta > 1.
    A class strictly smaller than the minority bound ends up on top as a
    block; strictly larger than the majority bound, at the bottom.
    """

    minority_bound: float
    majority_bound: float


def thresholds(m_total: int, beta: float) -> Thresholds:
    if beta <= 1.0:
        raise ValueError(
            f"beta must exceed 1 (at beta={beta} the bounds coincide at M/2 and "
            "the block-limit regime is empty)"
        )
    return Thresholds(
        minority_bound=m_total / (1.0 + beta),
        majority_bound=beta * m_total / (1.0 + beta),
    )


def _validate_pattern(pattern: Sequence[int]) -> np.ndarray:
    arr = np.asarray(pattern, dtype=np.int8)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("pattern must be a flat sequence of at least two class labels")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("pattern entries must be 0 or 1")
    if not (np.any(arr == 0) and np.any(arr == 1)):
        raise ValueError("pattern must contain both classes")
    return arr


def block_limit_ranking(m_total: int, m1: int, minority_class: int) -> ClassPattern:
    """Two-block pattern with the minority class filling the top ranks."""
    if not 1 <= m1 <= m_total - 1:
        raise ValueError(f"need 1 <= m1 <= m_total - 1, got m1={m1}, m_total={m_total}")
    if minority_class not in (0, 1):
        raise ValueError(f"minority_class must be 0 or 1, got {minority_class}")
    m0 = m_total - m1
    if minority_class == 1:
        return (1,) * m1 + (0,) * m0
    return (0,) * m0 + (1,) * m1


def pattern_ranking(pattern: Sequence[int]) -> Ranking:
    """Ranking realizing a class pattern: item k sits at rank k + 1.

    Click counts descend one per rank so the ordering is consistent with
    popularity and a single click never reorders it under stable ties.
    """
    arr = _validate_pattern(pattern)
    m = arr.size
    return Ranking(
        items_by_rank=np.arange(m),
        clicks=np.arange(m, 0, -1).astype(np.int64),
        class_of_item=arr,
    )


def is_stable_limit(pattern: Sequence[int], population: Population, beta: float) -> bool:
    """True when the mixture click probabilities strictly decrease down the list."""
    rho = expected_choice_distribution(pattern_ranking(pattern), population, beta)
    return bool(np.all(np.diff(rho) < 0.0))


_combo_cache: dict[tuple[int, int], np.ndarray] = {}


def _combination_matrix(m_total: int, m1: int) -> np.ndarray:
    """All class-1 rank index sets as a C(M, M1) x M1 int8 matrix (cached)."""
    key = (m_total, m1)
    cached = _combo_cache.get(key)
    if cached is None:
        dtype = np.int8 if m_total <= 127 else np.int16
        cached = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(m_total), m1)),
            dtype=dtype,
            count=math.comb(m_total, m1) * m1,
        ).reshape(-1, m1)
        _combo_cache[key] = cached
    return cached


def _guard_enumeration(m_total: int, m1: int) -> int:
    n_patterns = math.comb(m_total, m1)
    if n_patterns > ENUMERATION_LIMIT:
        raise ValueError(
            f"enumeration over C({m_total}, {m1}) = {n_patterns} patterns exceeds "
            f"the guard of {ENUMERATION_LIMIT}"
        )
    return n_patterns


def _stable_chunks(
    m_total: int, m1: int, population: Population, beta: float
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (index_rows, stable_mask, stability_margin) per chunk of patterns.

    The margin is the smallest expected-click gap between adjacent ranks;
    a pattern is stable exactly when its margin is positive.
    """
    _guard_enumeration(m_total, m1)
    if beta < 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    m0 = m_total - m1
    combos = _combination_matrix(m_total, m1)
    weights = beta ** (m_total - np.arange(1, m_total + 1, dtype=float))
    rows = np.arange(_CHUNK)[:, None]
    for lo in range(0, combos.shape[0], _CHUNK):
        idx = combos[lo : lo + _CHUNK]
        n = idx.shape[0]
        ones = np.zeros((n, m_total), dtype=bool)
        ones[rows[:n], idx] = True
        rho = np.zeros((n, m_total))
        for share, gamma in population.type_mix():
            if share <= 0.0:
                continue
            phi = np.where(ones, (1.0 - gamma) / m1, gamma / m0)
            w = phi * weights
            rho += share * (w / w.sum(axis=1)[:, None])
        gaps = -np.diff(rho, axis=1)
        margin = gaps.min(axis=1)
        yield idx, margin > 0.0, margin


def _pattern_from_indices(m_total: int, idx_row: np.ndarray) -> ClassPattern:
    pattern = [0] * m_total
    for i in idx_row:
        pattern[int(i)] = 1
    return tuple(pattern)


def enumerate_stable_patterns(
    m_total: int, m1: int, population: Population, beta: float
) -> list[ClassPattern]:
    """Exhaustively test every class pattern and return the stable ones.

    Only C(M, M1) patterns are checked rather than M! rankings: propensities
    depend on an item only through its class, so rankings with the same
    class-by-rank pattern have identical mixture click probabilities.
    """
    out: list[ClassPattern] = []
    for idx, mask, _ in _stable_chunks(m_total, m1, population, beta):
        for row in idx[mask]:
            out.append(_pattern_from_indices(m_total, row))
    return out


def stable_pattern_count(
    m_total: int,
    m1: int,
    population: Population,
    beta: float,
    *,
    stop_after: int | None = None,
) -> int:
    """Number of stable patterns; with ``stop_after`` the scan ends early
    once that many have been seen (the returned count is then a lower bound).
    """
    n = 0
    for _, mask, _ in _stable_chunks(m_total, m1, population, beta):
        n += int(mask.sum())
        if stop_after is not None and n >= stop_after:
            break
    return n


def unique_block_limit(m_total: int, m1: int, population: Population, beta: float) -> bool:
    """True when exactly one pattern is stable and it is a two-block pattern."""
    found: list[ClassPattern] = []
    for idx, mask, _ in _stable_chunks(m_total, m1, population, beta):
        for row in idx[mask]:
            found.append(_pattern_from_indices(m_total, row))
            if len(found) > 1:
                return False
    if len(found) != 1:
        return False
    return found[0] in (
        block_limit_ranking(m_total, m1, 1),
        block_limit_ranking(m_total, m1, 0),
    )


def _most_stable_pattern(
    m_total: int, m1: int, population: Population, beta: float
) -> tuple[ClassPattern, int]:
    """Stable pattern with the largest stability margin, plus the stable count."""
    best_margin = -np.inf
    best: ClassPattern | None = None
    n_stable = 0
    for idx, mask, margin in _stable_chunks(m_total, m1, population, beta):
        n_stable += int(mask.sum())
        if mask.any():
            j = int(np.argmax(np.where(mask, margin, -np.inf)))
            if margin[j] > best_margin:
                best_margin = float(margin[j])
                best = _pattern_from_indices(m_total, idx[j])
    if best is None:
        raise NoStableLimitError(
            f"no stable limit pattern exists for m_total={m_total}, m1={m1}, beta={beta}"
        )
    return best, n_stable


def _share_at(pattern: Sequence[int], population: Population, beta: float) -> float:
    ranking = pattern_ranking(pattern)
    rho = expected_choice_distribution(ranking, population, beta)
    return total_class_probability(rho, ranking, 1)


def limit_traffic_share(
    m_total: int, m1: int, population: Population, beta: float
) -> float:
    """Class-1 share of expected clicks at the limit ranking.

    Below the minority bound the class-1 block sits on top; above the
    majority bound it sits at the bottom. Inside the intermediate band the
    limit need not be unique: the share is reported at the most strongly
    stable enumerated pattern (largest minimum expected-click gap), and
    :class:`NoStableLimitError` is raised if nothing is stable there.
    """
    if beta == 1.0:
        return _share_at(block_limit_ranking(m_total, m1, 1), population, beta)
    th = thresholds(m_total, beta)
    if m1 < th.minority_bound:
        pattern: Sequence[int] = block_limit_ranking(m_total, m1, 1)
    elif m1 > th.majority_bound:
        pattern = block_limit_ranking(m_total, m1, 0)
    else:
        pattern, _ = _most_stable_pattern(m_total, m1, population, beta)
    return _share_at(pattern, population, beta)


def max_p_for_uniqueness(m_total: int, m1: int, beta: float, *, tol: float = 1e-6) -> float:
    """Largest symmetric partisan share p0 = p1 = p keeping the block limit unique,
    for the extreme-preference population (gamma0=1, gamma1=0).

    Uniqueness rests on the two binding constraints: the lowest-ranked
    class-1 item must out-earn in expectation the class-0 item directly
    above it when the other M1 - 1 class-1 items hold the top ranks and the
    displaced item sits (i) at the very bottom rank M, or (ii) at rank
    M1 + 2. When both hold, any pattern other than the minority-on-top
    block loses an item upward and so cannot be a limit. Both hold at p = 0
    whenever M1 < M / (1 + beta); the threshold in p is found by bisection.
    """
    th = thresholds(m_total, beta)
    if not m1 < th.minority_bound:
        raise ValueError(
            f"inconsistent parameters: m1={m1} is not below M/(1+beta)="
            f"{th.minority_bound:.6g}, so the minority block argument does not apply"
        )

    displaced = [m_total]
    if m1 + 2 <= m_total:
        displaced.append(m1 + 2)

    def constraint_gap(p: float) -> float:
        pop = Population(gamma0=1.0, gamma1=0.0, p0=p, p1=p)
        worst = np.inf
        for j in displaced:
            pattern = [0] * m_total
            for k in range(m1 - 1):
                pattern[k] = 1
            pattern[j - 1] = 1
            rho = expected_choice_distribution(pattern_ranking(pattern), pop, beta)
            worst = min(worst, float(rho[j - 1] - rho[j - 2]))
        return worst

    p_hi = 0.5  # p0 = p1 = p requires p <= 1/2
    if constraint_gap(0.0) <= 0.0:
        raise ValueError(
            "inconsistent parameters: the binding constraints fail even at p=0"
        )
    if constraint_gap(p_hi) > 0.0:
        return p_hi
    lo, hi = 0.0, p_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if constraint_gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def limit_share_table(
    m_total: int, betas: Sequence[float], population: Population
) -> list[dict[str, object]]:
    """Rows of the limit-share report: one per (beta, m1) cell.

    ``limit_share`` is empty when no stable pattern exists in the
    intermediate band; ``n_stable_patterns`` is the exhaustive count.
    """
    rows: list[dict[str, object]] = []
    for beta in betas:
        for m1 in range(1, m_total):
            n_stable = stable_pattern_count(m_total, m1, population, beta)
            try:
                share: object = limit_traffic_share(m_total, m1, population, beta)
            except NoStableLimitError:
                share = ""
            rows.append(
                {
                    "m1": m1,
                    "beta": beta,
                    "gamma0": population.gamma0,
                    "gamma1": population.gamma1,
                    "p0": population.p0,
                    "p1": population.p1,
                    "limit_share": share,
                    "n_stable_patterns": n_stable,
                }
            )
    return rows
