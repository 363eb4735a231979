"""Core primitives of the popularity-ranked stochastic choice model.

Items carry a binary class label. A user with preference parameter
``gamma`` spreads rank-free click propensity ``gamma`` uniformly over
class-0 items and ``1 - gamma`` over class-1 items. Displayed rankings
tilt those propensities: with attention bias ``beta``, an item ranked one
position higher is ``beta`` times as likely to be clicked, all else equal.
After each click the ranking re-sorts items by cumulative clicks, breaking
ties stably (an item overtakes another only by strictly exceeding its
count).

All sampling goes through an explicitly passed ``numpy.random.Generator``;
there is no hidden global randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Population",
    "Ranking",
    "Environment",
    "initial_ranking",
    "propensity",
    "choice_distribution",
    "total_class_probability",
    "sample_type",
    "sample_click",
    "update_ranking",
    "expected_choice_distribution",
]


@dataclass(frozen=True)
class Population:
    """A three-type mixture of users: class-0 fans, class-1 fans, indifferent.

    ``gamma0``/``gamma1``/``gamma2`` are the probabilities that a user of
    the corresponding type clicks class 0 absent any ranking; ``gamma2`` is
    pinned at 1/2 (indifference). ``p0`` and ``p1`` are the population
    shares of the two partisan types; the remainder ``p2`` is indifferent.
    """

    gamma0: float
    gamma1: float
    p0: float
    p1: float
    gamma2: float = 0.5

    def __post_init__(self) -> None:
        if not 0.5 < self.gamma0 <= 1.0:
            raise ValueError(f"gamma0 must lie in (0.5, 1], got {self.gamma0}")
        if not 0.0 <= self.gamma1 < 0.5:
            raise ValueError(f"gamma1 must lie in [0, 0.5), got {self.gamma1}")
        if self.gamma2 != 0.5:
            raise ValueError("gamma2 is fixed at 0.5")
        if self.p0 < 0.0 or self.p1 < 0.0:
            raise ValueError("type shares must be non-negative")
        if self.p0 + self.p1 > 1.0:
            raise ValueError(f"p0 + p1 must not exceed 1, got {self.p0 + self.p1}")

    @property
    def p2(self) -> float:
        return max(0.0, 1.0 - self.p0 - self.p1)

    def gamma_of_type(self, participant_type: int) -> float:
        """gamma for participant type 0 (class-0 fan), 1 (class-1 fan) or 2."""
        return (self.gamma0, self.gamma1, self.gamma2)[participant_type]

    def type_mix(self) -> tuple[tuple[float, float], ...]:
        """(share, gamma) pairs in type order 0, 1, 2."""
        return ((self.p0, self.gamma0), (self.p1, self.gamma1), (self.p2, self.gamma2))


@dataclass(frozen=True, eq=False)
class Ranking:
    """A full ordering of items plus their cumulative click counts.

    ``items_by_rank[k]`` is the item occupying rank ``k + 1`` (rank 1 is the
    top of the list). ``clicks`` and ``class_of_item`` are indexed by item
    id. Constructors and :func:`update_ranking` keep ranks consistent with
    descending click counts; hand-built instances are only checked for
    shape, permutation and class validity.
    """

    items_by_rank: np.ndarray
    clicks: np.ndarray
    class_of_item: np.ndarray

    def __post_init__(self) -> None:
        items = np.ascontiguousarray(self.items_by_rank, dtype=np.int64)
        clicks = np.ascontiguousarray(self.clicks, dtype=np.int64)
        classes = np.ascontiguousarray(self.class_of_item, dtype=np.int8)
        m = items.size
        if m < 2:
            raise ValueError("a ranking needs at least two items")
        if not np.array_equal(np.sort(items), np.arange(m)):
            raise ValueError("items_by_rank must be a permutation of 0..M-1")
        if clicks.shape != (m,) or classes.shape != (m,):
            raise ValueError("clicks and class_of_item must have one entry per item")
        if np.any(clicks < 0):
            raise ValueError("click counts must be non-negative")
        if not np.all((classes == 0) | (classes == 1)):
            raise ValueError("item classes must be 0 or 1")
        if not (np.any(classes == 0) and np.any(classes == 1)):
            raise ValueError("both classes must be non-empty")
        for name, arr in (("items_by_rank", items), ("clicks", clicks), ("class_of_item", classes)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m_total(self) -> int:
        return int(self.items_by_rank.size)

    @property
    def m0(self) -> int:
        return int(np.count_nonzero(self.class_of_item == 0))

    @property
    def m1(self) -> int:
        return int(np.count_nonzero(self.class_of_item == 1))

    @property
    def rank_of_item(self) -> np.ndarray:
        """1-based rank per item id; inverse of ``items_by_rank``."""
        ranks = np.empty(self.m_total, dtype=np.int64)
        ranks[self.items_by_rank] = np.arange(1, self.m_total + 1)
        return ranks

    def classes_by_rank(self) -> np.ndarray:
        """Class labels read off in rank order (top first)."""
        return self.class_of_item[self.items_by_rank]

    def equals(self, other: "Ranking") -> bool:
        return (
            np.array_equal(self.items_by_rank, other.items_by_rank)
            and np.array_equal(self.clicks, other.clicks)
            and np.array_equal(self.class_of_item, other.class_of_item)
        )


def initial_ranking(m_total: int, m1: int) -> Ranking:
    """Uniform start: every item has one click, class-1 items fill the bottom ranks.

    Items 0..M0-1 are class 0 (top of the list), items M0..M-1 are class 1.
    """
    if not 1 <= m1 <= m_total - 1:
        raise ValueError(f"need 1 <= m1 <= m_total - 1, got m1={m1}, m_total={m_total}")
    classes = np.zeros(m_total, dtype=np.int8)
    classes[m_total - m1 :] = 1
    return Ranking(
        items_by_rank=np.arange(m_total),
        clicks=np.ones(m_total, dtype=np.int64),
        class_of_item=classes,
    )


@dataclass(frozen=True)
class Environment:
    """Complete parameterization of one ranked-search setting."""

    m_total: int
    m1: int
    population: Population
    beta: float = 1.1
    n_users: int = 100
    initial: Ranking | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.m1 <= self.m_total - 1:
            raise ValueError(
                f"need 1 <= m1 <= m_total - 1, got m1={self.m1}, m_total={self.m_total}"
            )
        if self.beta < 1.0:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if self.initial is None:
            object.__setattr__(self, "initial", initial_ranking(self.m_total, self.m1))
        elif self.initial.m_total != self.m_total or self.initial.m1 != self.m1:
            raise ValueError("initial ranking does not match m_total / m1")

    @property
    def m0(self) -> int:
        return self.m_total - self.m1


def propensity(gamma: float, m0: int, m1: int, item_class: int) -> float:
    """Rank-free click propensity of one item for a user with parameter gamma.

    Class-0 items each get gamma / M0, class-1 items (1 - gamma) / M1, so the
    propensities over all M0 + M1 items sum to one.
    """
    if m0 < 1 or m1 < 1:
        raise ValueError(f"both classes must be non-empty, got m0={m0}, m1={m1}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if item_class == 0:
        return gamma / m0
    if item_class == 1:
        return (1.0 - gamma) / m1
    raise ValueError(f"item_class must be 0 or 1, got {item_class}")


def _weights_by_rank(classes_by_rank: np.ndarray, gamma: float, beta: float) -> np.ndarray:
    """Unnormalized click weights in rank order: beta^(M - rank) * propensity.

    Exponents are shifted by their maximum before exponentiation, so the
    computation never overflows for large M and is invariant to adding a
    constant to every exponent. With beta == 1 the weights are exactly the
    propensities.
    """
    m = classes_by_rank.size
    m1 = int(np.count_nonzero(classes_by_rank == 1))
    m0 = m - m1
    if m0 < 1 or m1 < 1:
        raise ValueError("both classes must be non-empty")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if beta < 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    phi = np.where(classes_by_rank == 1, (1.0 - gamma) / m1, gamma / m0)
    if beta == 1.0:
        return phi
    exponents = (m - np.arange(1, m + 1, dtype=float)) * np.log(beta)
    return np.exp(exponents - exponents[0]) * phi


def choice_distribution(ranking: Ranking, gamma: float, beta: float) -> np.ndarray:
    """Click probability per item id for a user with parameter gamma.

    Rank weights multiply the propensities and the result is normalized.
    With beta == 1 the propensity vector is returned as-is (it already sums
    to one), so the no-ranking baseline is reproduced exactly. Items with
    zero propensity get exactly zero probability.
    """
    weights = _weights_by_rank(ranking.classes_by_rank(), gamma, beta)
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("all propensities are zero; no click distribution exists")
    by_rank = weights if beta == 1.0 else weights / total
    dist = np.empty(ranking.m_total, dtype=float)
    dist[ranking.items_by_rank] = by_rank
    return dist


def total_class_probability(dist: np.ndarray, ranking: Ranking, k: int) -> float:
    """Total click probability landing on items of class k."""
    if k not in (0, 1):
        raise ValueError(f"class must be 0 or 1, got {k}")
    return float(dist[ranking.class_of_item == k].sum())


def sample_type(population: Population, rng: np.random.Generator) -> float:
    """Draw a user's gamma: gamma0 w.p. p0, gamma1 w.p. p1, else gamma2."""
    u = rng.random()
    if u < population.p0:
        return population.gamma0
    if u < population.p0 + population.p1:
        return population.gamma1
    return population.gamma2


def sample_click(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an item id from a click distribution by cumulative inversion.

    Items with zero probability are never returned.
    """
    cdf = np.cumsum(dist)
    if cdf[-1] <= 0.0:
        raise ValueError("distribution has no mass")
    cdf = cdf / cdf[-1]
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, dist.size - 1)


def _stable_order(counts_in_rank_order: np.ndarray) -> np.ndarray:
    """Re-sort positions by descending count, preserving order among ties."""
    return np.argsort(-counts_in_rank_order, kind="stable")


def update_ranking(ranking: Ranking, clicked_item: int) -> Ranking:
    """Credit one click and re-rank by cumulative clicks with stable ties.

    An item moves above another only when its count strictly exceeds the
    other's, so equal-count items keep their previous relative order.
    """
    if not 0 <= clicked_item < ranking.m_total:
        raise ValueError(f"unknown item {clicked_item}")
    clicks = ranking.clicks.copy()
    clicks[clicked_item] += 1
    order = _stable_order(clicks[ranking.items_by_rank])
    return Ranking(
        items_by_rank=ranking.items_by_rank[order],
        clicks=clicks,
        class_of_item=ranking.class_of_item,
    )


def expected_choice_distribution(
    ranking: Ranking, population: Population, beta: float
) -> np.ndarray:
    """Type-mixture click distribution: sum of p_t * choice_distribution(gamma_t)."""
    out = np.zeros(ranking.m_total, dtype=float)
    for share, gamma in population.type_mix():
        if share > 0.0:
            out += share * choice_distribution(ranking, gamma, beta)
    return out
