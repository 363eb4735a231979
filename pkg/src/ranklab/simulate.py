"""Monte Carlo engine: sequential-user runs, CTR sweeps and trajectories.

Each run threads one seeded generator through the per-user draws (type,
then click), so identical (environment, seed) pairs give bit-identical
trajectories. Sweep cells derive their rep seeds from the master seed and
the cell coordinates, which makes results independent of evaluation order
and safe to parallelize.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    Environment,
    Population,
    Ranking,
    _stable_order,
    _weights_by_rank,
    sample_type,
)

__all__ = [
    "Trajectory",
    "SweepResult",
    "SWEEP_AXES",
    "run",
    "static_run",
    "ctr",
    "sweep",
    "export_trajectory",
]

Seed = int | np.random.SeedSequence

#: Supported sweep axes: attention bias, indifferent share with p0 = p1,
#: and the log-ratio log(p0 / p1) at fixed p2.
SWEEP_AXES = ("beta", "p2_symmetric", "log_ratio")

#: Confidence multiplier for the reported intervals (normal 95%).
CI_Z = 1.96


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-user record of one simulation run.

    ``rankings[n]`` / ``clicks_after[n]`` snapshot the state right after
    user n's click (for static runs the displayed ranking never moves, so
    every snapshot equals the initial state). ``click_ranks`` holds the
    rank each user actually clicked, read off the list that user observed.
    """

    env: Environment
    seed: object
    dynamic: bool
    gammas: np.ndarray
    items: np.ndarray
    item_classes: np.ndarray
    click_ranks: np.ndarray
    rankings: np.ndarray
    clicks_after: np.ndarray
    class1_running: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.items.size)

    @property
    def class1_clicks(self) -> int:
        return int(self.class1_running[-1]) if self.n_steps else 0

    def final_ranking(self) -> Ranking:
        if self.n_steps == 0:
            return self.env.initial
        return Ranking(
            items_by_rank=self.rankings[-1],
            clicks=self.clicks_after[-1],
            class_of_item=self.env.initial.class_of_item,
        )

    def equals(self, other: "Trajectory") -> bool:
        return (
            self.dynamic == other.dynamic
            and np.array_equal(self.gammas, other.gammas)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.item_classes, other.item_classes)
            and np.array_equal(self.click_ranks, other.click_ranks)
            and np.array_equal(self.rankings, other.rankings)
            and np.array_equal(self.clicks_after, other.clicks_after)
            and np.array_equal(self.class1_running, other.class1_running)
        )


def _simulate(
    env: Environment,
    seed: Seed,
    *,
    dynamic: bool,
    gammas: Sequence[float] | np.ndarray | None = None,
) -> Trajectory:
    rng = np.random.default_rng(seed)
    n = env.n_users
    if gammas is not None:
        gamma_seq = np.asarray(gammas, dtype=float)
        if gamma_seq.shape != (n,):
            raise ValueError(
                f"gammas must have length n_users={n}, got shape {gamma_seq.shape}"
            )
    m = env.m_total
    classes = env.initial.class_of_item
    items_by_rank = env.initial.items_by_rank.copy()
    clicks = env.initial.clicks.copy()

    out_gammas = np.empty(n, dtype=float)
    out_items = np.empty(n, dtype=np.int64)
    out_classes = np.empty(n, dtype=np.int8)
    out_ranks = np.empty(n, dtype=np.int64)
    out_rankings = np.empty((n, m), dtype=np.int64)
    out_counts = np.empty((n, m), dtype=np.int64)
    out_c1 = np.empty(n, dtype=np.int64)

    # Click CDFs depend on the ranked list only through its class pattern,
    # which stabilizes quickly, so cache them per (pattern, gamma).
    cdf_cache: dict[tuple[bytes, float], np.ndarray] = {}
    c1 = 0
    for step in range(n):
        gamma = float(gamma_seq[step]) if gammas is not None else sample_type(env.population, rng)
        pattern = classes[items_by_rank]
        key = (pattern.tobytes(), gamma)
        cdf = cdf_cache.get(key)
        if cdf is None:
            weights = _weights_by_rank(pattern, gamma, env.beta)
            total = weights.sum()
            if total <= 0.0:
                raise ValueError("all propensities are zero; no click distribution exists")
            cdf = np.cumsum(weights)
            cdf /= cdf[-1]
            cdf_cache[key] = cdf
        rank_idx = min(int(np.searchsorted(cdf, rng.random(), side="right")), m - 1)
        item = int(items_by_rank[rank_idx])
        if dynamic:
            clicks[item] += 1
            items_by_rank = items_by_rank[_stable_order(clicks[items_by_rank])]
        c1 += int(classes[item])
        out_gammas[step] = gamma
        out_items[step] = item
        out_classes[step] = classes[item]
        out_ranks[step] = rank_idx + 1
        out_rankings[step] = items_by_rank
        out_counts[step] = clicks
        out_c1[step] = c1

    return Trajectory(
        env=env,
        seed=seed,
        dynamic=dynamic,
        gammas=out_gammas,
        items=out_items,
        item_classes=out_classes,
        click_ranks=out_ranks,
        rankings=out_rankings,
        clicks_after=out_counts,
        class1_running=out_c1,
    )


def run(
    env: Environment,
    seed: Seed,
    *,
    gammas: Sequence[float] | np.ndarray | None = None,
) -> Trajectory:
    """Simulate N sequential users under the popularity-updated ranking.

    Each user observes the ranking left by all previous clicks, draws a
    type (unless an explicit gamma sequence is supplied), clicks one item,
    and the ranking re-sorts before the next user arrives.
    """
    return _simulate(env, seed, dynamic=True, gammas=gammas)


def static_run(
    env: Environment,
    seed: Seed,
    *,
    gammas: Sequence[float] | np.ndarray | None = None,
) -> Trajectory:
    """Simulate N users against the frozen initial ranking (no re-sorting)."""
    return _simulate(env, seed, dynamic=False, gammas=gammas)


def ctr(trajectory: Trajectory) -> float:
    """Share of the run's clicks that landed on class-1 items."""
    if trajectory.n_steps == 0:
        raise ValueError("empty trajectory has no click-through rate")
    return trajectory.class1_clicks / trajectory.n_steps


def export_trajectory(trajectory: Trajectory) -> list[tuple[int, int, int, int, int]]:
    """Long-format ranking evolution: (step, item, class, rank, clicks) rows.

    Step 0 reports the initial ranking; step n the state after user n's
    click. Suitable for plotting rank-versus-step lines per item.
    """
    env = trajectory.env
    classes = env.initial.class_of_item
    rows: list[tuple[int, int, int, int, int]] = []

    def emit(step: int, items_by_rank: np.ndarray, counts: np.ndarray) -> None:
        for rank_idx in range(items_by_rank.size):
            item = int(items_by_rank[rank_idx])
            rows.append((step, item, int(classes[item]), rank_idx + 1, int(counts[item])))

    emit(0, env.initial.items_by_rank, env.initial.clicks)
    for n in range(trajectory.n_steps):
        emit(n + 1, trajectory.rankings[n], trajectory.clicks_after[n])
    return rows


@dataclass(frozen=True)
class SweepResult:
    """Mean CTR and normal-approximation 95% interval for one sweep cell."""

    axis: str
    axis_value: float
    m1: int
    mean_ctr: float
    ci_low: float
    ci_high: float
    n_reps: int


def _axis_environment(base: Environment, axis: str, value: float, m1: int) -> Environment:
    pop = base.population
    beta = base.beta
    if axis == "beta":
        beta = float(value)
    elif axis == "p2_symmetric":
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"p2 must lie in [0, 1], got {value}")
        p = (1.0 - value) / 2.0
        pop = Population(gamma0=pop.gamma0, gamma1=pop.gamma1, p0=p, p1=p)
    elif axis == "log_ratio":
        p2 = pop.p2
        total = 1.0 - p2
        p0 = total * np.exp(value) / (1.0 + np.exp(value))
        pop = Population(gamma0=pop.gamma0, gamma1=pop.gamma1, p0=p0, p1=total - p0)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    return Environment(
        m_total=base.m_total,
        m1=m1,
        population=pop,
        beta=beta,
        n_users=base.n_users,
    )


def _cell_seed(master_seed: int, axis: str, value: float, m1: int, rep: int) -> np.random.SeedSequence:
    """Seed derived from the cell coordinates, not the iteration order."""
    bits = int(np.float64(value).view(np.uint64))
    key = (SWEEP_AXES.index(axis), bits >> 32, bits & 0xFFFFFFFF, m1, rep)
    return np.random.SeedSequence(master_seed, spawn_key=key)


def _run_cell(args: tuple[Environment, str, float, int, int, int]) -> SweepResult:
    base, axis, value, m1, reps, master_seed = args
    env = _axis_environment(base, axis, value, m1)
    ctrs = np.empty(reps, dtype=float)
    for rep in range(reps):
        ctrs[rep] = ctr(run(env, _cell_seed(master_seed, axis, value, m1, rep)))
    mean = float(ctrs.mean())
    half = CI_Z * float(ctrs.std(ddof=1)) / float(np.sqrt(reps))
    return SweepResult(
        axis=axis,
        axis_value=float(value),
        m1=m1,
        mean_ctr=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        n_reps=reps,
    )


def sweep(
    base_env: Environment,
    axis: str,
    values: Sequence[float],
    m1_values: Sequence[int],
    reps: int,
    seed: int,
    *,
    threads: int = 1,
) -> list[SweepResult]:
    """Mean CTR with 95% intervals over a (axis value, m1) grid.

    Every cell runs ``reps`` independent dynamic simulations. Validation of
    the derived populations happens up front so a bad axis value fails
    before any work is done.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if reps < 2:
        raise ValueError(f"need reps >= 2 for a confidence interval, got {reps}")
    cells = []
    for value in values:
        for m1 in m1_values:
            _axis_environment(base_env, axis, value, m1)  # fail fast on bad cells
            cells.append((base_env, axis, float(value), int(m1), reps, seed))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(cell) for cell in cells]
