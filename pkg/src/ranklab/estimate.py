"""Maximum-likelihood fitting of the choice model from click records.

A click record is one observed click: the participant's type, the class
pattern of the ranked list at the moment of the click, and the clicked
rank. The likelihood of (beta, gamma0, gamma1) is the product of the
model's click probabilities of the observed ranks; gamma2 stays fixed at
1/2 and the type shares are taken from the data, not fitted.

Fitting is derivative-free: a coarse grid scan over the bounded parameter
box followed by compass-search refinement. Because records of a given
type involve only that type's gamma, the grid scan profiles gamma0 and
gamma1 independently per beta, which makes the full-box scan cheap without
changing its result.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import conditions as cond
from .model import Environment, Population
from .simulate import Trajectory, run, static_run

__all__ = [
    "ClickRecord",
    "FitResult",
    "TableRow",
    "ParameterBounds",
    "DEFAULT_BOUNDS",
    "log_likelihood",
    "fit",
    "simulate_table",
    "records_from_trajectory",
    "load_click_csv",
    "replay_event_log",
    "ingest_click_log",
    "write_click_csv",
    "EventLogReplay",
]

TYPE_LABELS = ("type0", "type1", "type2")
_TYPE_ALIASES = {
    "type0": 0, "cat": 0, "0": 0,
    "type1": 1, "dog": 1, "1": 1,
    "type2": 2, "neither": 2, "2": 2,
}


@dataclass(frozen=True)
class ClickRecord:
    """One observed click: who clicked, what layout they saw, which rank."""

    participant_type: int
    classes_by_rank: tuple[int, ...]
    clicked_rank: int

    def __post_init__(self) -> None:
        if self.participant_type not in (0, 1, 2):
            raise ValueError(f"participant_type must be 0, 1 or 2, got {self.participant_type}")
        m = len(self.classes_by_rank)
        if m < 2:
            raise ValueError("classes_by_rank needs at least two entries")
        if any(c not in (0, 1) for c in self.classes_by_rank):
            raise ValueError("classes_by_rank entries must be 0 or 1")
        n1 = sum(self.classes_by_rank)
        if n1 == 0 or n1 == m:
            raise ValueError("classes_by_rank must contain both classes")
        if not 1 <= self.clicked_rank <= m:
            raise ValueError(f"clicked_rank must lie in 1..{m}, got {self.clicked_rank}")

    @property
    def clicked_class(self) -> int:
        return self.classes_by_rank[self.clicked_rank - 1]


@dataclass(frozen=True)
class ParameterBounds:
    """Box constraints for (beta, gamma0, gamma1)."""

    beta: tuple[float, float] = (1.0, 3.0)
    gamma0: tuple[float, float] = (0.5, 1.0)
    gamma1: tuple[float, float] = (0.0, 0.5)

    def as_tuples(self) -> tuple[tuple[float, float], ...]:
        return (self.beta, self.gamma0, self.gamma1)


DEFAULT_BOUNDS = ParameterBounds()


@dataclass(frozen=True)
class FitResult:
    beta_hat: float
    gamma0_hat: float
    gamma1_hat: float
    log_likelihood: float
    n_obs: int
    converged: bool
    at_bounds: tuple[str, ...] = ()
    unidentified: tuple[str, ...] = ()
    trace_len: int = 0

    def params(self) -> tuple[float, float, float]:
        return (self.beta_hat, self.gamma0_hat, self.gamma1_hat)

    def to_json(self, bounds: ParameterBounds = DEFAULT_BOUNDS) -> str:
        return json.dumps(
            {
                "beta_hat": self.beta_hat,
                "gamma0_hat": self.gamma0_hat,
                "gamma1_hat": self.gamma1_hat,
                "log_likelihood": self.log_likelihood,
                "n_obs": self.n_obs,
                "converged": self.converged,
                "at_bounds": list(self.at_bounds),
                "unidentified": list(self.unidentified),
                "trace_len": self.trace_len,
                "bounds": {
                    "beta": list(bounds.beta),
                    "gamma0": list(bounds.gamma0),
                    "gamma1": list(bounds.gamma1),
                },
            },
            indent=2,
        )


class _PackedClicks:
    """Click records grouped by unique class pattern for fast likelihood sums."""

    def __init__(self, records: Sequence[ClickRecord]):
        if not records:
            raise ValueError("need at least one click record")
        pattern_index: dict[tuple[int, ...], int] = {}
        ones_ranks: list[list[int]] = []
        for rec in records:
            if rec.classes_by_rank not in pattern_index:
                pattern_index[rec.classes_by_rank] = len(ones_ranks)
                ones_ranks.append(
                    [k + 1 for k, c in enumerate(rec.classes_by_rank) if c == 1]
                )
        n_u = len(ones_ranks)
        self.u_m = np.array([len(p) for p in pattern_index], dtype=np.int64)
        self.u_m1 = np.array([len(r) for r in ones_ranks], dtype=np.int64)
        self.u_m0 = self.u_m - self.u_m1
        # flattened class-1 ranks with per-pattern offsets, for reduceat sums
        flat = np.array([r for ranks in ones_ranks for r in ranks], dtype=np.int64)
        offsets = np.zeros(n_u + 1, dtype=np.int64)
        np.cumsum(self.u_m1, out=offsets[1:])
        pattern_of_entry = np.repeat(np.arange(n_u), self.u_m1)
        self._exponents = (self.u_m[pattern_of_entry] - flat).astype(float)
        self._offsets = offsets[:-1]

        # per-type aggregates over unique patterns
        self.n_by_type = np.zeros(3, dtype=np.int64)
        self.rank_exponent_sum = np.zeros(3, dtype=float)
        self.c0 = np.zeros((3, n_u), dtype=float)
        self.c1 = np.zeros((3, n_u), dtype=float)
        for rec in records:
            u = pattern_index[rec.classes_by_rank]
            t = rec.participant_type
            self.n_by_type[t] += 1
            self.rank_exponent_sum[t] += len(rec.classes_by_rank) - rec.clicked_rank
            if rec.clicked_class == 1:
                self.c1[t, u] += 1.0
            else:
                self.c0[t, u] += 1.0
        self.n_u = np.asarray(self.c0 + self.c1)
        self.n_obs = len(records)
        # class-size log terms do not depend on the parameters
        self._const = np.zeros(3, dtype=float)
        log_m0 = np.log(self.u_m0.astype(float))
        log_m1 = np.log(self.u_m1.astype(float))
        for t in range(3):
            self._const[t] = -float(self.c0[t] @ log_m0 + self.c1[t] @ log_m1)

    def class_weight_sums(self, beta: float) -> tuple[np.ndarray, np.ndarray]:
        """Per unique pattern: total rank weight on class-1 and class-0 items."""
        if beta == 1.0:
            a = self.u_m1.astype(float)
            t = self.u_m.astype(float)
        else:
            powers = beta ** self._exponents
            a = np.add.reduceat(powers, self._offsets)
            t = (beta ** self.u_m.astype(float) - 1.0) / (beta - 1.0)
        return a, t - a

    def loglik_profile(self, beta: float, t: int, gammas: np.ndarray) -> np.ndarray:
        """Type-t log-likelihood over a vector of gamma values at fixed beta."""
        a, b = self.class_weight_sums(beta)
        g = gammas[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = g * (b / self.u_m0)[None, :] + (1.0 - g) * (a / self.u_m1)[None, :]
            terms = -self.n_u[t][None, :] * np.log(z)
            out = terms.sum(axis=1)
            c0_tot = self.c0[t].sum()
            c1_tot = self.c1[t].sum()
            out += np.where(c0_tot > 0, c0_tot * np.log(gammas), 0.0)
            out += np.where(c1_tot > 0, c1_tot * np.log(1.0 - gammas), 0.0)
        out += self.rank_exponent_sum[t] * math.log(beta)
        out += self._const[t]
        return out

    def loglik(self, beta: float, gamma0: float, gamma1: float) -> float:
        total = 0.0
        for t, gamma in ((0, gamma0), (1, gamma1), (2, 0.5)):
            if self.n_by_type[t] == 0:
                continue
            value = float(self.loglik_profile(beta, t, np.array([gamma]))[0])
            if math.isnan(value):
                return float("-inf")
            total += value
        return total


def _validate_params(
    params: Sequence[float], bounds: ParameterBounds = DEFAULT_BOUNDS
) -> tuple[float, float, float]:
    beta, gamma0, gamma1 = (float(x) for x in params)
    (b_lo, b_hi), (g0_lo, g0_hi), (g1_lo, g1_hi) = bounds.as_tuples()
    if not b_lo <= beta <= b_hi:
        raise ValueError(f"beta={beta} outside bounds [{b_lo}, {b_hi}]")
    if not g0_lo <= gamma0 <= g0_hi:
        raise ValueError(f"gamma0={gamma0} outside bounds [{g0_lo}, {g0_hi}]")
    if not g1_lo <= gamma1 <= g1_hi:
        raise ValueError(f"gamma1={gamma1} outside bounds [{g1_lo}, {g1_hi}]")
    return beta, gamma0, gamma1


def log_likelihood(params: Sequence[float], records: Sequence[ClickRecord]) -> float:
    """Sum of log click probabilities of the observed ranks under the model.

    Returns ``-inf`` (rather than raising) when some observed click has
    zero model probability, e.g. a type-0 participant clicking class 1
    under gamma0 = 1.
    """
    beta, gamma0, gamma1 = _validate_params(params)
    return _PackedClicks(records).loglik(beta, gamma0, gamma1)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.linspace(lo, hi, n + 1)


def fit(
    records: Sequence[ClickRecord],
    bounds: ParameterBounds = DEFAULT_BOUNDS,
    *,
    grid_step: float = 0.01,
    refine_tol: float = 1e-4,
) -> FitResult:
    """Maximize the click log-likelihood over the bounded parameter box.

    Coarse grid first, then compass-search refinement from the best grid
    point; the refined optimum is never worse than the best grid point.
    A gamma whose participant type is absent from the data is reported at
    the middle of its box and flagged as unidentified.
    """
    packed = _PackedClicks(records)
    (b_lo, b_hi), (g0_lo, g0_hi), (g1_lo, g1_hi) = bounds.as_tuples()
    beta_grid = _grid(b_lo, b_hi, grid_step)
    gamma_grids = (_grid(g0_lo, g0_hi, grid_step), _grid(g1_lo, g1_hi, grid_step))

    unidentified = []
    if packed.n_by_type[0] == 0:
        unidentified.append("gamma0")
    if packed.n_by_type[1] == 0:
        unidentified.append("gamma1")

    evaluations = 0
    best_ll = float("-inf")
    best = (beta_grid[0], float(np.mean(gamma_grids[0])), float(np.mean(gamma_grids[1])))
    for beta in beta_grid:
        ll = 0.0
        point = [float(beta), best[1], best[2]]
        for t, grid in ((0, gamma_grids[0]), (1, gamma_grids[1])):
            if packed.n_by_type[t] == 0:
                point[t + 1] = float(np.mean(grid))
                continue
            profile = packed.loglik_profile(float(beta), t, grid)
            evaluations += grid.size
            j = int(np.nanargmax(np.where(np.isnan(profile), -np.inf, profile)))
            ll += float(profile[j])
            point[t + 1] = float(grid[j])
        if packed.n_by_type[2] > 0:
            ll += float(packed.loglik_profile(float(beta), 2, np.array([0.5]))[0])
            evaluations += 1
        if ll > best_ll:
            best_ll = ll
            best = (point[0], point[1], point[2])

    if not math.isfinite(best_ll):
        return FitResult(
            beta_hat=best[0],
            gamma0_hat=best[1],
            gamma1_hat=best[2],
            log_likelihood=best_ll,
            n_obs=packed.n_obs,
            converged=False,
            unidentified=tuple(unidentified),
            trace_len=evaluations,
        )

    # compass-search refinement inside the box
    lows = np.array([b_lo, g0_lo, g1_lo])
    highs = np.array([b_hi, g0_hi, g1_hi])
    point = np.array(best, dtype=float)
    active = [0] + [t + 1 for t in (0, 1) if packed.n_by_type[t] > 0]
    step = grid_step / 2.0
    while step >= refine_tol:
        improved = False
        for axis in active:
            for direction in (+1.0, -1.0):
                candidate = point.copy()
                candidate[axis] = float(
                    np.clip(candidate[axis] + direction * step, lows[axis], highs[axis])
                )
                if candidate[axis] == point[axis]:
                    continue
                ll = packed.loglik(*candidate)
                evaluations += 1
                if ll > best_ll:
                    best_ll = ll
                    point = candidate
                    improved = True
        if not improved:
            step /= 2.0

    tol = refine_tol
    at_bounds = []
    for name, axis in (("beta", 0), ("gamma0", 1), ("gamma1", 2)):
        if name in unidentified:
            continue
        if point[axis] - lows[axis] <= tol or highs[axis] - point[axis] <= tol:
            at_bounds.append(name)

    return FitResult(
        beta_hat=float(point[0]),
        gamma0_hat=float(point[1]),
        gamma1_hat=float(point[2]),
        log_likelihood=best_ll,
        n_obs=packed.n_obs,
        converged=True,
        at_bounds=tuple(at_bounds),
        unidentified=tuple(unidentified),
        trace_len=evaluations,
    )


def _gamma_sequence(
    type_counts: tuple[int, int, int],
    population: Population,
    rng: np.random.Generator,
) -> np.ndarray:
    """Arrival sequence realizing exact per-type counts in random order."""
    gammas = np.concatenate(
        [
            np.full(type_counts[0], population.gamma0),
            np.full(type_counts[1], population.gamma1),
            np.full(type_counts[2], population.gamma2),
        ]
    )
    return gammas[rng.permutation(gammas.size)]


def _condition_environment(
    condition: cond.ExperimentCondition,
    params: tuple[float, float, float],
    n_users: int,
    type_counts: tuple[int, int, int],
) -> Environment:
    beta, gamma0, gamma1 = params
    total = sum(type_counts)
    population = Population(
        gamma0=gamma0,
        gamma1=gamma1,
        p0=type_counts[0] / total,
        p1=type_counts[1] / total,
    )
    return Environment(
        m_total=condition.m0 + condition.m1,
        m1=condition.m1,
        population=population,
        beta=beta,
        n_users=n_users,
    )


@dataclass(frozen=True)
class TableRow:
    """Mean simulated class-1 traffic share for one experiment condition."""

    condition: str
    m0: int
    m1: int
    dynamic: bool
    n_users: int
    n_type0: int
    n_type1: int
    n_type2: int
    mean_share: float
    reps: int


def simulate_table(
    fitted: FitResult | Sequence[float],
    mode: str,
    seed: int,
    reps: int,
) -> list[TableRow]:
    """Mean class-1 traffic share per condition under fitted parameters.

    ``sim1`` matches each condition's exact participant-type tally;
    ``sim2`` runs 100 users per condition with the standardized type mix.
    Each rep shuffles the arrival order of the fixed type multiset.
    """
    if mode not in ("sim1", "sim2"):
        raise ValueError(f"mode must be 'sim1' or 'sim2', got {mode!r}")
    params = fitted.params() if isinstance(fitted, FitResult) else tuple(float(x) for x in fitted)
    rows = []
    for index, condition in enumerate(cond.CONDITIONS):
        if mode == "sim1":
            type_counts = condition.type_counts()
        else:
            type_counts = cond.SIM2_TYPE_COUNTS
        n_users = sum(type_counts)
        env = _condition_environment(condition, params, n_users, type_counts)
        simulate = run if condition.dynamic else static_run
        shares = np.empty(reps, dtype=float)
        for rep in range(reps):
            ss = np.random.SeedSequence(seed, spawn_key=(index, rep))
            rng = np.random.default_rng(ss)
            gammas = _gamma_sequence(type_counts, env.population, rng)
            traj = simulate(env, rng, gammas=gammas)
            shares[rep] = traj.class1_clicks / n_users
        rows.append(
            TableRow(
                condition=condition.id,
                m0=condition.m0,
                m1=condition.m1,
                dynamic=condition.dynamic,
                n_users=n_users,
                n_type0=type_counts[0],
                n_type1=type_counts[1],
                n_type2=type_counts[2],
                mean_share=float(shares.mean()),
                reps=reps,
            )
        )
    return rows


def records_from_trajectory(
    trajectory: Trajectory, participant_types: Sequence[int]
) -> list[ClickRecord]:
    """Click records as an observer of the run would log them.

    ``participant_types`` gives each user's declared type (0/1/2) in
    arrival order; the pattern each user saw is the ranking left by the
    previous user's click.
    """
    if len(participant_types) != trajectory.n_steps:
        raise ValueError("need one participant type per simulated user")
    env = trajectory.env
    classes = env.initial.class_of_item
    records = []
    for n in range(trajectory.n_steps):
        if n == 0 or not trajectory.dynamic:
            items_by_rank = env.initial.items_by_rank
        else:
            items_by_rank = trajectory.rankings[n - 1]
        pattern = tuple(int(c) for c in classes[items_by_rank])
        records.append(
            ClickRecord(
                participant_type=int(participant_types[n]),
                classes_by_rank=pattern,
                clicked_rank=int(trajectory.click_ranks[n]),
            )
        )
    return records


def _parse_type(token: str, row_number: int) -> int:
    key = token.strip().lower()
    if key not in _TYPE_ALIASES:
        raise ValueError(f"row {row_number}: unknown participant_type {token!r}")
    return _TYPE_ALIASES[key]


def load_click_csv(source: str | Path | io.TextIOBase) -> list[ClickRecord]:
    """Read click records from CSV with columns participant_type, clicked_rank,
    classes_by_rank (a 0/1 string, rank 1 first). Malformed rows are rejected
    with their row number."""
    close = False
    if isinstance(source, (str, Path)):
        handle: io.TextIOBase = open(source, "r", newline="", encoding="utf-8")
        close = True
    else:
        handle = source
    try:
        reader = csv.DictReader(handle)
        required = {"participant_type", "clicked_rank", "classes_by_rank"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"click CSV must have columns {sorted(required)}")
        records = []
        for row_number, row in enumerate(reader, start=2):
            ptype = _parse_type(row["participant_type"], row_number)
            try:
                rank = int(row["clicked_rank"])
            except (TypeError, ValueError):
                raise ValueError(
                    f"row {row_number}: clicked_rank {row['clicked_rank']!r} is not an integer"
                ) from None
            pattern_str = (row["classes_by_rank"] or "").strip()
            if not pattern_str or any(ch not in "01" for ch in pattern_str):
                raise ValueError(
                    f"row {row_number}: classes_by_rank must be a non-empty 0/1 string"
                )
            try:
                records.append(
                    ClickRecord(
                        participant_type=ptype,
                        classes_by_rank=tuple(int(ch) for ch in pattern_str),
                        clicked_rank=rank,
                    )
                )
            except ValueError as exc:
                raise ValueError(f"row {row_number}: {exc}") from None
        return records
    finally:
        if close:
            handle.close()


def write_click_csv(records: Sequence[ClickRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["participant_type", "clicked_rank", "classes_by_rank"])
        for rec in records:
            writer.writerow(
                [
                    TYPE_LABELS[rec.participant_type],
                    rec.clicked_rank,
                    "".join(str(c) for c in rec.classes_by_rank),
                ]
            )


@dataclass(frozen=True)
class EventLogReplay:
    """Click records reconstructed from a service event log, plus provenance."""

    records: list[ClickRecord]
    condition_ids: list[str]
    dynamic_flags: list[bool]

    def filtered(self, dynamic: bool) -> list[ClickRecord]:
        return [r for r, d in zip(self.records, self.dynamic_flags) if d == dynamic]


class _ConditionReplay:
    def __init__(self, payload: dict, condition_id: str):
        items = payload["items"]
        classes = payload["classes"]
        if len(items) != len(classes):
            raise ValueError(f"condition {condition_id}: items/classes length mismatch")
        self.dynamic = bool(payload["dynamic"])
        self.items_by_rank = list(items)
        self.class_of_item = {item: int(c) for item, c in zip(items, classes)}
        self.clicks = {item: 1 for item in items}

    def pattern(self) -> tuple[int, ...]:
        return tuple(self.class_of_item[item] for item in self.items_by_rank)

    def rank_of(self, item: str) -> int:
        return self.items_by_rank.index(item) + 1

    def apply_click(self, item: str) -> None:
        self.clicks[item] += 1
        if self.dynamic:
            self.items_by_rank.sort(key=lambda it: -self.clicks[it])
            # sort is stable, so ties keep their previous relative order


def replay_event_log(source: str | Path | Iterable[str]) -> EventLogReplay:
    """Rebuild the click records implied by an append-only event log.

    Each condition replays from its logged initialization; dynamic
    conditions re-apply the popularity update after every click, static
    ones keep the initial order. Timestamps must not decrease within a
    condition, otherwise the replay order would be ambiguous.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    else:
        lines = list(source)

    conditions: dict[str, _ConditionReplay] = {}
    session_types: dict[str, int] = {}
    session_condition: dict[str, str] = {}
    last_ts: dict[str, float] = {}
    records: list[ClickRecord] = []
    condition_ids: list[str] = []
    dynamic_flags: list[bool] = []

    for line_number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {line_number}: invalid JSON ({exc})") from None
        try:
            kind = event["kind"]
            ts = float(event["ts"])
            condition_id = event["condition"]
            payload = event.get("payload") or {}
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"line {line_number}: malformed event record") from None

        if condition_id:
            previous = last_ts.get(condition_id)
            if previous is not None and ts < previous:
                raise ValueError(
                    f"line {line_number}: timestamp moves backwards within "
                    f"condition {condition_id}; replay order would be ambiguous"
                )
            last_ts[condition_id] = ts

        if kind == "condition_init":
            conditions[condition_id] = _ConditionReplay(payload, condition_id)
        elif kind == "session_created":
            session_condition[event["session"]] = condition_id
        elif kind == "type":
            session_types[event["session"]] = _parse_type(payload["answer"], line_number)
        elif kind == "click":
            session = event["session"]
            if condition_id not in conditions:
                raise ValueError(f"line {line_number}: click before condition_init")
            if session not in session_types:
                raise ValueError(f"line {line_number}: click before type answer")
            state = conditions[condition_id]
            item = payload["item"]
            if item not in state.class_of_item:
                raise ValueError(f"line {line_number}: unknown item {item!r}")
            records.append(
                ClickRecord(
                    participant_type=session_types[session],
                    classes_by_rank=state.pattern(),
                    clicked_rank=state.rank_of(item),
                )
            )
            condition_ids.append(condition_id)
            dynamic_flags.append(state.dynamic)
            state.apply_click(item)
        elif kind == "rating":
            pass
        else:
            raise ValueError(f"line {line_number}: unknown event kind {kind!r}")

    return EventLogReplay(records=records, condition_ids=condition_ids, dynamic_flags=dynamic_flags)


def ingest_click_log(source: str | Path) -> list[ClickRecord]:
    """Load click records from either a service event log (JSONL) or a click CSV."""
    path = Path(source)
    with open(path, "r", encoding="utf-8") as handle:
        head = handle.readline().strip()
    if head.startswith("{"):
        return replay_event_log(path).records
    return load_click_csv(path)
