import numpy as np
import pytest

from ranklab import limits
from ranklab.model import Environment, Population
from ranklab.simulate import (
    SweepResult,
    Trajectory,
    _axis_environment,
    ctr,
    export_trajectory,
    run,
    static_run,
    sweep,
)

BASELINE = Population(gamma0=0.9, gamma1=0.1, p0=0.4, p1=0.4)


def baseline_env(m1=3, n=100, beta=1.1):
    return Environment(m_total=20, m1=m1, population=BASELINE, beta=beta, n_users=n)


class TestRun:
    def test_identical_seed_gives_bit_identical_trajectory(self):
        env = baseline_env()
        a = run(env, 42)
        b = run(env, 42)
        assert a.equals(b)
        c = run(env, 43)
        assert not a.equals(c)

    def test_click_conservation_and_valid_snapshots(self):
        env = baseline_env(m1=5, n=150)
        traj = run(env, 7)
        for n in range(traj.n_steps):
            assert np.array_equal(np.sort(traj.rankings[n]), np.arange(20))
            assert traj.clicks_after[n].sum() == 20 + n + 1
            by_rank = traj.clicks_after[n][traj.rankings[n]]
            assert np.all(np.diff(by_rank) <= 0)

    def test_extreme_type0_population_never_clicks_class1(self):
        pop = Population(gamma0=1.0, gamma1=0.0, p0=1.0, p1=0.0)
        env = Environment(m_total=10, m1=4, population=pop, beta=1.2, n_users=200)
        traj = run(env, 3)
        assert traj.class1_clicks == 0
        assert ctr(traj) == 0.0

    def test_extreme_type1_population_clicks_only_class1(self):
        pop = Population(gamma0=1.0, gamma1=0.0, p0=0.0, p1=1.0)
        env = Environment(m_total=10, m1=4, population=pop, beta=1.2, n_users=200)
        traj = run(env, 3)
        assert traj.class1_clicks == 200
        assert ctr(traj) == 1.0

    def test_ctr_is_class1_fraction(self):
        traj = run(baseline_env(), 11)
        assert ctr(traj) == traj.class1_clicks / traj.n_steps
        assert ctr(traj) == traj.item_classes.astype(int).sum() / 100

    def test_null_case_ctr_is_binomial_half(self):
        # p2 = 1, beta = 1, equal classes: every click is a fair coin
        pop = Population(gamma0=0.9, gamma1=0.1, p0=0.0, p1=0.0)
        env = Environment(m_total=20, m1=10, population=pop, beta=1.0, n_users=100)
        reps = 200
        ctrs = [ctr(run(env, seed)) for seed in range(reps)]
        bound = 4.0 / (2.0 * np.sqrt(100 * reps))
        assert abs(np.mean(ctrs) - 0.5) < bound

    def test_small_minority_reaches_the_top(self):
        env = baseline_env(m1=2)
        for seed in range(10):
            traj = run(env, seed)
            # best rank each class-1 item (ids 18, 19) ever attains
            ranks = np.array(
                [np.argsort(traj.rankings[n])[18:] + 1 for n in range(traj.n_steps)]
            )
            assert ranks.min(axis=0).max() <= 5

    def test_large_minority_stays_at_the_bottom(self):
        env = baseline_env(m1=18)
        for seed in range(10):
            final = run(env, seed).final_ranking()
            assert np.all(final.classes_by_rank()[2:] == 1)

    def test_explicit_gamma_sequence(self):
        env = baseline_env(n=6)
        gammas = [1.0, 0.0, 0.5, 1.0, 0.0, 0.5]
        traj = run(env, 0, gammas=gammas)
        assert traj.gammas.tolist() == gammas
        with pytest.raises(ValueError):
            run(env, 0, gammas=[0.5, 0.5])


class TestStaticRun:
    def test_ranking_never_moves(self):
        env = baseline_env(n=80)
        traj = static_run(env, 5)
        for n in range(traj.n_steps):
            assert np.array_equal(traj.rankings[n], env.initial.items_by_rank)
            assert np.array_equal(traj.clicks_after[n], env.initial.clicks)

    def test_beta_one_static_and_dynamic_are_distributionally_equal(self):
        pop = Population(gamma0=0.8, gamma1=0.2, p0=0.3, p1=0.3)
        env = Environment(m_total=12, m1=5, population=pop, beta=1.0, n_users=100)
        reps = 150
        dyn = np.array([ctr(run(env, s)) for s in range(reps)])
        sta = np.array([ctr(static_run(env, s)) for s in range(reps)])
        se = np.sqrt(dyn.var(ddof=1) / reps + sta.var(ddof=1) / reps)
        assert abs(dyn.mean() - sta.mean()) < 4 * se

    def test_dynamic_ctr_at_least_static_when_minority_starts_at_bottom(self):
        pop = Population(gamma0=0.74, gamma1=0.08, p0=0.30, p1=0.55)
        for m1 in (3, 12):
            env = Environment(m_total=20, m1=m1, population=pop, beta=1.22, n_users=100)
            dyn = np.mean([ctr(run(env, s)) for s in range(100)])
            sta = np.mean([ctr(static_run(env, s)) for s in range(100)])
            assert dyn >= sta


class TestConvergenceCrossCheck:
    def test_long_runs_reach_the_unique_block_limit(self):
        pop = Population(gamma0=1.0, gamma1=0.0, p0=0.05, p1=0.05)
        block = limits.block_limit_ranking(6, 2, 1)
        assert limits.enumerate_stable_patterns(6, 2, pop, 1.5) == [block]
        env = Environment(m_total=6, m1=2, population=pop, beta=1.5, n_users=10_000)
        hits = sum(
            tuple(int(c) for c in run(env, seed).final_ranking().classes_by_rank()) == block
            for seed in range(20)
        )
        assert hits >= 19  # >= 95% of reps


class TestExport:
    def test_row_count_and_initial_step(self):
        env = baseline_env(n=30)
        rows = export_trajectory(run(env, 2))
        assert len(rows) == (30 + 1) * 20
        step0 = [r for r in rows if r[0] == 0]
        assert [r[3] for r in step0] == list(range(1, 21))
        assert all(r[4] == 1 for r in step0)

    def test_empty_trajectory_exports_initial_only(self):
        env = baseline_env(n=5)
        empty = Trajectory(
            env=env,
            seed=None,
            dynamic=True,
            gammas=np.empty(0),
            items=np.empty(0, dtype=np.int64),
            item_classes=np.empty(0, dtype=np.int8),
            click_ranks=np.empty(0, dtype=np.int64),
            rankings=np.empty((0, 20), dtype=np.int64),
            clicks_after=np.empty((0, 20), dtype=np.int64),
            class1_running=np.empty(0, dtype=np.int64),
        )
        rows = export_trajectory(empty)
        assert len(rows) == 20
        assert {r[0] for r in rows} == {0}

    def test_cumulative_clicks_track_steps(self):
        env = baseline_env(n=50)
        rows = export_trajectory(run(env, 9))
        for step in range(51):
            total = sum(r[4] for r in rows if r[0] == step)
            assert total == 20 + step


class TestSweep:
    def test_axis_validation(self):
        env = baseline_env()
        with pytest.raises(ValueError):
            sweep(env, "nonsense", [1.0], [3], reps=5, seed=0)
        with pytest.raises(ValueError):
            sweep(env, "beta", [1.1], [3], reps=1, seed=0)

    def test_p2_axis_sets_symmetric_shares(self):
        env = baseline_env()
        cell = _axis_environment(env, "p2_symmetric", 0.8, 5)
        assert cell.population.p0 == cell.population.p1 == pytest.approx(0.1)
        assert cell.population.p2 == pytest.approx(0.8)
        with pytest.raises(ValueError):
            _axis_environment(env, "p2_symmetric", 1.5, 5)

    def test_log_ratio_axis_fixes_p2(self):
        base = Environment(
            m_total=20, m1=3,
            population=Population(gamma0=1.0, gamma1=0.0, p0=0.4, p1=0.4),
            beta=1.1, n_users=100,
        )
        lr = float(np.log(0.7 / 0.1))
        cell = _axis_environment(base, "log_ratio", lr, 3)
        assert cell.population.p2 == pytest.approx(0.2, abs=1e-12)
        assert cell.population.p0 / cell.population.p1 == pytest.approx(7.0, rel=1e-9)

    def test_results_are_order_independent(self):
        env = baseline_env(n=40)
        a = sweep(env, "beta", [1.1, 1.3], [3, 17], reps=5, seed=123)
        b = sweep(env, "beta", [1.3, 1.1], [17, 3], reps=5, seed=123)
        keyed_a = {(r.axis_value, r.m1): r for r in a}
        keyed_b = {(r.axis_value, r.m1): r for r in b}
        assert keyed_a == keyed_b

    def test_ci_brackets_mean(self):
        env = baseline_env(n=50)
        for result in sweep(env, "beta", [1.1], [2, 10, 18], reps=10, seed=1):
            assert result.ci_low <= result.mean_ctr <= result.ci_high
            assert 0.0 <= result.mean_ctr <= 1.0
            assert result.n_reps == 10

    def test_parallel_matches_serial(self):
        env = baseline_env(n=30)
        serial = sweep(env, "beta", [1.1], [3, 17], reps=4, seed=9)
        parallel = sweep(env, "beta", [1.1], [3, 17], reps=4, seed=9, threads=2)
        assert serial == parallel
