"""Command-line entry point.

Subcommands: simulate, sweep, limit, enumerate, fit, table, serve, replay.
Report-producing commands write a metadata-stamped CSV and, unless
--no-plot is given, render the matching figure next to it. Flag names
mirror the model symbols (m, m1, beta, gamma0, gamma1, p0, p1, n).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import estimate, figures, limits, reports, simulate
from .model import Environment, Population

__all__ = ["main"]


def _add_population_flags(parser: argparse.ArgumentParser, *, gamma0: float, gamma1: float,
                          p0: float, p1: float) -> None:
    parser.add_argument("--gamma0", type=float, default=gamma0,
                        help="class-0 click probability of type-0 users (absent ranking)")
    parser.add_argument("--gamma1", type=float, default=gamma1,
                        help="class-0 click probability of type-1 users (absent ranking)")
    parser.add_argument("--p0", type=float, default=p0, help="share of type-0 users")
    parser.add_argument("--p1", type=float, default=p1, help="share of type-1 users")
    parser.add_argument("--p", type=float, default=None,
                        help="shorthand setting p0 = p1 = P")


def _population(args: argparse.Namespace) -> Population:
    p0, p1 = args.p0, args.p1
    if getattr(args, "p", None) is not None:
        p0 = p1 = args.p
    return Population(gamma0=args.gamma0, gamma1=args.gamma1, p0=p0, p1=p1)


def _figure_path(out: Path, explicit: str | None) -> Path:
    return Path(explicit) if explicit else out.with_suffix(".png")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranklab",
        description="Popularity-ranked click dynamics: simulate, analyze limits, "
                    "fit parameters, and serve the live click experiment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one trajectory and export the ranking evolution")
    sim.add_argument("--m", type=int, default=20, help="total number of items")
    sim.add_argument("--m1", type=int, required=True, help="number of class-1 items")
    sim.add_argument("--beta", type=float, default=1.1, help="attention-bias factor (>= 1)")
    _add_population_flags(sim, gamma0=0.9, gamma1=0.1, p0=0.4, p1=0.4)
    sim.add_argument("--n", type=int, default=100, help="number of sequential users")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--static", action="store_true", help="freeze the ranking (no updates)")
    sim.add_argument("--out", type=Path, default=Path("trajectory.csv"))
    sim.add_argument("--fig", type=str, default=None)
    sim.add_argument("--no-plot", action="store_true")

    swp = sub.add_parser("sweep", help="mean CTR over an (axis value, m1) grid")
    swp.add_argument("--m", type=int, default=20)
    swp.add_argument("--beta", type=float, default=1.1, help="base attention bias")
    _add_population_flags(swp, gamma0=0.9, gamma1=0.1, p0=0.4, p1=0.4)
    swp.add_argument("--n", type=int, default=100)
    swp.add_argument("--axis", choices=simulate.SWEEP_AXES, default="beta")
    swp.add_argument("--values", type=float, nargs="+", default=[1.05, 1.1, 1.2, 1.5],
                     help="axis values (defaults are the beta sweep values)")
    swp.add_argument("--m1-values", type=int, nargs="+", default=None,
                     help="class-1 sizes (default 1..m-1)")
    swp.add_argument("--reps", type=int, default=100)
    swp.add_argument("--seed", type=int, default=0)
    swp.add_argument("--threads", type=int, default=1)
    swp.add_argument("--out", type=Path, default=Path("sweep.csv"))
    swp.add_argument("--fig", type=str, default=None)
    swp.add_argument("--no-plot", action="store_true")

    lim = sub.add_parser("limit", help="limit traffic share table over m1 = 1..m-1")
    lim.add_argument("--m", type=int, default=20)
    lim.add_argument("--beta", type=float, nargs="+", default=[1.1])
    _add_population_flags(lim, gamma0=0.8, gamma1=0.2, p0=0.4, p1=0.4)
    lim.add_argument("--out", type=Path, default=Path("limit.csv"))
    lim.add_argument("--fig", type=str, default=None)
    lim.add_argument("--no-plot", action="store_true")

    enum = sub.add_parser("enumerate", help="brute-force stable class patterns for one (m, m1)")
    enum.add_argument("--m", type=int, default=20)
    enum.add_argument("--m1", type=int, required=True)
    enum.add_argument("--beta", type=float, default=1.1)
    _add_population_flags(enum, gamma0=1.0, gamma1=0.0, p0=0.05, p1=0.05)
    enum.add_argument("--max-print", type=int, default=10)
    enum.add_argument("--out", type=Path, default=None, help="optional CSV of stable patterns")

    fit_p = sub.add_parser("fit", help="maximum-likelihood fit from click records")
    fit_p.add_argument("--records", type=Path, required=True,
                       help="click CSV or service event log (JSONL)")
    fit_p.add_argument("--regime", choices=["pooled", "dynamic", "static"], default="pooled",
                       help="fit on all clicks or only one regime (event logs only)")
    fit_p.add_argument("--out", type=Path, default=Path("fit.json"))

    tab = sub.add_parser("table", help="simulated per-condition traffic shares")
    tab.add_argument("--mode", choices=["sim1", "sim2"], required=True)
    tab.add_argument("--beta", type=float, default=1.22)
    tab.add_argument("--gamma0", type=float, default=0.74)
    tab.add_argument("--gamma1", type=float, default=0.08)
    tab.add_argument("--reps", type=int, default=1000)
    tab.add_argument("--seed", type=int, default=0)
    tab.add_argument("--out", type=Path, default=Path("table.csv"))
    tab.add_argument("--fig", type=str, default=None)
    tab.add_argument("--no-plot", action="store_true")

    srv = sub.add_parser("serve", help="run the live experiment service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument("--data-dir", type=Path, default=None,
                     help="event log and image directory (env: RANKLAB_DATA_DIR)")
    srv.add_argument("--seed", type=int, default=None, help="condition-assignment seed")
    srv.add_argument("--force-mode", choices=["dynamic", "static"], default=None,
                     help="override every condition's regime")
    srv.add_argument("--stratified", action="store_true",
                     help="balance condition assignment instead of uniform draws")
    srv.add_argument("--fsync", action="store_true", help="fsync the event log per event")
    srv.add_argument("--cors", action="store_true", help="allow cross-origin browser clients")

    rep = sub.add_parser("replay", help="rebuild click records from an event log and refit")
    rep.add_argument("--log", type=Path, required=True)
    rep.add_argument("--regime", choices=["pooled", "dynamic", "static"], default="pooled")
    rep.add_argument("--out", type=Path, default=Path("fit.json"))
    rep.add_argument("--records-out", type=Path, default=None,
                     help="optionally dump the reconstructed records as click CSV")

    return parser


def _cmd_simulate(args: argparse.Namespace) -> int:
    population = _population(args)
    env = Environment(m_total=args.m, m1=args.m1, population=population,
                      beta=args.beta, n_users=args.n)
    runner = simulate.static_run if args.static else simulate.run
    trajectory = runner(env, args.seed)
    rows = simulate.export_trajectory(trajectory)
    metadata = {
        "m": args.m, "m1": args.m1, "beta": args.beta,
        "gamma0": population.gamma0, "gamma1": population.gamma1,
        "p0": population.p0, "p1": population.p1,
        "n": args.n, "seed": args.seed, "mode": "static" if args.static else "dynamic",
    }
    reports.write_csv(
        args.out,
        ["step", "item", "class", "rank", "clicks"],
        [dict(zip(["step", "item", "class", "rank", "clicks"], row)) for row in rows],
        metadata,
    )
    if not args.no_plot:
        figures.save_trajectory_figure(rows, _figure_path(args.out, args.fig))
    print(f"wrote {args.out} ({len(rows)} rows) ctr={simulate.ctr(trajectory):.4f} "
          f"class1_clicks={trajectory.class1_clicks} n={trajectory.n_steps}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    population = _population(args)
    env = Environment(m_total=args.m, m1=1, population=population,
                      beta=args.beta, n_users=args.n)
    m1_values = args.m1_values or list(range(1, args.m))
    results = simulate.sweep(env, args.axis, args.values, m1_values,
                             reps=args.reps, seed=args.seed, threads=args.threads)
    fields = ["axis", "axis_value", "m1", "mean_ctr", "ci_low", "ci_high", "reps", "seed"]
    rows = []
    for r in results:
        row = asdict(r)
        row["reps"] = row.pop("n_reps")
        row["seed"] = args.seed
        rows.append(row)
    metadata = {
        "m": args.m, "base_beta": args.beta,
        "gamma0": population.gamma0, "gamma1": population.gamma1,
        "p0": population.p0, "p1": population.p1, "n": args.n,
        "axis": args.axis, "values": args.values, "m1_values": m1_values,
        "reps": args.reps, "seed": args.seed, "ci": "normal 95%",
    }
    reports.write_csv(args.out, fields, rows, metadata)
    if not args.no_plot:
        figures.save_sweep_figure(rows, _figure_path(args.out, args.fig))
    print(f"wrote {args.out} ({len(rows)} cells)")
    return 0


def _cmd_limit(args: argparse.Namespace) -> int:
    population = _population(args)
    rows = limits.limit_share_table(args.m, args.beta, population)
    metadata = {
        "m": args.m, "betas": args.beta,
        "gamma0": population.gamma0, "gamma1": population.gamma1,
        "p0": population.p0, "p1": population.p1,
    }
    fields = ["m1", "beta", "gamma0", "gamma1", "p0", "p1", "limit_share", "n_stable_patterns"]
    reports.write_csv(args.out, fields, rows, metadata)
    if not args.no_plot:
        figures.save_limit_figure(rows, _figure_path(args.out, args.fig))
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_enumerate(args: argparse.Namespace) -> int:
    population = _population(args)
    patterns = limits.enumerate_stable_patterns(args.m, args.m1, population, args.beta)
    th = limits.thresholds(args.m, args.beta) if args.beta > 1 else None
    band = ""
    if th and th.minority_bound <= args.m1 <= th.majority_bound:
        band = " (intermediate band: uniqueness not asserted)"
    print(f"stable patterns for m={args.m}, m1={args.m1}, beta={args.beta}: "
          f"{len(patterns)}{band}")
    for pattern in patterns[: args.max_print]:
        print("  " + "".join(str(c) for c in pattern))
    if len(patterns) > args.max_print:
        print(f"  ... {len(patterns) - args.max_print} more")
    if args.out is not None:
        reports.write_csv(
            args.out,
            ["pattern"],
            [{"pattern": "".join(str(c) for c in p)} for p in patterns],
            {"m": args.m, "m1": args.m1, "beta": args.beta,
             "gamma0": population.gamma0, "gamma1": population.gamma1,
             "p0": population.p0, "p1": population.p1,
             "n_stable_patterns": len(patterns)},
        )
        print(f"wrote {args.out}")
    return 0


def _load_records(path: Path, regime: str) -> list[estimate.ClickRecord]:
    with open(path, "r", encoding="utf-8") as handle:
        head = handle.readline().strip()
    if head.startswith("{"):
        replay = estimate.replay_event_log(path)
        if regime == "pooled":
            return replay.records
        return replay.filtered(dynamic=(regime == "dynamic"))
    if regime != "pooled":
        raise ValueError("per-regime fitting needs an event log; click CSVs carry no regime")
    return estimate.load_click_csv(path)


def _cmd_fit(args: argparse.Namespace) -> int:
    records = _load_records(args.records, args.regime)
    if not records:
        raise ValueError("no click records to fit")
    result = estimate.fit(records)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(result.to_json(), encoding="utf-8")
    print(f"wrote {args.out}: beta={result.beta_hat:.4f} gamma0={result.gamma0_hat:.4f} "
          f"gamma1={result.gamma1_hat:.4f} loglik={result.log_likelihood:.2f} "
          f"n={result.n_obs}")
    return 0


def _cmd_table(args: argparse.Namespace) -> int:
    rows = estimate.simulate_table(
        (args.beta, args.gamma0, args.gamma1), args.mode, args.seed, args.reps
    )
    fields = ["condition", "m0", "m1", "dynamic", "n_users",
              "n_type0", "n_type1", "n_type2", "mean_share", "reps"]
    dict_rows = [asdict(r) for r in rows]
    metadata = {
        "mode": args.mode, "beta": args.beta, "gamma0": args.gamma0,
        "gamma1": args.gamma1, "reps": args.reps, "seed": args.seed,
    }
    reports.write_csv(args.out, fields, dict_rows, metadata)
    if not args.no_plot:
        figures.save_table_figure(dict_rows, _figure_path(args.out, args.fig))
    shares = " ".join(f"{r.condition}={r.mean_share:.3f}" for r in rows)
    print(f"wrote {args.out}: {shares}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_env(
        data_dir=args.data_dir,
        seed=args.seed,
        force_mode=args.force_mode,
        stratified=args.stratified or None,
        fsync=args.fsync or None,
    )
    app = create_app(config, cors=args.cors)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    replay = estimate.replay_event_log(args.log)
    if args.regime == "pooled":
        records = replay.records
    else:
        records = replay.filtered(dynamic=(args.regime == "dynamic"))
    if not records:
        raise ValueError(f"event log contains no clicks for regime {args.regime!r}")
    if args.records_out is not None:
        estimate.write_click_csv(records, args.records_out)
        print(f"wrote {args.records_out} ({len(records)} records)")
    result = estimate.fit(records)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(result.to_json(), encoding="utf-8")
    print(f"wrote {args.out}: beta={result.beta_hat:.4f} gamma0={result.gamma0_hat:.4f} "
          f"gamma1={result.gamma1_hat:.4f} n={result.n_obs}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "limit": _cmd_limit,
    "enumerate": _cmd_enumerate,
    "fit": _cmd_fit,
    "table": _cmd_table,
    "serve": _cmd_serve,
    "replay": _cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, limits.NoStableLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
