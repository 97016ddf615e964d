"""Command-line front end: run scenarios, sweeps, bounds, and curve fits.

Subcommands
-----------
``simulate``
    Run every sweep point of a scenario (or its base configuration) for the
    configured number of replications under one policy, then write
    ``summary.csv``, ``energy_series.csv``, ``alpha_cv.csv`` and
    ``sweep.csv`` into the output directory.
``sweep``
    Same as ``simulate`` but refuses scenarios without a ``[[sweep]]``
    section, as a guard against accidentally running a single point.
``compare``
    Run several policies over the same sweep points and write one
    ``compare.csv`` row per (point, policy), each annotated with the
    stationary lower bound, so policy curves can be plotted together.
``lowerbound``
    Solve the stationary relaxation for every point and write per-device
    splits plus certificates to ``lowerbound.csv``.
``fit``
    Fit the saturating curve (a*x + 1)^(-b) to an (aoi, success_prob) CSV
    and print the matching penalty configuration snippet.

All outputs are plain CSV with stable headers; given the same scenario
file and seed, every output byte is reproducible.  Replication seeds are
derived from the master seed (replication 0 uses the master seed itself).
The ``AOI_SCHED_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics as mt
from .engine import run
from .lowerbound import NoConvergence, solve_p4
from .rng import replication_seed
from .scenario import (
    POLICY_NAMES,
    Scenario,
    ScenarioError,
    apply_overrides,
    build_system,
    load_scenario,
    make_policy,
)

log = logging.getLogger("aoisched.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

LOWERBOUND_HEADER = [
    "scenario",
    "label",
    "device",
    "rho_local",
    "rho_offload",
    "peak_age",
    "objective",
    "kkt_residual",
    "interior",
    "alpha",
    "channel_usage",
]

FIT_HEADER = ["a", "b", "rmse", "points", "iterations", "converged"]


def _setup_logging() -> None:
    name = os.environ.get("AOI_SCHED_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _rep_seed(master: int, rep: int) -> int:
    return master if rep == 0 else replication_seed(master, rep)


def _parse_probs(text: str) -> list[float] | float:
    parts = [p for p in text.split(",") if p != ""]
    values = [float(p) for p in parts]
    if len(values) == 1:
        return values[0]
    return values


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    widths = [len(h) for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    line = "  ".join(h.ljust(widths[i]) for i, h in enumerate(header))
    print(line)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))


def _base_raw(scenario: Scenario, args) -> dict:
    """Scenario mapping with command-line overrides folded in.

    Sweep-point overrides are applied on top of this, so a point that sets
    its own V (for example) still wins over a --V flag.
    """
    raw = dict(scenario.raw)
    raw = apply_overrides(raw, {})  # deep copy with no changes
    if args.V is not None:
        raw["V"] = args.V
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.warmup is not None:
        raw["warmup"] = args.warmup
    if getattr(args, "policy", None) is not None:
        raw["policy"] = args.policy
    return raw


def _simulate_job(job: tuple):
    """Run one (point, policy, replication) simulation; used by worker pools."""
    raw, policy_name, pl, pt, seed, horizon, warmup, label, rep = job
    cfg = build_system(raw, seed=seed, horizon=horizon)
    policy = make_policy(raw, policy_name=policy_name, p_local=pl, p_offload=pt)
    trace = run(cfg, policy)
    return mt.summarize(trace, cfg, warmup=warmup)


def _run_jobs(jobs: list[tuple], n_workers: int):
    if n_workers <= 1 or len(jobs) <= 1:
        return [_simulate_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_simulate_job, jobs))


def _point_lower_bound(raw: dict) -> float | None:
    try:
        return solve_p4(build_system(raw)).objective
    except (NoConvergence, ValueError) as exc:
        log.warning("lower bound unavailable: %s", exc)
        return None


def _run_points(scenario: Scenario, args, policy_names: list[str]) -> tuple[list, list]:
    """Run points x policies x replications; return (run rows, point aggregates).

    Run rows are (meta, RunMetrics) in deterministic order; aggregates are
    one entry per (point, policy) with per-replication lists and the point's
    lower bound.
    """
    base = _base_raw(scenario, args)
    master = base["seed"]
    warmup = base["warmup"]

    jobs: list[tuple] = []
    keys: list[dict] = []
    bounds: dict[str, float | None] = {}
    for point in scenario.points():
        raw = apply_overrides(base, point.overrides)
        bounds[point.label] = _point_lower_bound(raw)
        reps = point.replications if point.replications is not None else base["replications"]
        for policy_name in policy_names:
            pl = getattr(args, "p_local", None)
            pt = getattr(args, "p_offload", None)
            for rep in range(reps):
                seed = _rep_seed(master, rep)
                jobs.append(
                    (raw, policy_name, pl, pt, seed, args.horizon, warmup, point.label, rep)
                )
                keys.append(
                    {
                        "scenario": scenario.name,
                        "label": point.label,
                        "policy": policy_name,
                        "replication": rep,
                        "seed": seed,
                    }
                )

    results = _run_jobs(jobs, args.jobs)
    runs = list(zip(keys, results))

    aggregates = []
    for point in scenario.points():
        for policy_name in policy_names:
            got = [
                (meta, m)
                for meta, m in runs
                if meta["label"] == point.label and meta["policy"] == policy_name
            ]
            aggregates.append(
                {
                    "label": point.label,
                    "policy": policy_name,
                    "penalty": [m.total_penalty for _, m in got],
                    "energy": [float(m.per_device_energy.mean()) for _, m in got],
                    "cv": [m.alpha.cv if m.alpha is not None else float("nan") for _, m in got],
                    "lower_bound": bounds[point.label],
                }
            )
    return runs, aggregates


def _write_run_csvs(out: Path, runs: list, aggregates: list, scenario_name: str) -> None:
    summary = []
    energy = []
    alpha = []
    for meta, m in runs:
        summary.extend(mt.summary_rows(meta, m))
        energy.extend(mt.energy_series_rows(meta, m))
        alpha.extend(mt.alpha_cv_rows(meta, m))
    mt.write_csv(out / "summary.csv", mt.SUMMARY_HEADER, summary)
    mt.write_csv(out / "energy_series.csv", mt.ENERGY_SERIES_HEADER, energy)
    mt.write_csv(out / "alpha_cv.csv", mt.ALPHA_CV_HEADER, alpha)
    rows = [
        mt.sweep_row(
            scenario_name,
            agg["label"],
            agg["policy"],
            agg["penalty"],
            agg["energy"],
            agg["cv"],
            agg["lower_bound"],
        )
        for agg in aggregates
    ]
    mt.write_csv(out / "sweep.csv", mt.SWEEP_HEADER, rows)


def _print_aggregates(aggregates: list) -> None:
    header = ["label", "policy", "reps", "penalty", "stderr", "energy", "lower_bound"]
    rows = []
    for agg in aggregates:
        row = mt.sweep_row("", agg["label"], agg["policy"], agg["penalty"], agg["energy"], agg["cv"], agg["lower_bound"])
        _, label, policy, reps, pen, stderr, en, _, lb = row
        rows.append(
            [
                str(label),
                str(policy),
                str(reps),
                f"{pen:.6g}",
                f"{stderr:.3g}",
                f"{en:.6g}",
                f"{lb:.6g}" if isinstance(lb, float) else "-",
            ]
        )
    _print_table(header, rows)


def _cmd_simulate(args, *, require_sweep: bool = False) -> int:
    scenario = load_scenario(args.scenario)
    if require_sweep and not scenario.has_sweep:
        print(f"error: scenario {scenario.name!r} has no [[sweep]] section", file=sys.stderr)
        return EXIT_CONFIG
    policy_name = args.policy if args.policy is not None else scenario.policy_name
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs, aggregates = _run_points(scenario, args, [policy_name])
    _write_run_csvs(out, runs, aggregates, scenario.name)
    if args.trace:
        base = _base_raw(scenario, args)
        point = scenario.points()[0]
        raw = apply_overrides(base, point.overrides)
        cfg = build_system(raw, seed=_rep_seed(base["seed"], 0), horizon=args.horizon)
        if cfg.horizon * len(cfg.devices) > 2_000_000:
            print(
                "error: --trace would emit more than 2e6 rows; lower --horizon",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        policy = make_policy(raw, policy_name=policy_name, p_local=args.p_local, p_offload=args.p_offload)
        trace = run(cfg, policy, record=True)
        mt.write_csv(out / "trace.csv", mt.TRACE_HEADER, mt.trace_rows(trace))
    _print_aggregates(aggregates)
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    return _cmd_simulate(args, require_sweep=True)


def _cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    policy_names = [p.strip() for p in args.policies.split(",") if p.strip()]
    for name in policy_names:
        if name not in POLICY_NAMES:
            print(f"error: unknown policy {name!r}", file=sys.stderr)
            return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs, aggregates = _run_points(scenario, args, policy_names)
    rows = [
        mt.sweep_row(
            scenario.name,
            agg["label"],
            agg["policy"],
            agg["penalty"],
            agg["energy"],
            agg["cv"],
            agg["lower_bound"],
        )
        for agg in aggregates
    ]
    mt.write_csv(out / "compare.csv", mt.SWEEP_HEADER, rows)
    _print_aggregates(aggregates)
    print(f"wrote {out / 'compare.csv'}")
    return EXIT_OK


def _cmd_lowerbound(args) -> int:
    scenario = load_scenario(args.scenario)
    base = _base_raw(scenario, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    printed = []
    for point in scenario.points():
        raw = apply_overrides(base, point.overrides)
        cfg = build_system(raw)
        try:
            sol = solve_p4(cfg, tol=args.tol)
        except NoConvergence as exc:
            print(f"error: {point.label}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        for i in range(len(cfg.devices)):
            rows.append(
                [
                    scenario.name,
                    point.label,
                    i,
                    sol.rho_local[i],
                    sol.rho_offload[i],
                    sol.peak_age[i],
                    sol.per_device_objective[i],
                    sol.kkt_residuals[i],
                    1 if sol.interior[i] else 0,
                    "",
                    "",
                ]
            )
        rows.append(
            [
                scenario.name,
                point.label,
                "ALL",
                float(sol.rho_local.sum()),
                float(sol.rho_offload.sum()),
                "",
                sol.objective,
                float(max(sol.kkt_residuals)),
                int(all(sol.interior)),
                sol.alpha,
                sol.channel_usage,
            ]
        )
        printed.append(
            [
                point.label,
                f"{sol.objective:.8g}",
                f"{sol.alpha:.8g}",
                f"{sol.channel_usage:.8g}",
                f"{float(max(sol.kkt_residuals)):.3g}",
            ]
        )
    mt.write_csv(out / "lowerbound.csv", LOWERBOUND_HEADER, rows)
    _print_table(["label", "objective", "alpha", "channel_usage", "max_kkt_residual"], printed)
    print(f"wrote {out / 'lowerbound.csv'}")
    return EXIT_OK


def _read_fit_points(path: Path) -> list[tuple[float, float]]:
    if not path.exists():
        raise ScenarioError(f"input file not found: {path}")
    points: list[tuple[float, float]] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ScenarioError(f"{path.name}: no data rows")
    header = [cell.strip().lower() for cell in rows[0]]
    start = 0
    xi, yi = 0, 1
    if any(not _is_number(cell) for cell in rows[0][:2]):
        x_names = ("aoi", "age", "x")
        y_names = ("success_prob", "success", "probability", "y")
        try:
            xi = next(i for i, name in enumerate(header) if name in x_names)
            yi = next(i for i, name in enumerate(header) if name in y_names)
        except StopIteration:
            raise ScenarioError(
                f"{path.name}: header must name an age column {x_names} "
                f"and a probability column {y_names}"
            ) from None
        start = 1
    for row in rows[start:]:
        try:
            points.append((float(row[xi]), float(row[yi])))
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"{path.name}: bad row {row!r}: {exc}") from exc
    return points


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _cmd_fit(args) -> int:
    points = _read_fit_points(Path(args.input))
    try:
        result = mt.fit_composite(points)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"a = {result.a!r}")
    print(f"b = {result.b!r}")
    print(f"rmse = {result.rmse:.6g} over {len(points)} points ({result.iterations} iterations)")
    print("penalty = { kind = \"composite\", a = %r, b = %r }" % (result.a, result.b))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        mt.write_csv(
            out / "fit.csv",
            FIT_HEADER,
            [[result.a, result.b, result.rmse, len(points), result.iterations, result.converged]],
        )
        print(f"wrote {out / 'fit.csv'}")
    return EXIT_OK


def _add_common_flags(p: argparse.ArgumentParser, *, scenario: bool = True) -> None:
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario file (.toml or .json)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default="out", help="output directory (default: out)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--policy",
        choices=POLICY_NAMES,
        default=None,
        help="override the scenario's policy",
    )
    p.add_argument("--V", type=float, default=None, help="override the trade-off weight V")
    p.add_argument("--horizon", type=int, default=None, help="override the horizon (slots)")
    p.add_argument(
        "--warmup",
        type=float,
        default=None,
        help="fraction of the horizon discarded before averaging (default: scenario)",
    )
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument(
        "--pl",
        dest="p_local",
        type=_parse_probs,
        default=None,
        help="randomized policy: local probability (scalar or comma list)",
    )
    p.add_argument(
        "--pt",
        dest="p_offload",
        type=_parse_probs,
        default=None,
        help="randomized policy: offload probability (scalar or comma list)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aoisched",
        description="Age-penalty scheduling simulator with an edge-offload option.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one policy over the scenario's points")
    _add_common_flags(p)
    _add_run_flags(p)
    p.add_argument("--trace", action="store_true", help="also write a per-slot trace.csv")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="like simulate, but requires a [[sweep]] section")
    _add_common_flags(p)
    _add_run_flags(p)
    p.add_argument("--trace", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="run several policies and tabulate against the bound")
    _add_common_flags(p)
    _add_run_flags(p)
    p.add_argument(
        "--policies",
        default="maxweight,maxreduction",
        help="comma-separated policies to run (default: maxweight,maxreduction)",
    )
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("lowerbound", help="solve the stationary lower bound")
    _add_common_flags(p)
    p.add_argument("--V", type=float, default=None, help=argparse.SUPPRESS)
    p.add_argument("--warmup", type=float, default=None, help=argparse.SUPPRESS)
    p.add_argument("--tol", type=float, default=1e-6, help="bisection tolerance (default: 1e-6)")
    p.set_defaults(func=_cmd_lowerbound)

    p = sub.add_parser("fit", help="fit (a*x+1)^(-b) to an (aoi, success_prob) CSV")
    p.add_argument("--input", required=True, help="CSV with aoi and success_prob columns")
    p.add_argument("--out", default=None, help="optional output directory for fit.csv")
    p.set_defaults(func=_cmd_fit)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, mt.FitDiverged, mt.RegimeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover - exercised via the console script
    sys.exit(main())
