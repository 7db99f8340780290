"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from afarq import config as cfgmod
from afarq.config import ConfigError, RunConfig
from afarq.montecarlo import simulate_protocol
from afarq.opa import (
    RecursionVariant,
    SolverError,
    kkt_residuals,
    lambda_from_anchor,
    opa_closed_form,
)
from afarq.outage import PowerSchedule, Scenario, cumulative_outage, epa_power
from afarq.validation import run_validation

log = logging.getLogger("afarq")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

SOLVE_COLUMNS = ["round", "P_source", "P_source_dB", "P_relay", "eps_round", "E_cumulative",
                 "kkt_residual"]


def sweep_columns(max_m: int) -> list[str]:
    return (["eps", "method", "variant", "M", "eta"] + [f"P_{m}" for m in range(1, max_m + 1)]
            + ["P_avg", "E_M", "kkt_max_residual", "error"])


def db(p: float) -> float:
    return 10.0 * math.log10(p)


def parse_eps_grid(text: str) -> list[float]:
    """``start:stop:points_per_decade`` -> log-spaced, decreasing, both ends included."""
    try:
        start, stop, ppd = text.split(":")
        start, stop, ppd = float(start), float(stop), int(ppd)
    except ValueError as exc:
        raise ConfigError(f"--eps-grid: expected start:stop:points-per-decade, got {text!r}") from exc
    if not (0 < stop < start < 1) or ppd < 1:
        raise ConfigError(f"--eps-grid: need 1 > start > stop > 0 and points-per-decade >= 1, got {text!r}")
    n = int(round(math.log10(start / stop) * ppd)) + 1
    return [float(v) for v in np.logspace(math.log10(start), math.log10(stop), n)]


def compute_schedule(method: str, scenario: Scenario, run: RunConfig, variant: RecursionVariant):
    if method == "epa":
        sched = epa_power(scenario, run.stats)
        lam = lambda_from_anchor(sched.p[-1], scenario, run.stats)
        return sched, kkt_residuals(sched, lam, scenario, run.stats)
    return opa_closed_form(scenario, run.stats, replace(run.solver, recursion_variant=variant))


def _load(args) -> RunConfig:
    run = cfgmod.load(args.config) if args.config else RunConfig()
    sim_updates = {k: getattr(args, k) for k in ("seed", "trials", "workers")
                   if getattr(args, k, None) is not None}
    if sim_updates:
        try:
            run = run.replace(sim=replace(run.sim, **sim_updates))
        except ValueError as exc:
            raise ConfigError(f"sim: {exc}") from exc
    if getattr(args, "variant", None) and isinstance(args.variant, str):
        run = run.replace(solver=replace(run.solver, recursion_variant=RecursionVariant(args.variant)))
    return run


def _out_path(args, run: RunConfig) -> Path:
    return Path(args.out or run.output_path)


def cmd_solve(args) -> int:
    run = _load(args)
    sc = run.scenario
    try:
        sched, kkt = compute_schedule(args.method, sc, run, run.solver.recursion_variant)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    bd = cumulative_outage(sched, sc, run.stats)
    relay = sched.relay_powers(sc)
    rows = []
    for m in range(sc.M):
        rows.append({"round": m + 1, "P_source": sched.p[m], "P_source_dB": db(sched.p[m]),
                     "P_relay": relay[m], "eps_round": bd.eps_round[m],
                     "E_cumulative": bd.cumulative[m + 1],
                     "kkt_residual": kkt.stationarity_residual[m]})
    print(f"method={args.method} variant={run.solver.recursion_variant.value} M={sc.M} "
          f"R={sc.rate} target_eps={sc.target_eps:g} rate_schedule={sc.rate_schedule.value}")
    print(f"{'m':>3} {'P_m':>14} {'P_m[dB]':>9} {'P_relay':>14} {'eps_m':>12} {'E_m':>12} {'dL/dP_m':>11}")
    for r in rows:
        print(f"{r['round']:>3} {r['P_source']:>14.6g} {r['P_source_dB']:>9.3f} {r['P_relay']:>14.6g} "
              f"{r['eps_round']:>12.6g} {r['E_cumulative']:>12.6g} {r['kkt_residual']:>11.3g}")
    print(f"E_M={bd.total:.12g}  P_avg={bd.p_avg:.8g} ({db(bd.p_avg):.3f} dB)  "
          f"lambda={kkt.lam:.8g}  max|dL/dP|={kkt.max_stationarity:.3g}")
    if not bd.valid:
        print(f"warning: closed-form outage >= 1 in rounds {list(bd.flagged_rounds)}; "
              "outside the high-SNR validity region")
    out = _out_path(args, run)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SOLVE_COLUMNS + ["warning"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "warning": "validity" if r["round"] in bd.flagged_rounds else ""})
    return EXIT_OK


def read_schedule(path) -> PowerSchedule:
    """Read the ``P_source`` column of a CSV written by ``solve``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["round"]))
        return PowerSchedule(tuple(float(r["P_source"]) for r in rows))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"--schedule {path}: {exc}") from exc


def _sweep_row(job):
    eps, method, variant, M, eta, run = job
    sc = Scenario(M=M, rate=run.scenario.rate, eta=(eta,), target_eps=eps,
                  rate_schedule=run.scenario.rate_schedule)
    row = {"eps": eps, "method": method, "variant": variant.value if method == "opa" else "none",
           "M": M, "eta": eta}
    try:
        sched, kkt = compute_schedule(method, sc, run, variant)
    except SolverError as exc:
        row["error"] = str(exc)
        return row
    bd = cumulative_outage(sched, sc, run.stats)
    row.update({f"P_{m}": p for m, p in enumerate(sched.p, start=1)})
    row.update(P_avg=bd.p_avg, E_M=bd.total, kkt_max_residual=kkt.max_stationarity,
               error="" if bd.valid else f"validity: rounds {list(bd.flagged_rounds)}")
    return row


def sweep_rows(run: RunConfig, eps_grid, methods, variants, m_values, eta_values):
    jobs = []
    for M in m_values:
        for eta in eta_values:
            for eps in eps_grid:
                for method in methods:
                    for variant in (variants if method == "opa" else variants[:1]):
                        jobs.append((eps, method, variant, M, eta, run))
    # map() keeps grid order whatever the completion order
    with ThreadPoolExecutor(max_workers=run.sim.workers) as pool:
        return list(pool.map(_sweep_row, jobs))


def cmd_sweep(args) -> int:
    run = _load(args)
    eps_grid = parse_eps_grid(args.eps_grid)
    methods = args.method or ["opa", "epa"]
    variants = [RecursionVariant(v) for v in (args.variants or ["kkt"])]
    m_values = args.M or [run.scenario.M]
    eta_values = args.eta or [run.scenario.eta[0]]
    if any(e <= 0 for e in eta_values) or any(m < 1 for m in m_values):
        raise ConfigError("--eta must be positive and --M at least 1")
    rows = sweep_rows(run, eps_grid, methods, variants, m_values, eta_values)
    out = _out_path(args, run)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=sweep_columns(max(m_values)), restval="")
        w.writeheader()
        w.writerows(rows)
    n_err = sum(bool(r.get("error")) for r in rows)
    print(f"wrote {len(rows)} rows to {out} ({n_err} with errors or warnings)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = _load(args)
    sc = run.scenario
    try:
        sched, _ = compute_schedule(args.method, sc, run, run.solver.recursion_variant)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    bd = cumulative_outage(sched, sc, run.stats)
    res = simulate_protocol(sched, sc, run.stats, run.sim)
    print(f"schedule P = {', '.join(f'{p:.6g}' for p in sched.p)}")
    print(f"trials={res.trials} failures={res.failures} seed={run.sim.seed} workers={run.sim.workers}")
    print(f"E_M empirical={res.eps_hat:.6g} [{res.ci_low:.6g}, {res.ci_high:.6g}]  closed form={bd.total:.6g}")
    print(f"P_avg empirical={res.avg_power_hat:.8g}  closed form={bd.p_avg:.8g}")
    print("delivered in round: " + " ".join(f"{m + 1}:{h}" for m, h in enumerate(res.attempts_histogram[:-1]))
          + f"  failed:{res.attempts_histogram[-1]}")
    out = _out_path(args, run)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trials", "failures", "eps_hat", "ci_low", "ci_high", "E_M_closed_form",
                    "avg_power_hat", "P_avg_closed_form"])
        w.writerow([res.trials, res.failures, res.eps_hat, res.ci_low, res.ci_high, bd.total,
                    res.avg_power_hat, bd.p_avg])
    return EXIT_OK


def cmd_validate(args) -> int:
    run = _load(args)
    schedule = read_schedule(args.schedule) if args.schedule else None
    if schedule is not None and len(schedule) != run.scenario.M:
        raise ConfigError(f"--schedule has {len(schedule)} rounds, scenario.M is {run.scenario.M}")
    report = run_validation(run.scenario, run.stats, run.solver, run.sim, schedule=schedule,
                            monte_carlo=not args.no_monte_carlo, grid=not args.no_grid,
                            min_failures=args.min_failures)
    for line in report.summary_lines():
        print(line)
    out = Path(args.out) if args.out else Path(run.output_path).with_suffix(".json")
    out.write_text(json.dumps(report.to_dict(), indent=2, default=float), encoding="utf-8")
    print(f"report written to {out}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afarq", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--out", help="output path (defaults to output_path from the config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("solve", help="per-round powers for one scenario")
    common(p)
    p.add_argument("--method", choices=["opa", "epa"], default="opa")
    p.add_argument("--variant", choices=["kkt", "paper"])
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="powers over a grid of outage targets")
    common(p)
    p.add_argument("--eps-grid", default="1e-1:1e-9:1", help="start:stop:points-per-decade")
    p.add_argument("--method", choices=["opa", "epa"], action="append")
    p.add_argument("--variant", dest="variants", choices=["kkt", "paper"], action="append")
    p.add_argument("--M", type=int, nargs="+", help="override scenario.M (several allowed)")
    p.add_argument("--eta", type=float, nargs="+", help="override scenario.eta (several allowed)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo run of the ARQ protocol")
    common(p)
    p.add_argument("--method", choices=["opa", "epa"], default="opa")
    p.add_argument("--variant", choices=["kkt", "paper"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="solver, oracle and Monte Carlo checks")
    common(p)
    p.add_argument("--variant", choices=["kkt", "paper"])
    p.add_argument("--schedule", type=Path, help="validate this solve CSV instead of the grid")
    p.add_argument("--no-grid", action="store_true", help="only check the configured scenario")
    p.add_argument("--no-monte-carlo", action="store_true")
    p.add_argument("--min-failures", type=int, default=100_000,
                   help="expected outages per point in the asymptotic check")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
