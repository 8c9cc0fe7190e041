"""Command-line front end: ``build-table``, ``simulate`` and ``sweep``.

Exit codes: 0 success, 2 config error, 3 non-threshold optimal policy,
4 policy table does not match the config, 5 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, policy_table, sim
from .config import ConfigError, SimConfig, format_config, load_config, preset, scaled
from .mdp import NonThresholdPolicy

log = logging.getLogger("tokenrelay")

EXIT_CONFIG = 2
EXIT_STRUCTURE = 3
EXIT_MISMATCH = 4
EXIT_INVARIANT = 5

SWEEP_PARAMS = {
    "token_supply": ("token_supply", int),
    "mobility": ("high_mobility_fraction", float),
    "budget": ("high_budget_fraction", float),
}


def resolve_config(args) -> SimConfig:
    cfg = preset(args.preset) if args.preset else SimConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if getattr(args, "scale", None):
        cfg = scaled(cfg, args.scale)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _load_tables(paths):
    try:
        return [policy_table.load(p) for p in paths or ()]
    except (OSError, policy_table.FormatError) as exc:
        raise sim.TableMismatch(f"cannot read policy table: {exc}") from exc


def cmd_build_table(args) -> int:
    cfg = resolve_config(args)
    p_max = cfg.high_p_max if args.budget == "high" else cfg.low_p_max
    table = policy_table.build_table(cfg.param_grid(p_max), cfg.solver_tol)
    policy_table.save(table, args.out)
    top = table.thresholds[..., 1:]
    print(f"wrote {args.out}: {table.n_entries} entries, p_max={p_max:g} J, "
          f"thresholds min={int(top.min())} max={int(top.max())}")
    return 0


def write_run(out: Path, cfg: SimConfig, report: metrics.MetricsReport, note: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    (out / "ues.csv").write_text(metrics.ue_csv(report), encoding="utf-8")
    (out / "summary.csv").write_text(metrics.summary_csv(report), encoding="utf-8")
    (out / "invariants.log").write_text(note, encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    tables = sim.resolve_tables(cfg, _load_tables(args.table))
    out = Path(args.out)
    try:
        report = sim.run(cfg, tables)
    except sim.InvariantViolation as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
        (out / "invariants.log").write_text(f"FAILED: {exc}\n", encoding="utf-8")
        raise
    note = (f"seed {cfg.seed}: token conservation, per-UE ledger bound, transaction gates "
            f"and gain >= 1 held for all {cfg.slots} slots\n")
    write_run(out, cfg, report, note)
    print(f"gain mean={report.mean('gain'):.6f} lambda mean={report.mean('lambda'):.4f} "
          f"negative utility fraction={report.negative_utility_fraction():.4f} "
          f"transactions={report.transactions}")
    return 0


def _sweep_point(job):
    cfg, tables = job
    report = sim.run(cfg, tables)
    return report.overall()


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    field, cast = SWEEP_PARAMS[args.param]
    values = [cast(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    supplied = _load_tables(args.table)
    jobs, keys = [], []
    for v in values:
        for s in seeds:
            cfg = replace(base, **{field: v}, seed=s)
            jobs.append((cfg, sim.resolve_tables(cfg, supplied)))
            keys.append((v, s))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(base), encoding="utf-8")
    cols = list(results[0]) if results else []
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["parameter", "value", "seed"] + cols)
        for (v, s), res in zip(keys, results):
            wr.writerow([args.param, metrics.fmt(v), s] + [metrics.fmt(res[c]) for c in cols])
    for v in values:
        g = [r["gain_mean"] for (vv, _), r in zip(keys, results) if vv == v]
        print(f"{args.param}={v}: gain mean over seeds={np.mean(g):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokenrelay", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--preset", help="named scenario preset applied before --config")

    b = sub.add_parser("build-table", help="solve the MDP over the grid and write a policy table")
    common(b)
    b.add_argument("--budget", choices=("high", "low"), default="high",
                   help="budget class whose p_max the table is built for")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_table)

    s = sub.add_parser("simulate", help="run one simulation and write CSV artifacts")
    common(s)
    s.add_argument("--table", action="append", help="policy table file (repeat per budget class)")
    s.add_argument("--seed", type=int)
    s.add_argument("--scale", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a parameter sweep over values and seeds")
    common(w)
    w.add_argument("--table", action="append")
    w.add_argument("--param", choices=sorted(SWEEP_PARAMS), required=True)
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--seeds", default="0")
    w.add_argument("--scale", type=float)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, NonThresholdPolicy):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_STRUCTURE
        if isinstance(exc, sim.TableMismatch):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except sim.InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
