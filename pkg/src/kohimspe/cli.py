"""Command-line entry point: ``kohimspe {design,simulate,acquire,experiment,summarize}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .acquisition import OptimizerSettings, acquire_koh_imspe, lhs
from .harness import ExperimentConfig, run_to_file, summarize, write_summary
from .koh import FieldData, KohSettings, SimData, fit_koh
from .problems.sx import PAPER_STEP, T_MAX, simulate_csv


def _read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=skip)


def cmd_design(args) -> int:
    X = lhs(args.n, args.dims, args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"z{i + 1}" for i in range(args.dims)])
        w.writerows([[repr(float(v)) for v in row] for row in X])
    return 0


def cmd_simulate(args) -> int:
    if args.problem != "sx":
        raise SystemExit("batch simulation is provided for the sx problem only")
    n = simulate_csv(args.inp, args.out, args.step, args.tmax)
    logging.info("simulated %d rows", n)
    return 0


def cmd_acquire(args) -> int:
    """Fit KOH to field (x..., y) and simulator (x..., u..., y) CSVs and
    propose one simulator run."""
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    F = _read_matrix(args.field)
    S = _read_matrix(args.sim)
    p = F.shape[1] - 1
    field = FieldData(F[:, :p], F[:, p])
    sim = SimData(S[:, :p], S[:, p:-1], S[:, -1])
    settings = KohSettings(starts=cfg.fit_starts, warm_start=cfg.warm_start)
    fit = fit_koh(field, sim, cfg.priors.build(), settings, seed=cfg.seed)
    res = acquire_koh_imspe(fit, seed=cfg.seed, settings=OptimizerSettings(
        n_candidates=cfg.n_candidates, n_starts=cfg.n_starts))
    out = {
        "point": [float(v) for v in res.point],
        "criterion_value": res.criterion_value,
        "u_hat": [float(v) for v in fit.u_hat.u_hat],
        "starts_tried": res.starts_tried,
        "fallback": res.fallback,
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    out = args.out or cfg.output
    if out is None:
        raise SystemExit("no output path: pass --out or set 'output' in the config")
    n = run_to_file(cfg, out, resume=not args.fresh)
    logging.info("wrote %d records to %s", n, out)
    return 0


def cmd_summarize(args) -> int:
    write_summary(summarize(args.inp), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kohimspe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="write a random Latin hypercube")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run the SX simulator on a CSV of coded inputs")
    p.add_argument("--problem", default="sx")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=float, default=PAPER_STEP)
    p.add_argument("--tmax", type=float, default=T_MAX)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("acquire", help="propose one simulator run by KOH-IMSPE")
    p.add_argument("--field", required=True)
    p.add_argument("--sim", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_acquire)

    p = sub.add_parser("experiment", help="run a Monte-Carlo campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--fresh", action="store_true", help="ignore existing output, start over")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("summarize", help="summarise a campaign CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
