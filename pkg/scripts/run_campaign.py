"""Run a campaign from a JSON config, then write its summary next to it.

    python3 scripts/run_campaign.py configs/sinusoid_desk.json [--reps N] [--out PATH]
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

from kohimspe.harness import ExperimentConfig, run_to_file, summarize, write_summary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--reps", type=int, help="override mc_reps")
    ap.add_argument("--out", help="override the output path")
    ap.add_argument("--fresh", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.from_json(args.config)
    if args.reps:
        cfg = dataclasses.replace(cfg, mc_reps=args.reps)
    out = Path(args.out or cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    n = run_to_file(cfg, out, resume=not args.fresh)
    logging.info("%d records in %.0f s", n, time.perf_counter() - t0)

    rows = summarize(out)
    summary = out.with_name(out.stem + "_summary.csv")
    write_summary(rows, summary)
    final = [r for r in rows if r["n_m"] == cfg.n_m_final]
    for r in final:
        print(f"{r['strategy']:>20s}  N_M={r['n_m']}  mean RMSE {r['mean_rmse']:.4f}  "
              f"[{r['q05_rmse']:.4f}, {r['q95_rmse']:.4f}]  failed={r['failed']}")


if __name__ == "__main__":
    main()
