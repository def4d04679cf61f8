"""Bayes-factor growth under H0 and H1, with OLS slopes of the normalised values."""
import argparse
from pathlib import Path

import numpy as np

from sharedkernel.asymptotics import ols_slope
from sharedkernel.io import metadata, write_table_csv
from sharedkernel.simulation import RateStudyConfig, rate_study

COLUMNS = ["replicate", "N", "K", "regime", "lambda0", "log_bf", "normalized_bf"]


def slopes(rows):
    h0 = [r for r in rows if r["regime"] == "H0"]
    h1 = [r for r in rows if r["regime"] == "H1"]
    s0 = ols_slope(np.log([r["N"] for r in h0]), [r["normalized_bf"] for r in h0]) if len(h0) > 1 else np.nan
    s1 = ols_slope([r["N"] for r in h1], [r["normalized_bf"] for r in h1]) if len(h1) > 1 else np.nan
    return s0, s1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicates", type=int, default=60)
    ap.add_argument("--mode", choices=("estimated", "known"), default="estimated")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/rate_study.csv"))
    args = ap.parse_args()

    cfg = RateStudyConfig(replicates=args.replicates, mode=args.mode, seed=args.seed)
    rows = rate_study(cfg, threads=args.threads)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(args.out, rows, COLUMNS, metadata("scripts/run_rate_study", cfg.echo()))
    s0, s1 = slopes(rows)
    print(f"H0 slope on log N: {s0:.3f}   H1 slope on N: {s1:.3f}   -> {args.out}")


if __name__ == "__main__":
    main()
