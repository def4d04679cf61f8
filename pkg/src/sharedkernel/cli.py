"""Command-line entry point: ``sharedkernel <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .dictionary_fit import DictionaryFitConfig, choose_k_by_cv, fit_dictionary
from .model import ConvergenceError, DataError, GibbsConfig, generator
from .screening import permutation_null, screen
from .simulation import (ConsistencyStudyConfig, RateStudyConfig, RecoveryStudyConfig,
                         beta_density, consistency_study, default_consistency_dictionary,
                         rate_study, recovery_study, sample_dataset, simulate_screening_dataset,
                         simulate_spec)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _k_range(text):
    try:
        lo, hi = (int(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI, e.g. 2:6")
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError("need 1 <= LO <= HI")
    return lo, hi


def _p0(text):
    if text == "learned":
        return None
    if text.startswith("fixed="):
        try:
            v = float(text[len("fixed="):])
        except ValueError:
            raise argparse.ArgumentTypeError("fixed value must be a number")
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError("fixed P0 must lie in [0, 1]")
        return v
    raise argparse.ArgumentTypeError("expected 'learned' or 'fixed=V'")


def _int_list(text):
    try:
        return tuple(int(float(t)) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers")


def _beta_pair(text):
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected A,B")
    if a <= 0 or b <= 0:
        raise argparse.ArgumentTypeError("Beta parameters must be positive")
    return a, b


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedkernel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, iterations, burn_in):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        if iterations is not None:
            sp.add_argument("--iterations", type=int, default=iterations)
            sp.add_argument("--burn-in", type=int, default=burn_in)

    sp = sub.add_parser("fit-dictionary", help="stage one: learn the kernel dictionary")
    common(sp, 2000, 500)
    sp.add_argument("--input", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--k", type=int)
    g.add_argument("--k-range", type=_k_range, default=(2, 12))
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--n-sites", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=None, help="fix the concentration")

    sp = sub.add_parser("screen", help="stage two: per-site posterior of no difference")
    common(sp, 5000, 1000)
    sp.add_argument("--input", required=True)
    sp.add_argument("--dictionary", required=True)
    sp.add_argument("--p0", type=_p0, default=None, metavar="{learned|fixed=V}")
    sp.add_argument("--weight-draw", choices=("indicator", "convex"), default="indicator")

    sp = sub.add_parser("simulate", help="draw a synthetic dataset")
    common(sp, None, None)
    sp.add_argument("--dictionary", help="simulate a multi-site screening dataset from this dictionary")
    sp.add_argument("--sites", type=int, default=200)
    sp.add_argument("--subjects", type=int, default=None)
    sp.add_argument("--h0-fraction", type=float, default=0.8)

    sp = sub.add_parser("rate-study", help="Bayes-factor growth under H0 and H1")
    common(sp, 300, 150)
    sp.add_argument("--replicates", type=int, default=200)
    sp.add_argument("--mode", choices=("estimated", "known"), default="estimated")
    sp.add_argument("--n-range", type=_int_list, default=(100, 100_000))
    sp.add_argument("--k-range", type=_k_range, default=(2, 5))

    sp = sub.add_parser("recovery-study", help="total-variation recovery under three fits")
    common(sp, 300, 150)
    sp.add_argument("--replicates", type=int, default=50)
    sp.add_argument("--n-grid", type=_int_list, default=(1_000, 10_000))

    sp = sub.add_parser("consistency-study", help="post_h0 versus N for a Beta density pair")
    common(sp, 400, 200)
    sp.add_argument("--replicates", type=int, default=10)
    sp.add_argument("--n-grid", type=_int_list, default=(100, 1_000, 10_000))
    sp.add_argument("--f0", type=_beta_pair, default=(2.0, 5.0), metavar="A,B")
    sp.add_argument("--f1", type=_beta_pair, default=(2.0, 5.0), metavar="A,B")
    sp.add_argument("--dictionary", help="fixed dictionary (default: four evenly spread kernels)")
    sp.add_argument("--p0", type=_p0, default=0.5, metavar="fixed=V")

    sp = sub.add_parser("permute", help="screen under random relabellings of the groups")
    common(sp, 5000, 1000)
    sp.add_argument("--input", required=True)
    sp.add_argument("--dictionary", required=True)
    sp.add_argument("--n-perm", type=int, default=10)
    sp.add_argument("--p0", type=_p0, default=None, metavar="{learned|fixed=V}")
    return p


def cmd_fit_dictionary(args) -> None:
    ds = io.ingest_csv(args.input)
    out = _out_dir(args)
    cfg = DictionaryFitConfig(iterations=args.iterations, burn_in=args.burn_in, seed=args.seed,
                              n_sites=args.n_sites, alpha=args.alpha, threads=args.threads)
    echo = {**cfg.echo(), "k": args.k, "k_range": None if args.k else list(args.k_range),
            "folds": None if args.k else args.folds, "input": Path(args.input).name}
    meta = io.metadata("fit-dictionary", echo)
    if args.k is not None:
        K = args.k
    else:
        lo, hi = args.k_range
        cv = choose_k_by_cv(ds, range(lo, hi + 1), args.folds, config=cfg)
        K = cv.selected_k
        rows = [{"K": k, "heldout_loglik": v, "selected": k == K} for k, v in cv.cv_table.items()]
        io.write_table_csv(out / "cv_table.csv", rows, ["K", "heldout_loglik", "selected"], meta)
    report = fit_dictionary(ds, K, config=cfg)
    io.save_dictionary(out / "dictionary.json", report.dictionary, {"run": meta})


def _gibbs_config(args, p0):
    return GibbsConfig(iterations=args.iterations, burn_in=args.burn_in, seed=args.seed,
                       p0_fixed=p0, threads=args.threads,
                       weight_draw=getattr(args, "weight_draw", "indicator"))


def _load_matching(args):
    ds = io.ingest_csv(args.input)
    dictionary = io.load_dictionary(args.dictionary)
    return ds, dictionary


def cmd_screen(args) -> None:
    ds, dictionary = _load_matching(args)
    out = _out_dir(args)
    cfg = _gibbs_config(args, args.p0)
    echo = {**cfg.echo(), "input": Path(args.input).name, "dictionary_sha256": dictionary.digest()}
    meta = io.metadata("screen", echo)
    res = screen(ds, dictionary, cfg)
    K = dictionary.K
    cols = ["site_id", "post_h0", "log_odds"] + [f"w0_{k + 1}" for k in range(K)] + \
        [f"w1_{k + 1}" for k in range(K)]
    rows = []
    for m, site in enumerate(ds.site_ids):
        row = {"site_id": site, "post_h0": float(res.post_h0[m]), "log_odds": float(res.log_odds[m])}
        row.update({f"w0_{k + 1}": float(res.mean_weights0[m, k]) for k in range(K)})
        row.update({f"w1_{k + 1}": float(res.mean_weights1[m, k]) for k in range(K)})
        rows.append(row)
    io.write_table_csv(out / "results.csv", rows, cols, meta)
    summary = {"metadata": meta, "n_sites": ds.n_sites, "n_subjects": ds.n_subjects,
               "p0_posterior_mean": res.p0_mean,
               "p0_posterior_sd": float(np.std(res.p0_draws)),
               "n_post_h0_below_0.05": int(np.sum(res.post_h0 < 0.05)),
               "n_post_h0_above_0.95": int(np.sum(res.post_h0 > 0.95))}
    io.write_json(out / "summary.json", summary)


def cmd_simulate(args) -> None:
    out = _out_dir(args)
    rng = generator(args.seed, 40)
    if args.dictionary:
        dictionary = io.load_dictionary(args.dictionary)
        N = args.subjects or 400
        echo = {"seed": args.seed, "sites": args.sites, "subjects": N,
                "h0_fraction": args.h0_fraction, "dictionary_sha256": dictionary.digest()}
        ds, is_h0 = simulate_screening_dataset(args.sites, N, dictionary, args.h0_fraction, rng)
        meta = io.metadata("simulate", echo)
        io.write_table_csv(out / "truth.csv", [{"site_id": s, "h0": bool(h)} for s, h in
                                               zip(ds.site_ids, is_h0)], ["site_id", "h0"], meta)
    else:
        spec = simulate_spec(rng, n_total=args.subjects)
        echo = {"seed": args.seed, "subjects": args.subjects}
        meta = io.metadata("simulate", echo)
        ds = sample_dataset(spec)
        io.write_json(out / "spec.json", {"metadata": meta, "spec": spec.to_dict()})
    io.write_dataset_csv(out / "dataset.csv", ds, meta)


def cmd_rate_study(args) -> None:
    out = _out_dir(args)
    cfg = RateStudyConfig(replicates=args.replicates, seed=args.seed, n_range=tuple(args.n_range),
                          k_range=tuple(args.k_range), mode=args.mode,
                          iterations=args.iterations, burn_in=args.burn_in)
    rows = rate_study(cfg, threads=args.threads)
    io.write_table_csv(out / "rate_study.csv", rows,
                       ["replicate", "regime", "N", "K", "lambda0", "log_bf", "normalized_bf"],
                       io.metadata("rate-study", cfg.echo()))


def cmd_recovery_study(args) -> None:
    out = _out_dir(args)
    cfg = RecoveryStudyConfig(replicates=args.replicates, seed=args.seed, n_grid=tuple(args.n_grid),
                              iterations=args.iterations, burn_in=args.burn_in)
    rows = recovery_study(cfg, threads=args.threads)
    io.write_table_csv(out / "recovery_study.csv", rows,
                       ["replicate", "N", "H0", "K", "tv_two_group", "tv_separate", "tv_common"],
                       io.metadata("recovery-study", cfg.echo()))


def cmd_consistency_study(args) -> None:
    out = _out_dir(args)
    if args.p0 is None:
        raise UsageError("consistency-study needs a fixed P0 (--p0 fixed=V)")
    dictionary = io.load_dictionary(args.dictionary) if args.dictionary else default_consistency_dictionary()
    cfg = ConsistencyStudyConfig(replicates=args.replicates, seed=args.seed,
                                 n_grid=tuple(args.n_grid), iterations=args.iterations,
                                 burn_in=args.burn_in, p0=args.p0)
    f0 = beta_density(*args.f0)
    f1 = f0 if tuple(args.f1) == tuple(args.f0) else beta_density(*args.f1)
    echo = {**cfg.echo(), "f0": list(args.f0), "f1": list(args.f1),
            "dictionary_sha256": dictionary.digest()}
    res = consistency_study(f0, f1, dictionary, cfg, threads=args.threads)
    io.write_table_csv(out / "consistency_study.csv", res.rows,
                       ["N", "replicate", "post_h0", "log_odds", "degenerate"],
                       io.metadata("consistency-study", echo))


def cmd_permute(args) -> None:
    if args.n_perm < 1:
        raise UsageError("--n-perm must be at least 1")
    ds, dictionary = _load_matching(args)
    out = _out_dir(args)
    cfg = _gibbs_config(args, args.p0)
    echo = {**cfg.echo(), "n_perm": args.n_perm, "input": Path(args.input).name,
            "dictionary_sha256": dictionary.digest()}
    perms, post = permutation_null(ds, dictionary, cfg, args.n_perm, generator(args.seed, 50))
    rows = [{"permutation": i + 1, **{s: float(post[i, m]) for m, s in enumerate(ds.site_ids)}}
            for i in range(args.n_perm)]
    io.write_table_csv(out / "permutations.csv", rows, ["permutation", *ds.site_ids],
                       io.metadata("permute", echo))


COMMANDS = {
    "fit-dictionary": cmd_fit_dictionary, "screen": cmd_screen, "simulate": cmd_simulate,
    "rate-study": cmd_rate_study, "recovery-study": cmd_recovery_study,
    "consistency-study": cmd_consistency_study, "permute": cmd_permute,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
