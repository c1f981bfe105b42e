"""Command-line front end.

Subcommands cover weight computation, procedure execution on p-value files,
the canned simulation studies, the count-data pipeline, and the finite-FDR
bound calculators.  Every invocation writes a manifest alongside its
outputs so a result can be re-derived from its manifest alone.

Exit codes: 0 success, 1 input error, 2 model-precondition failure
(no-solution), 3 success with a model warning attached.
"""

import argparse
import csv
import datetime
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .counts import CountDataset, analyze, generate_synthetic_counts
from .power import TabulatedPowerModel
from .procedures import alpha_star, fdr_upper_bound, run_procedure
from .simulate import (
    SimConfig,
    run_simulation,
    simulation_preset,
    substream,
    write_summary_json,
)
from .weights import (
    BracketExpansionError,
    NoSolutionError,
    PriorSpec,
    WeightProfile,
    asymptotically_optimal_weights,
    optimal_fixed_t_weights,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_SOLUTION = 2
EXIT_WARNING = 3


class InputError(Exception):
    """Bad or inconsistent input files/flags (exit code 1)."""


@dataclass
class RunManifest:
    """Provenance record written next to every output."""

    subcommand: str
    flags: dict
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    seed: int | None = None
    version: str = __version__
    timestamp: str = ""

    def write(self, outdir):
        self.timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = os.path.join(outdir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=str)
            fh.write("\n")
        return path


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _manifest(args, inputs, outputs, seed=None):
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    m = RunManifest(subcommand=args.subcommand, flags=flags, inputs=inputs,
                    outputs=outputs, seed=seed)
    m.write(args.out)


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("WAMDF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"WAMDF_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def _load_model(args):
    if getattr(args, "power_table", None):
        return TabulatedPowerModel.from_csv(args.power_table)
    return None


# ---------------------------------------------------------------- weights

def cmd_weights(args):
    if (args.alpha is None) == (args.t is None):
        raise InputError("exactly one of --alpha / --t is required")
    prior = PriorSpec.from_csv(args.prior)
    model = _load_model(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.alpha is not None:
            profile = asymptotically_optimal_weights(prior, args.alpha, model)
        else:
            profile = optimal_fixed_t_weights(prior, args.t, model)
    outdir = _outdir(args)
    out = os.path.join(outdir, "weights.json")
    profile.to_json(out)
    tsv = os.path.join(outdir, "weights.tsv")
    with open(tsv, "w") as fh:
        fh.write("index\tp\tgamma\tweight\tthreshold\n")
        for i in range(prior.M):
            fh.write(f"{i}\t{prior.p[i]:.10g}\t{prior.gamma[i]:.10g}"
                     f"\t{profile.weights[i]:.10g}\t{profile.thresholds[i]:.10g}\n")
    _manifest(args, [args.prior], [out, tsv])
    if profile.warning:
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return EXIT_WARNING
    return EXIT_OK


# ---------------------------------------------------------------- run

def _read_pvalue_csv(path):
    """CSV with header ``p`` or ``p,weight``; returns (p, weights-or-None)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [f.strip() for f in reader.fieldnames or []]
        if names not in (["p"], ["p", "weight"]):
            raise InputError(f"{path}: expected header 'p' or 'p,weight'")
        p, w = [], []
        for row in reader:
            p.append(float(row["p"]))
            if "weight" in row and row["weight"] not in (None, ""):
                w.append(float(row["weight"]))
    if not p:
        raise InputError(f"{path}: no p-values")
    if w and len(w) != len(p):
        raise InputError(f"{path}: weight column is incomplete")
    return np.array(p), (np.array(w) if w else None)


def cmd_run(args):
    pvalues, inline_w = _read_pvalue_csv(args.pvalues)
    weights = None
    inputs = [args.pvalues]
    if args.weights:
        inputs.append(args.weights)
        with open(args.weights) as fh:
            profile = WeightProfile.from_dict(json.load(fh))
        weights = profile.weights
        if args.lam is None and args.variant in ("UA", "WA"):
            args.lam = profile.t_bar
        if args.u is None and args.variant in ("WU", "WA"):
            args.u = profile.u
    elif not args.unit:
        weights = inline_w
    if args.variant in ("WU", "WA") and weights is None:
        raise InputError(f"variant {args.variant} needs --weights, a weight column, or --unit")
    if weights is not None and weights.size != pvalues.size:
        raise InputError("weights and p-values differ in length")
    try:
        report = run_procedure(args.variant, pvalues, weights=weights, alpha=args.alpha,
                               lam=args.lam, u=args.u, finite_fdr=args.finite_fdr)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    outdir = _outdir(args)
    out_json = os.path.join(outdir, "report.json")
    out_tsv = os.path.join(outdir, "report.tsv")
    report.to_json(out_json)
    report.to_tsv(out_tsv)
    _manifest(args, inputs, [out_json, out_tsv])
    print(f"{args.variant}: rejected {report.n_rejected} of {pvalues.size} "
          f"(t_hat={report.t_hat:.6g}, m0_hat={report.m0_hat:.6g})")
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def _write_table_tsv(summaries, path):
    """Grid layout: one row per variant, CDP (FDP) columns per a value."""
    a_values = [s.config.gamma_a for s in summaries]
    variants = summaries[0].config.variants
    with open(path, "w") as fh:
        header = ["variant"]
        for a in a_values:
            header += [f"cdp_a{a:g}", f"fdp_a{a:g}", f"cdp_se_a{a:g}", f"fdp_se_a{a:g}"]
        fh.write("\t".join(header) + "\n")
        for v in variants:
            row = [v]
            for s in summaries:
                se_c, se_f = s.se(v, "cdp"), s.se(v, "fdp")
                row += [f"{s.mean(v, 'cdp'):.4f}", f"{s.mean(v, 'fdp'):.4f}",
                        "" if se_c is None else f"{se_c:.4f}",
                        "" if se_f is None else f"{se_f:.4f}"]
            fh.write("\t".join(row) + "\n")


def _write_long_tsv(summaries, path):
    with open(path, "w") as fh:
        fh.write("variant\ta\tmetric\tvalue\tse\n")
        for s in summaries:
            for v in s.config.variants:
                for metric in ("cdp", "fdp"):
                    se = s.se(v, metric)
                    fh.write(f"{v}\t{s.config.gamma_a:g}\t{metric}"
                             f"\t{s.mean(v, metric):.6f}"
                             f"\t{'' if se is None else f'{se:.6f}'}\n")


def cmd_simulate(args):
    inputs = []
    if args.config:
        config = SimConfig.from_file(args.config)
        inputs.append(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        configs = [config]
    else:
        if args.preset is None:
            raise InputError("either --config or --preset is required")
        if args.preset not in (1, 2, 3, 4):
            raise InputError(f"invalid preset {args.preset}; expected 1-4")
        if args.seed is None:
            raise InputError("--seed is required (no silent nondeterminism)")
        a_values = args.a if args.a else [1.0, 3.0, 5.0]
        configs = [
            simulation_preset(args.preset, a=a, M=args.M, n_reps=args.K,
                              seed=args.seed, alpha=args.alpha)
            for a in a_values
        ]
    threads = _threads(args)
    summaries = [run_simulation(c, threads=threads) for c in configs]
    outdir = _outdir(args)
    outputs = []
    for s in summaries:
        out = os.path.join(outdir, f"summary_a{s.config.gamma_a:g}.json")
        write_summary_json(s, out)
        outputs.append(out)
    table = os.path.join(outdir, "table.tsv")
    long_form = os.path.join(outdir, "long.tsv")
    _write_table_tsv(summaries, table)
    _write_long_tsv(summaries, long_form)
    outputs += [table, long_form]
    _manifest(args, inputs, outputs, seed=configs[0].seed)
    for s in summaries:
        skipped = f", skipped {s.n_skipped}" if s.n_skipped else ""
        print(f"a={s.config.gamma_a:g}: "
              + "  ".join(f"{v} CDP={s.mean(v, 'cdp'):.3f} FDP={s.mean(v, 'fdp'):.3f}"
                          for v in s.config.variants)
              + skipped)
    return EXIT_OK


# ---------------------------------------------------------------- analyze

def _parse_x(args):
    if args.x:
        try:
            return np.array([float(v) for v in args.x.split(",")])
        except ValueError:
            raise InputError(f"--x must be comma-separated numbers, got {args.x!r}")
    if args.x_file:
        try:
            return np.loadtxt(args.x_file, ndmin=1)
        except Exception as exc:
            raise InputError(f"could not read covariate file {args.x_file}: {exc}")
    raise InputError("a covariate is required: --x or --x-file")


def _write_analysis(result, outdir):
    out_tsv = os.path.join(outdir, "features.tsv")
    t = result.table
    with open(out_tsv, "w") as fh:
        fh.write("feature\tn\tz\tp\tgamma\tweight\tq\trejected_wa\trejected_ua\n")
        for j, i in enumerate(result.valid_indices):
            fh.write(f"{i}\t{t['n'][j]:.10g}\t{t['z'][j]:.10g}\t{t['p'][j]:.10g}"
                     f"\t{t['gamma'][j]:.10g}\t{t['weight'][j]:.10g}\t{t['q'][j]:.10g}"
                     f"\t{int(t['rejected_wa'][j])}\t{int(t['rejected_ua'][j])}\n")
    out_power = os.path.join(outdir, "weight_power.tsv")
    with open(out_power, "w") as fh:
        fh.write("feature\tgamma\tweight\tpower_unweighted\tpower_weighted\n")
        for j, i in enumerate(result.valid_indices):
            fh.write(f"{i}\t{t['gamma'][j]:.10g}\t{t['weight'][j]:.10g}"
                     f"\t{t['power_unweighted'][j]:.10g}\t{t['power_weighted'][j]:.10g}\n")
    out_json = os.path.join(outdir, "analysis.json")
    with open(out_json, "w") as fh:
        json.dump(
            {
                "n_features": int(result.valid_indices.size + result.excluded_indices.size),
                "n_tested": int(result.valid_indices.size),
                "excluded_features": result.excluded_indices.tolist(),
                "k_info": result.calibration.k_info,
                "achieved_avg_power": result.calibration.achieved_power,
                "lambda": result.calibration.profile.t_bar,
                "u": result.calibration.profile.u,
                "rejected_wa": result.n_rejected_wa,
                "rejected_ua": result.n_rejected_ua,
                "wa": result.wa.to_dict(),
                "ua": result.ua.to_dict(),
            },
            fh, indent=2,
        )
        fh.write("\n")
    return [out_tsv, out_power, out_json]


def cmd_analyze(args):
    x = _parse_x(args)
    inputs = []
    if args.synthetic:
        if args.seed is None:
            raise InputError("--seed is required with --synthetic")
        rng = substream(args.seed, 0)
        dataset, theta = generate_synthetic_counts(
            args.synthetic, x, rng, beta=args.beta,
            positive_fraction=args.positive_fraction,
        )
    else:
        if not args.counts:
            raise InputError("either a counts file or --synthetic is required")
        try:
            dataset = CountDataset.from_csv(args.counts, x)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        theta = None
        inputs.append(args.counts)
    p_prior = args.p_prior
    if args.p_prior_file:
        inputs.append(args.p_prior_file)
        try:
            p_prior = np.loadtxt(args.p_prior_file, ndmin=1)
        except Exception as exc:
            raise InputError(f"could not read prior file {args.p_prior_file}: {exc}")
    try:
        result = analyze(dataset, alpha=args.alpha, p_prior=p_prior,
                         target_avg_power=args.target_power)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    outdir = _outdir(args)
    outputs = _write_analysis(result, outdir)
    if theta is not None:
        data_out = os.path.join(outdir, "synthetic_counts.csv")
        with open(data_out, "w") as fh:
            fh.write(",".join(f"g{i}" for i in range(dataset.n_groups)) + ",planted\n")
            for i in range(dataset.n_features):
                fh.write(",".join(str(c) for c in dataset.counts[i]) + f",{int(theta[i])}\n")
        outputs.append(data_out)
    _manifest(args, inputs, outputs, seed=args.seed)
    print(f"WA rejected {result.n_rejected_wa}, UA rejected {result.n_rejected_ua} "
          f"of {result.valid_indices.size} tested features "
          f"({result.excluded_indices.size} excluded)")
    return EXIT_OK


# ---------------------------------------------------------------- bounds

def cmd_bounds(args):
    out = {"alpha": args.alpha, "lambda": args.lam}
    if args.w_max is not None:
        out["alpha_star"] = alpha_star(args.alpha, args.lam, args.w_max)
    if args.w0_bar is not None:
        if args.m0 is None:
            raise InputError("--m0 is required with --w0-bar")
        out["fdr_upper_bound"] = fdr_upper_bound(args.alpha, args.lam, args.w0_bar, args.m0)
    if len(out) == 2:
        raise InputError("nothing to compute: give --w-max and/or --w0-bar")
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="wamdf",
        description="Weighted adaptive multiple decision functions for FDR control.",
    )
    parser.add_argument("--version", action="version", version=f"wamdf {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    w = sub.add_parser("weights", help="compute optimal weights from a prior file")
    w.add_argument("prior", help="CSV with header p,gamma")
    w.add_argument("--alpha", type=float, help="target FDP level (pre-data weights)")
    w.add_argument("--t", type=float, help="fixed mean threshold (fixed-t weights)")
    w.add_argument("--power-table", help="CSV t,power for a tabulated power curve")
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_weights)

    r = sub.add_parser("run", help="run a procedure on a p-value file")
    r.add_argument("pvalues", help="CSV with header p or p,weight")
    r.add_argument("--weights", help="weights JSON produced by the weights subcommand")
    r.add_argument("--unit", action="store_true", help="force unit weights")
    r.add_argument("--variant", default="WA", choices=["UU", "WU", "UA", "WA"])
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--lambda", dest="lam", type=float, help="census level for adaptive variants")
    r.add_argument("--u", type=float, help="upper threshold bound (default 1/max weight)")
    r.add_argument("--finite-fdr", action="store_true",
                   help="finite-sample FDR mode: u = lambda and level alpha_star")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="run a canned Monte Carlo study")
    s.add_argument("--preset", type=int, help="study 1-4")
    s.add_argument("--a", type=float, action="append",
                   help="effect-size upper bound; repeatable (default 1, 3 and 5)")
    s.add_argument("--M", type=int, default=1000, help="hypotheses per replication")
    s.add_argument("--K", type=int, default=1000, help="replications")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    s.add_argument("--config", help="key = value config file (overrides preset flags)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="count-data association pipeline")
    a.add_argument("counts", nargs="?", help="CSV of count columns, one row per feature")
    a.add_argument("--x", help="comma-separated group covariate")
    a.add_argument("--x-file", help="covariate vector file (one value per line)")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--p-prior", type=float, default=0.5)
    a.add_argument("--p-prior-file",
                   help="per-feature priors, one value per dataset row")
    a.add_argument("--target-power", type=float, default=0.5)
    a.add_argument("--synthetic", type=int, metavar="M",
                   help="generate M synthetic features instead of reading a file")
    a.add_argument("--beta", type=float, default=0.35, help="synthetic trend strength")
    a.add_argument("--positive-fraction", type=float, default=0.5)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bounds", help="finite-FDR level adjustment and bound")
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--lambda", dest="lam", type=float, required=True)
    b.add_argument("--w-max", type=float, help="maximum weight (for alpha_star)")
    b.add_argument("--w0-bar", type=float, help="mean true-null weight (for the FDR bound)")
    b.add_argument("--m0", type=int, help="number of true nulls (for the FDR bound)")
    b.set_defaults(func=cmd_bounds)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoSolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(
            "hint: the pre-data FDP equation needs alpha <= 1 - max(p); "
            "a prior placing that much mass on false nulls cannot be "
            "weighted at this level.",
            file=sys.stderr,
        )
        return EXIT_NO_SOLUTION
    except BracketExpansionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
