"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .dp import DpConfig
from .engine import EstimationMode, RunConfig, cross_validate_priors, run_screen
from .errors import ScreenError, UsageError
from .frequentist import (
    bh_adjust,
    fisher_pvalues,
    hochberg_adjust,
    two_step_hierarchical,
)
from .io import (
    default_outdir,
    read_dataset_tsv,
    write_dataset_tsv,
    write_manifest,
    write_screen_outputs,
    write_table,
)
from .models import BinaryCounts, KernelDictionary, fit_kernel_dictionary
from .simulate import (
    ALL_METHODS,
    ScenarioConfig,
    generate_kernel_scenario,
    generate_scenario,
    permute_class_labels,
    permute_gene_labels,
    run_comparison,
)

COMMANDS = ("screen", "fisher", "simulate", "compare", "permute", "crossval", "fit-kernels")


class UnknownFlag(UsageError):
    pass


class MissingRequired(UsageError):
    pass


class ConflictingFlags(UsageError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            raise UnknownFlag(message)
        if "required" in message:
            raise MissingRequired(message)
        if "not allowed with" in message:
            raise ConflictingFlags(message)
        raise UsageError(message)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _add_run_flags(p, sweeps=1000, burnin=200, chains=2):
    p.add_argument("--mode", choices=[m.value for m in EstimationMode], default="hierarchical")
    p.add_argument("--sweeps", type=_positive_int, default=sweeps)
    p.add_argument("--burnin", type=int, default=burnin)
    p.add_argument("--chains", type=_positive_int, default=chains)
    p.add_argument("--alpha", type=float, default=1.0, help="DP concentration")
    p.add_argument("--base-a", type=float, default=1.0)
    p.add_argument("--base-b", type=float, default=1.0)
    p.add_argument("--truncation", type=_positive_int, default=50)


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: all cores)")
    p.add_argument("--out", default=None, help="output directory "
                   "(default: $GENESCREEN_OUT or ./genescreen_out)")


def _add_data(p):
    p.add_argument("--data", required=True, help="marker matrix TSV")
    p.add_argument("--labels", required=True, help="sample label file")
    p.add_argument("--kind", choices=["binary", "continuous"], default=None)


def _add_kernels(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--kernels", help="kernel dictionary JSON")
    g.add_argument("--fit-kernels", type=_positive_int, metavar="K",
                   help="fit a K-kernel dictionary to the data")
    p.add_argument("--kernel-mass", type=float, default=1.0,
                   help="total Dirichlet mass when fitting kernels")


def build_parser():
    parser = _Parser(prog="genescreen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("screen", help="posterior null probabilities per marker")
    _add_data(p)
    _add_run_flags(p)
    _add_kernels(p)
    p.add_argument("--trace", action="store_true", help="write per-sweep traces")
    _add_common(p)

    p = sub.add_parser("fisher", help="Fisher exact tests with multiplicity corrections")
    _add_data(p)
    p.add_argument("--level", type=float, default=0.05)
    _add_common(p, seed=False)

    p = sub.add_parser("simulate", help="generate a labelled synthetic dataset")
    _add_scenario(p)
    p.add_argument("--model", choices=["binary", "kernel"], default="binary")
    p.add_argument("--kernels", help="kernel dictionary JSON (kernel model)")
    p.add_argument("--n-kernels", type=_positive_int, default=8,
                   help="grid dictionary size when --kernels is absent")
    p.add_argument("--kernel-sigma", type=float, default=0.05)
    _add_common(p)

    p = sub.add_parser("compare", help="replicate scenarios and tabulate method errors")
    p.add_argument("--scenario", action="append", dest="scenarios", default=None,
                   help="null, bimodal, beta or custom-beta (repeatable)")
    p.add_argument("--genes", type=_positive_int, default=1000)
    p.add_argument("--markers-low", type=_positive_int, default=2)
    p.add_argument("--markers-high", type=_positive_int, default=20)
    p.add_argument("--n0", type=_positive_int, default=100)
    p.add_argument("--n1", type=_positive_int, default=100)
    p.add_argument("--null-fraction", type=float, default=0.8)
    p.add_argument("--beta-a", type=float, default=1.0)
    p.add_argument("--beta-b", type=float, default=0.2)
    p.add_argument("--replicates", type=_positive_int, default=50)
    p.add_argument("--methods", default=",".join(ALL_METHODS))
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_run_flags(p)
    _add_common(p)

    p = sub.add_parser("permute", help="permute gene or class labels of a dataset")
    _add_data(p)
    p.add_argument("--what", choices=["gene", "class"], required=True)
    _add_common(p)

    p = sub.add_parser("crossval", help="held-out KL agreement of gene priors")
    _add_data(p)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--modes", default=",".join(m.value for m in EstimationMode))
    p.add_argument("--direction", choices=["posterior", "prior"], default="posterior")
    _add_run_flags(p)
    _add_kernels(p)
    _add_common(p)

    p = sub.add_parser("fit-kernels", help="fit a kernel dictionary")
    _add_data(p)
    p.add_argument("--K", type=_positive_int, default=8, dest="n_kernels")
    p.add_argument("--kernel-mass", type=float, default=1.0)
    _add_common(p, seed=False)
    return parser


def _add_scenario(p):
    p.add_argument("--scenario", default="bimodal")
    p.add_argument("--genes", type=_positive_int, default=1000)
    p.add_argument("--markers-low", type=_positive_int, default=2)
    p.add_argument("--markers-high", type=_positive_int, default=20)
    p.add_argument("--n0", type=_positive_int, default=100)
    p.add_argument("--n1", type=_positive_int, default=100)
    p.add_argument("--null-fraction", type=float, default=0.8)
    p.add_argument("--beta-a", type=float, default=1.0)
    p.add_argument("--beta-b", type=float, default=0.2)


def parse_args(argv):
    """Parse and validate a command line; raises a :class:`UsageError` subclass."""
    args = build_parser().parse_args(argv)
    if hasattr(args, "burnin") and not 0 <= args.burnin < args.sweeps:
        raise UsageError("--burnin must be in [0, --sweeps)")
    if args.out is None:
        args.out = default_outdir()
    try:
        if hasattr(args, "mode"):
            args.run_config = RunConfig(
                n_sweeps=args.sweeps, n_burnin=args.burnin, n_chains=args.chains,
                seed=getattr(args, "seed", 0), mode=args.mode,
                dp=DpConfig(args.alpha, args.base_a, args.base_b, args.truncation),
                trace=getattr(args, "trace", False), threads=args.threads)
        if hasattr(args, "scenario") and args.command == "simulate":
            args.scenario_config = _scenario(args, args.scenario)
        if args.command == "compare":
            names = args.scenarios or ["null", "bimodal", "beta"]
            args.scenario_configs = [_scenario(args, s) for s in names]
            args.method_list = [m.strip() for m in args.methods.split(",") if m.strip()]
            unknown = set(args.method_list) - set(ALL_METHODS)
            if unknown:
                raise UsageError(f"unknown method(s): {', '.join(sorted(unknown))}")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return args


def _scenario(args, name):
    return ScenarioConfig(kind=name, n_genes=args.genes, markers_low=args.markers_low,
                          markers_high=args.markers_high, n0=args.n0, n1=args.n1,
                          null_fraction=args.null_fraction,
                          beta_shape=(args.beta_a, args.beta_b), seed=args.seed)


def _resolved(args):
    skip = {"run_config", "scenario_config", "scenario_configs", "method_list",
            "threads", "out", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _dictionary(args, data):
    if getattr(args, "kernels", None):
        return KernelDictionary.load(args.kernels)
    if getattr(args, "fit_kernels", None):
        return fit_kernel_dictionary(data, args.fit_kernels, args.kernel_mass)
    return None


def cmd_screen(args, out):
    data = read_dataset_tsv(args.data, args.labels, args.kind)
    dictionary = _dictionary(args, data)
    result = run_screen(data, args.run_config, dictionary)
    files = write_screen_outputs(result, out)
    if dictionary is not None:
        dictionary.save(out / "kernels.json")
        files.append("kernels.json")
    return files, {"data": args.data, "labels": args.labels}


def cmd_fisher(args, out):
    data = read_dataset_tsv(args.data, args.labels, "binary")
    p = fisher_pvalues(BinaryCounts.from_dataset(data))
    gi = data.gene_index
    bh = bh_adjust(p, args.level)
    hoch = hochberg_adjust(p, args.level)
    two = two_step_hierarchical(p, gi, args.level)
    write_table(out / "fisher.tsv",
                ["marker_id", "p", "bh_q", "hochberg_reject", "two_step_reject"],
                zip(data.marker_ids, p, bh.adjusted,
                    hoch.rejected, two.rejected))
    return ["fisher.tsv"], {"data": args.data, "labels": args.labels}


def cmd_simulate(args, out):
    cfg = args.scenario_config
    rng = np.random.default_rng(cfg.seed)
    files = ["data.tsv", "labels.tsv", "truth.tsv"]
    if args.model == "kernel":
        if args.kernels:
            dictionary = KernelDictionary.load(args.kernels)
        else:
            k = args.n_kernels
            dictionary = KernelDictionary((np.arange(k) + 0.5) / k, np.full(k, args.kernel_sigma),
                                          np.full(k, 1.0 / k))
        labeled = generate_kernel_scenario(cfg, dictionary, rng)
        dictionary.save(out / "kernels.json")
        files.append("kernels.json")
    else:
        labeled = generate_scenario(cfg, rng)
    data = labeled.dataset
    write_dataset_tsv(data, out / "data.tsv", out / "labels.tsv")
    gi = data.gene_index
    write_table(out / "truth.tsv", ["marker_id", "gene_id", "is_null", "gene_prob"],
                ((m, g, bool(t), labeled.gene_prob[gi.gene_of_row[i]])
                 for i, (m, g, t) in enumerate(zip(data.marker_ids, data.gene_of_marker,
                                                   labeled.truth_null))))
    return files, {}


def cmd_compare(args, out):
    files = ["errors.csv"]
    rows = []
    for scen in args.scenario_configs:
        table = run_comparison(scen, args.replicates, args.method_list, args.run_config,
                               args.level, args.threshold, workers=args.threads or 1)
        for r in table:
            rows.append([r.method, r.scenario, r.replicates, r.threshold_error,
                         r.threshold_error_se, r.expected_error, r.expected_error_se,
                         r.expected_error_rb, r.expected_error_rb_se, r.auc, r.auc_se])
            if r.roc is not None:
                name = f"roc_{r.scenario}_{r.method}.csv"
                write_table(out / name, ["fpr", "tpr"], zip(*r.roc), delimiter=",")
                files.append(name)
    write_table(out / "errors.csv",
                ["method", "scenario", "replicates", "threshold_error", "threshold_error_se",
                 "expected_error", "expected_error_se", "expected_error_rb",
                 "expected_error_rb_se", "auc", "auc_se"], rows, delimiter=",")
    return files, {}


def cmd_permute(args, out):
    data = read_dataset_tsv(args.data, args.labels, args.kind)
    rng = np.random.default_rng(args.seed)
    permuted = permute_gene_labels(data, rng) if args.what == "gene" else \
        permute_class_labels(data, rng)
    write_dataset_tsv(permuted, out / "data.tsv", out / "labels.tsv")
    return ["data.tsv", "labels.tsv"], {"data": args.data, "labels": args.labels}


def cmd_crossval(args, out):
    data = read_dataset_tsv(args.data, args.labels, args.kind)
    dictionary = _dictionary(args, data)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(7,)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kl = cross_validate_priors(data, args.run_config, args.holdout, rng, modes,
                                   dictionary, args.direction)
    write_table(out / "crossval.csv", ["mode", "mean_kl"], kl.items(), delimiter=",")
    return ["crossval.csv"], {"data": args.data, "labels": args.labels}


def cmd_fit_kernels(args, out):
    data = read_dataset_tsv(args.data, args.labels, "continuous")
    dictionary = fit_kernel_dictionary(data, args.n_kernels, args.kernel_mass)
    dictionary.save(out / "kernels.json")
    return ["kernels.json"], {"data": args.data, "labels": args.labels}


HANDLERS = {"screen": cmd_screen, "fisher": cmd_fisher, "simulate": cmd_simulate,
            "compare": cmd_compare, "permute": cmd_permute, "crossval": cmd_crossval,
            "fit-kernels": cmd_fit_kernels}


def run(argv):
    args = parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files, inputs = HANDLERS[args.command](args, out)
    config = _resolved(args)
    if hasattr(args, "run_config"):
        config["run"] = args.run_config.to_dict()
    if getattr(args, "kernels", None):
        inputs["kernels"] = args.kernels
    write_manifest(out, args.command, config, getattr(args, "seed", None), inputs,
                   files + ["manifest.json"], __version__, time.perf_counter() - start,
                   args.threads)
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as exc:
        print(f"genescreen: usage error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ScreenError as exc:
        print(f"genescreen: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"genescreen: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"genescreen: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
