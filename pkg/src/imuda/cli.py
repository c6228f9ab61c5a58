"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data or file format
error, 4 numerical failure. Diagnostics go to stderr.
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .adapt import adapt_baseline_swd, adapt_imuda, pretrain, run_pipeline
from .config import load_run_config, write_json, write_manifest
from .data import gen_blobs, gen_two_moons, load_csv, parse_shift, save_csv
from .exceptions import ConfigError, FormatError, ImudaError
from .gmm import estimate_map, load_gmm, save_gmm
from .metrics import bound_diagnostics, evaluate, pca2
from .nn import forward_encoder, load_checkpoint, save_checkpoint
from .pseudo import generate_pseudo, load_pseudo_csv, save_pseudo_csv
from .swd import sample_projections, swd_empirical

log = logging.getLogger("imuda")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _write_text(path, text):
    with open(path, "w", newline="") as f:
        f.write(text)


def _report_path(out, suffix):
    root, _ = os.path.splitext(out)
    return root + suffix


def _load_source(path, k=None):
    ds = load_csv(path, k=k, name="source")
    if not ds.labeled:
        raise FormatError(f"{path}: source data needs a label column")
    return ds


def _load_points(path):
    """Feature columns ``f*`` of any dataset or pseudo-dataset CSV."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty file", line=1)
    cols = [i for i, h in enumerate(rows[0]) if h.strip().startswith("f")]
    if not cols:
        raise FormatError(f"{path}: no f* feature columns", line=1)
    out = np.empty((len(rows) - 1, len(cols)))
    for i, row in enumerate(rows[1:]):
        try:
            out[i] = [float(row[c]) for c in cols]
        except (ValueError, IndexError):
            raise FormatError(f"{path}: bad row", line=i + 2) from None
    return out


def cmd_make_synth(args):
    shift = parse_shift(args.shift)
    if args.task == "twomoons":
        source, target = gen_two_moons(args.n, args.noise, shift, args.seed)
    else:
        source, target = gen_blobs(args.k, args.n // args.k, args.separation, shift, args.d, args.seed,
                                   noise_sigma=args.noise)
    os.makedirs(args.out, exist_ok=True)
    save_csv(source, os.path.join(args.out, "source.csv"))
    save_csv(target, os.path.join(args.out, "target.csv"), with_labels=False)
    save_csv(target, os.path.join(args.out, "target_labels.csv"))
    return 0


def _arch_and_config(args, source):
    cfg = load_run_config(args.config)
    k = cfg.arch.get("num_classes") or source.k
    arch = cfg.resolve_arch(source.d, k)
    return cfg, arch


def cmd_pretrain(args):
    source = _load_source(args.source)
    cfg, arch = _arch_and_config(args, source)
    params, report = pretrain(cfg.adapt, arch, source)
    save_checkpoint(params, args.out)
    _write_text(args.report or _report_path(args.out, ".report.csv"), report.to_csv())
    log.info("pretrained in %.2fs, source accuracy %.4f", report.wall_time, report.final.source_accuracy)
    return 0


def cmd_estimate_gmm(args):
    params = load_checkpoint(args.model)
    source = _load_source(args.source, params.arch.num_classes)
    gmm = estimate_map(forward_encoder(params, source.X), source.labels, params.arch.num_classes,
                       eps=args.eps, covariance="diag" if args.diag else "full")
    save_gmm(gmm, args.out)
    return 0


def cmd_gen_pseudo(args):
    params = load_checkpoint(args.model)
    gmm = load_gmm(args.gmm)
    pseudo = generate_pseudo(gmm, params, args.tau, args.n, args.max_attempt_factor, args.seed)
    save_pseudo_csv(pseudo, args.out)
    log.info("accepted %d points, acceptance rate %.4f", len(pseudo), pseudo.acceptance_rate)
    return 0


def cmd_adapt(args):
    params = load_checkpoint(args.model)
    cfg = load_run_config(args.config)
    config = cfg.adapt
    if args.drop_term3:
        config = dataclasses.replace(config, enable_target_pseudo_swd=False)
    if args.drop_term4:
        config = dataclasses.replace(config, enable_source_pseudo_swd=False)
    k = params.arch.num_classes
    source = _load_source(args.source, k)
    target = load_csv(args.target, k=k, name="target")
    if args.baseline_swd or cfg.baseline:
        adapted, report = adapt_baseline_swd(params, source, target, config)
    else:
        if args.pseudo:
            pseudo = load_pseudo_csv(args.pseudo, tau=config.tau)
            gmm = None
        else:
            gmm = estimate_map(forward_encoder(params, source.X), source.labels, k,
                               eps=config.cov_reg, covariance=config.covariance)
            pseudo = generate_pseudo(gmm, params, config.tau, config.n_pseudo or source.n,
                                     config.max_attempt_factor, config.seed)
        adapted, report = adapt_imuda(params, source, target, pseudo, config, gmm=gmm)
    save_checkpoint(adapted, args.out)
    _write_text(args.report, report.to_csv())
    log.info("adapted in %.2fs", report.wall_time)
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.model)
    data = load_csv(args.data, k=params.arch.num_classes, name="eval")
    report = evaluate(params, data)
    if args.out:
        write_json(args.out, report.to_dict())
    print(f"{report.accuracy!r}")
    return 0


def cmd_swd(args):
    A = _load_points(args.a)
    B = _load_points(args.b)
    if A.shape[1] != B.shape[1]:
        raise FormatError(f"{args.a} has {A.shape[1]} columns, {args.b} has {B.shape[1]}")
    proj = sample_projections(A.shape[1], args.projections, args.seed)
    print(repr(swd_empirical(A, B, proj).value))
    return 0


def cmd_diagnose_bound(args):
    params = load_checkpoint(args.model)
    k = params.arch.num_classes
    source = _load_source(args.source, k)
    target = load_csv(args.target, k=k, name="target")
    pseudo = load_pseudo_csv(args.pseudo, tau=args.tau)
    diag = bound_diagnostics(params, source, target, pseudo, args.tau, args.projections, args.seed)
    if args.out:
        write_json(args.out, diag.to_dict())
    print(json.dumps(diag.to_dict(), indent=2))
    return 0


def cmd_export_embeddings(args):
    params = load_checkpoint(args.model)
    data = load_csv(args.data, k=params.arch.num_classes, name="data")
    Z = forward_encoder(params, data.X)
    prefix = "z"
    if args.pca2:
        Z, prefix = pca2(Z), "pc"
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"{prefix}{j}" for j in range(Z.shape[1])] + (["label"] if data.labeled else []))
        for i in range(Z.shape[0]):
            row = [repr(float(v)) for v in Z[i]]
            if data.labeled:
                row.append(int(data.labels[i]))
            w.writerow(row)
    return 0


def cmd_run_all(args):
    cfg = load_run_config(args.config)
    out = args.out or cfg.path(cfg.output_dir)
    if not out:
        raise ConfigError("run-all needs output_dir in the config or --out")
    os.makedirs(out, exist_ok=True)
    written = []

    def dest(name):
        written.append(name)
        return os.path.join(out, name)

    inputs = [os.path.abspath(args.config)]
    if cfg.synth is not None:
        s = cfg.synth
        shift = parse_shift(s["shift"])
        if s["task"] == "twomoons":
            source, target_eval = gen_two_moons(s["n"], s["noise"], shift, s["seed"])
        else:
            source, target_eval = gen_blobs(s["k"], s["n"] // s["k"], s["separation"], shift, s["d"],
                                            s["seed"], noise_sigma=s["noise"])
        save_csv(source, dest("source.csv"))
        save_csv(target_eval, dest("target.csv"), with_labels=False)
        save_csv(target_eval, dest("target_labels.csv"))
    elif cfg.data is not None:
        paths = {k: cfg.path(v) for k, v in cfg.data.items() if v}
        if "source" not in paths or ("target" not in paths and "target_labels" not in paths):
            raise ConfigError("data needs source and target (or target_labels) paths")
        source = _load_source(paths["source"])
        target_eval = load_csv(paths.get("target_labels") or paths["target"], k=source.k, name="target")
        inputs += [paths[k] for k in ("source", "target", "target_labels") if k in paths]
    else:
        raise ConfigError("config needs a data or synth section")

    k = cfg.arch.get("num_classes") or source.k
    arch = cfg.resolve_arch(source.d, k)
    result = run_pipeline(arch, cfg.adapt, source, target_eval, baseline=cfg.baseline)

    save_checkpoint(result.pretrained, dest("model_pretrained.json"))
    _write_text(dest("pretrain_report.csv"), result.pretrain_report.to_csv())
    if result.gmm is not None:
        save_gmm(result.gmm, dest("gmm.json"))
        save_pseudo_csv(result.pseudo, dest("pseudo.csv"))
    save_checkpoint(result.adapted, dest("model_adapted.json"))
    _write_text(dest("adapt_report.csv"), result.adapt_report.to_csv())
    write_json(dest("adapt_summary.json"), result.adapt_report.summary())

    evals = {
        "source_pretrained": evaluate(result.pretrained, source).to_dict(),
        "source_adapted": evaluate(result.adapted, source).to_dict(),
    }
    if target_eval.labeled:
        evals["target_pretrained"] = evaluate(result.pretrained, target_eval).to_dict()
        evals["target_adapted"] = evaluate(result.adapted, target_eval).to_dict()
    write_json(dest("eval.json"), evals)
    if result.pseudo is not None:
        diag = {
            "pretrained": bound_diagnostics(result.pretrained, source, target_eval, result.pseudo,
                                            cfg.adapt.tau, cfg.adapt.num_projections, cfg.adapt.seed).to_dict(),
            "adapted": bound_diagnostics(result.adapted, source, target_eval, result.pseudo,
                                         cfg.adapt.tau, cfg.adapt.num_projections, cfg.adapt.seed).to_dict(),
        }
        write_json(dest("diagnostics.json"), diag)
    write_manifest(os.path.join(out, "manifest.json"), cfg.to_dict(arch), inputs, written)
    if target_eval.labeled:
        log.info("target accuracy %.4f -> %.4f", evals["target_pretrained"]["accuracy"],
                 evals["target_adapted"]["accuracy"])
    return 0


def build_parser():
    p = _Parser(prog="imuda", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"imuda {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-synth", help="write synthetic source/target CSVs")
    s.add_argument("--task", choices=["twomoons", "blobs"], default="twomoons")
    s.add_argument("--shift", default="rot:35")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--k", type=int, default=3, help="classes (blobs)")
    s.add_argument("--separation", type=float, default=5.0, help="centre spacing (blobs)")
    s.add_argument("--d", type=int, default=2, help="feature width (blobs)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_synth)

    s = sub.add_parser("pretrain", help="train on labeled source data")
    s.add_argument("--config", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("estimate-gmm", help="fit the class-conditional embedding GMM")
    s.add_argument("--model", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--diag", action="store_true")
    s.set_defaults(func=cmd_estimate_gmm)

    s = sub.add_parser("gen-pseudo", help="draw the confident pseudo-dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--gmm", required=True)
    s.add_argument("--tau", type=float, default=0.95)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-attempt-factor", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_pseudo)

    s = sub.add_parser("adapt", help="adapt a pretrained model to target data")
    s.add_argument("--config", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--pseudo")
    s.add_argument("--baseline-swd", action="store_true")
    drop = s.add_mutually_exclusive_group()
    drop.add_argument("--drop-term3", action="store_true", help="disable target/pseudo alignment")
    drop.add_argument("--drop-term4", action="store_true", help="disable source/pseudo alignment")
    s.add_argument("--out", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("eval", help="accuracy and confusion matrix")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("swd", help="sliced Wasserstein distance between two CSV point sets")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--projections", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_swd)

    s = sub.add_parser("diagnose-bound", help="computable terms of the target error bound")
    s.add_argument("--model", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--pseudo", required=True)
    s.add_argument("--tau", type=float, default=0.95)
    s.add_argument("--projections", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose_bound)

    s = sub.add_parser("export-embeddings", help="write embeddings (or their PCA) as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--pca2", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("run-all", help="pretrain, GMM, pseudo-dataset, adapt and evaluate")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="overrides output_dir from the config")
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except ImudaError as exc:
        print(f"imuda: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"imuda: error: {exc}", file=sys.stderr)
        return 3
    except KeyError as exc:
        print(f"imuda: error: missing field {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
