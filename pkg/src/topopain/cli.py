"""``topo-pain`` command line.

Subcommands: synth, extract, learn-basis, train, predict, filter, evaluate.
All randomness flows from ``--seed``; ``--config`` supplies a JSON
configuration that explicit flags override.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, PipelineConfig
from .data import ManifestError, load_manifest, save_manifest
from .embed import ProjectionBasis, learn_basis
from .evaluation import run_lopo
from .hot import extract_features, read_features, write_features
from .learn.ensemble import PainModel, predict_pain, train_pain_model
from .temporal import ALIASES, METHODS, apply_filter, train_filter


class CliError(Exception):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _sidecar(path: Path, **info) -> None:
    info["finished"] = datetime.now(timezone.utc).isoformat()
    Path(str(path) + ".log").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "sigma", None) is not None:
        over["scale"] = {"sigma": args.sigma}
    emb = {k: getattr(args, k) for k in ("alpha", "p", "kappa")
           if getattr(args, k, None) is not None}
    if getattr(args, "method", None) and args.command == "learn-basis":
        emb["method"] = args.method
    if getattr(args, "normalized", False):
        emb["normalized"] = True
    if emb:
        over["embed"] = emb
    if getattr(args, "filter_method", None):
        over["filter"] = {"method": args.filter_method}
        if args.w is not None:
            over["filter"]["w"] = args.w
    return cfg.updated(over) if over else cfg


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from .synth import synth_dataset, synth_source
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seqs, _ = synth_dataset(cfg.seed, args.subjects, args.frames, args.sequences)
    save_manifest(seqs, out / "manifest.json")
    src = synth_source(cfg.seed, args.source_subjects)
    (out / "source").mkdir(exist_ok=True)
    save_manifest(src, out / "source" / "manifest.json")
    print(f"wrote {out / 'manifest.json'} ({sum(len(s) for s in seqs)} frames) and "
          f"{out / 'source' / 'manifest.json'} ({sum(len(s) for s in src)} frames)")


def _extract(manifest, cfg, threads):
    seqs = load_manifest(manifest)
    frames = [f for s in seqs for f in s]
    return extract_features(frames, cfg.roi(), cfg.scale(), cfg.hot(), threads)


def cmd_extract(args, cfg):
    table = _extract(args.manifest, cfg, _threads(args))
    write_features(table, args.out)
    print(f"wrote {len(table)} descriptor rows to {args.out}")


def cmd_learn_basis(args, cfg):
    table = read_features(args.source)
    X = table.hess if args.family == "hess" else table.grad
    T = args.T or (cfg.T_hess if args.family == "hess" else cfg.T_grad)
    flags = np.nan_to_num(table.pain, nan=0.0) > 0
    basis = learn_basis(X, T, cfg.embed(), flags,
                        {"source": Path(args.source).name, "family": args.family,
                         "seed": cfg.seed})
    basis.save(args.out)
    print(f"wrote {basis.method} basis {basis.d}->{basis.T} to {args.out}")


def cmd_train(args, cfg):
    table = read_features(args.features)
    keep = ~np.isnan(table.pain)
    if not keep.any():
        raise CliError(f"{args.features}: no annotated frames to train on")
    bases = {"hess": ProjectionBasis.load(args.basis_hess),
             "grad": ProjectionBasis.load(args.basis_grad)}
    model = train_pain_model(table.subset(keep), bases, cfg.svr(), cfg.seed, cfg.to_dict())
    model.save(args.out)
    print(f"trained on {int(keep.sum())} frames; model written to {args.out}")


EST_HEADER = ["subject", "sequence", "frame", "estimate", "clamped", "truth"]


def _write_estimates(path, keys, est, truth):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EST_HEADER)
        for (s, q, f), e, t in zip(keys, est, truth):
            w.writerow([s, q, int(f), repr(float(e)), repr(float(np.clip(e, 0, 15))),
                        "" if np.isnan(t) else repr(float(t))])


def _read_estimates(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != EST_HEADER[:4]:
        raise CliError(f"{path}: not an estimate file (expected header {EST_HEADER})")
    keys = [(r[0], r[1], int(r[2])) for r in rows[1:]]
    est = np.array([float(r[3]) for r in rows[1:]])
    truth = np.array([float(r[5]) if len(r) > 5 and r[5] != "" else np.nan for r in rows[1:]])
    return keys, est, truth


def cmd_predict(args, cfg):
    model = PainModel.load(args.model)
    table = read_features(args.features)
    est = predict_pain(model, table.hess, table.grad, table.pts)
    _write_estimates(args.out, table.keys, est, table.pain)
    print(f"wrote {len(est)} estimates to {args.out}")


def _group(keys):
    groups: dict = {}
    for i, (s, q, f) in enumerate(keys):
        groups.setdefault((s, q), []).append(i)
    return [np.array(sorted(ix, key=lambda i: keys[i][2])) for _, ix in sorted(groups.items())]


def cmd_filter(args, cfg):
    from .temporal import FilterConfig
    fc = FilterConfig(args.method, args.w, mlp=cfg.mlp(), svr=cfg.svr())
    keys, est, truth = _read_estimates(args.input)
    learned = None
    if fc.learned:
        if not args.train:
            raise CliError(f"--method {args.method} needs --train EST with a truth column")
        tkeys, test, ttruth = _read_estimates(args.train)
        if np.isnan(ttruth).any():
            raise CliError(f"{args.train}: every training row needs a truth value")
        overlap = {k[0] for k in tkeys} & {k[0] for k in keys}
        if overlap:
            raise CliError(f"training and filtered estimates share subjects {sorted(overlap)}")
        learned = train_filter([(test[ix], ttruth[ix]) for ix in _group(tkeys)], fc, cfg.seed)
    out = est.copy()
    for ix in _group(keys):
        out[ix] = apply_filter(est[ix], fc, learned)
    _write_estimates(args.out, keys, out, truth)
    print(f"filtered {len(out)} estimates ({fc.method}, w={fc.w}) into {args.out}")


def cmd_evaluate(args, cfg):
    t0 = time.perf_counter()
    threads = _threads(args)
    if args.features:
        target = read_features(args.features)
    elif args.manifest:
        target = _extract(args.manifest, cfg, threads)
    else:
        raise CliError("evaluate needs --manifest or --features")
    subjects = sorted(set(target.subject))
    if len(subjects) < 2:
        raise CliError(f"leave-one-person-out requires at least 2 subjects; "
                       f"the target data has {len(subjects)} ({', '.join(subjects)})")
    source = read_features(args.source_features)
    t1 = time.perf_counter()
    res = run_lopo(target, source, cfg, threads=threads)
    doc = res.to_dict()
    out = Path(args.out)
    _dump_json(doc, out)
    _sidecar(out, extract_seconds=t1 - t0, lopo_seconds=time.perf_counter() - t1,
             threads=threads, version=__version__)
    agg = doc["aggregate"]["pooled"]
    print(f"{len(res.folds)} folds: pooled MSE {agg['mse']:.4f}, "
          f"Pearson {agg['pearson']}, AUC {agg['auc']}; audit "
          f"{'passed' if res.audit_passed else 'FAILED'}; results in {out}")


# ---------------------------------------------------------------- parser

def _common(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copy must not overwrite values given before the subcommand
    d = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file", **d)
    common.add_argument("--seed", type=int, help="master seed (overrides the config)", **d)
    common.add_argument("--threads", type=int,
                        help="worker processes (default: available cores)", **d)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(True)
    ap = argparse.ArgumentParser(prog="topo-pain", description="Continuous pain-intensity "
                                 "estimation from facial topography.", parents=[_common(False)])
    ap.add_argument("--version", action="version",
                    version=f"topo-pain {__version__} (config schema {SCHEMA_VERSION})")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic data sets")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--sequences", type=int, default=1, help="sequences per subject")
    p.add_argument("--source-subjects", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="HoT descriptors for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("learn-basis", parents=[common], help="fit a projection basis")
    p.add_argument("--source", required=True, help="source feature table")
    p.add_argument("--method", choices=("sr-m", "sr", "lpp", "pca"), default="sr-m")
    p.add_argument("--family", choices=("hess", "grad"), default="hess")
    p.add_argument("--T", type=int, help="output dimension (default 32 hess / 24 grad)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--normalized", action="store_true",
                   help="solve the degree-normalized eigenproblem")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_basis)

    p = sub.add_parser("train", parents=[common], help="train the two-level pain model")
    p.add_argument("--features", required=True)
    p.add_argument("--basis-hess", required=True)
    p.add_argument("--basis-grad", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="per-frame pain estimates")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("filter", parents=[common], help="temporal filtering of estimates")
    p.add_argument("--method", required=True, choices=METHODS + tuple(ALIASES))
    p.add_argument("--w", type=int)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--train", help="estimates with truth from other persons (learned methods)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", parents=[common], help="leave-one-person-out evaluation")
    p.add_argument("--manifest")
    p.add_argument("--features", help="precomputed target features instead of --manifest")
    p.add_argument("--source-features", required=True)
    p.add_argument("--filter-method", choices=METHODS + tuple(ALIASES))
    p.add_argument("--w", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (CliError, ConfigError, ManifestError) as exc:
        print(f"topo-pain {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"topo-pain {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
