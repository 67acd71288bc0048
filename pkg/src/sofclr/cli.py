"""Command-line interface: ``sofclr {train,eval,sweep-alpha,verify,gen-data}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or checkpoint
error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, config_to_dict, load_config
from .data import DataError, SyntheticConfig, gen_synthetic, load_csv, save_csv, split_annotate
from .fairmetrics import MetricsReport, evaluate_scored, write_scored_csv
from .linear_eval import embed_all, fit_probe, probe_scores
from .trainer import InsufficientDataError, TrainConfig, train

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
DEFAULT_ALPHAS = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _load_data(path, K=None):
    try:
        return load_csv(path, K)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from None


def _load_cfg(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_train(cfg: TrainConfig, data_path, out_dir, config_path=None) -> dict:
    """Train and write manifest, checkpoint and history into ``out_dir``."""
    dataset = _load_data(data_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": str(out / "checkpoint.bin"), "history": str(out / "history.csv"),
             "manifest": str(out / "manifest.json")}
    inputs = {"data": {"path": str(data_path), "blob": git_blob_hash(data_path)}}
    if config_path is not None:
        inputs["config"] = {"path": str(config_path), "blob": git_blob_hash(config_path)}
    _write_json(paths["manifest"], {
        "command": "train",
        "version": __version__,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "inputs": inputs,
        "outputs": paths,
    })
    try:
        state, hist = train(cfg, dataset)
    except InsufficientDataError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    hist.to_csv(paths["history"])
    ckpt = Checkpoint(cfg, cfg.encoder_spec(dataset.d_in), cfg.disc_spec(dataset.K), state)
    save_checkpoint(paths["checkpoint"], ckpt)
    return paths


def run_eval(ckpt_path, train_path, test_path, out_file, buckets=100, aggregation="max",
             scores_file=None) -> MetricsReport:
    try:
        ckpt = load_checkpoint(ckpt_path)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    train_set, test_set = _load_data(train_path), _load_data(test_path)
    enc = ckpt.encoder
    for name, ds in (("train", train_set), ("test", test_set)):
        if ds.d_in != enc.d_in:
            raise CliError(f"checkpoint encoder expects d_in={enc.d_in}, {name} data has d_in={ds.d_in}",
                           EXIT_CONFIG)
    labeled = np.flatnonzero(train_set.label_mask)
    try:
        probe = fit_probe(embed_all(enc, ckpt.state.w, train_set.subset(labeled)), train_set.labels[labeled])
        scored = probe_scores(probe, enc, ckpt.state.w, test_set)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    report = evaluate_scored(scored, buckets, aggregation)
    report.to_csv(out_file)
    if scores_file is not None:
        write_scored_csv(scored, scores_file)
    return report


def _sweep_one(job: tuple) -> dict:
    cfg, data_path, test_path, run_dir, buckets, aggregation = job
    row = {"alpha": cfg.alpha, "seed": cfg.seed}
    try:
        paths = run_train(cfg, data_path, run_dir)
        report = run_eval(paths["checkpoint"], data_path, test_path, Path(run_dir) / "metrics.csv",
                          buckets, aggregation)
        with open(paths["history"], newline="", encoding="utf-8") as fh:
            lls = [float(r["dual_ll"]) for r in csv.DictReader(fh)]
        row.update(report.display())
        row["final_dual_ll"] = lls[-1] if lls else float("nan")
        row["status"] = "ok"
    except Exception as exc:  # recorded per run; the sweep goes on
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def run_sweep(cfg: TrainConfig, data_path, test_path, out_dir, alphas, seeds, buckets=100,
              aggregation="max", threads: int = 1) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(replace(cfg, alpha=a, seed=s), data_path, test_path, out / f"alpha{a:g}_seed{s}", buckets, aggregation)
            for a in alphas for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    metric_cols = [f.name for f in fields(MetricsReport)]
    cols = ["alpha", "seed", *metric_cols, "final_dual_ll", "status"]
    with open(out / "pareto.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([format(r.get(c, ""), ".17g") if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    return rows


def _float_list(text: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list:
    return [int(v) for v in _float_list(text)]


def _threads() -> int:
    raw = os.environ.get("SOFCLR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"SOFCLR_THREADS must be an integer, got {raw!r}", EXIT_CONFIG) from None


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--tolerance expects key=value, got {item!r}", EXIT_CONFIG)
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise CliError(f"--tolerance {key}: not a number: {value!r}", EXIT_CONFIG) from None
    return out


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    paths = run_train(cfg, args.data, args.out, args.config)
    print(f"wrote {paths['checkpoint']} and {paths['history']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = run_eval(args.checkpoint, args.train_data, args.test_data, args.out, args.buckets,
                      args.aggregation, args.scores)
    for k, v in report.display().items():
        print(f"{k:>10s} {v:10.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args.config)
    rows = run_sweep(cfg, args.data, args.test_data, args.out, args.alphas, args.seeds, args.buckets,
                     args.aggregation, _threads())
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"alpha={r['alpha']} seed={r['seed']}: {r['status']}", file=sys.stderr)
    print(f"{len(rows) - len(failed)}/{len(rows)} runs ok; wrote {Path(args.out) / 'pareto.csv'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import TOLERANCES, format_table, run_checks

    overrides = _overrides(args.tolerance)
    unknown = sorted(set(overrides) - set(TOLERANCES))
    if unknown:
        raise CliError(f"unknown tolerance(s): {', '.join(unknown)}", EXIT_CONFIG)
    only = args.only.split(",") if args.only else None
    results = run_checks(only, overrides)
    table = format_table(results)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(table + "\n", encoding="utf-8")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(n=args.n, d_in=args.d_in, K=args.K, bias_strength=args.bias,
                          group_props=tuple(args.group_props) if args.group_props else
                          tuple(np.full(args.K, 1.0 / args.K)) if args.K != 2 else SyntheticConfig.group_props,
                          seed=args.seed, leak_scale=args.leak_scale, label_coupling=args.label_coupling)
    ds = gen_synthetic(cfg)
    if args.annotate < 1.0:
        ds = split_annotate(ds, args.annotate, args.seed)
    save_csv(ds, args.out)
    print(f"wrote {ds.n} rows ({ds.annotated.size} annotated) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sofclr", description="Fair self-supervised contrastive learning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an encoder; writes checkpoint, history and manifest")
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--data", required=True, help="dataset CSV")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="linear evaluation and fairness metrics of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--train-data", required=True, help="labeled data for fitting the probe")
    e.add_argument("--test-data", required=True, help="labeled and annotated test data")
    e.add_argument("--out", required=True, help="metrics CSV")
    e.add_argument("--scores", help="also write the scored test examples to this CSV")
    e.add_argument("--buckets", type=int, default=100)
    e.add_argument("--aggregation", choices=("max", "mean_adjacent"), default="max")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-alpha", help="train and evaluate over a grid of alpha and seeds")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--test-data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alphas", type=_float_list, default=list(DEFAULT_ALPHAS))
    s.add_argument("--seeds", type=_int_list, default=[0])
    s.add_argument("--buckets", type=int, default=100)
    s.add_argument("--aggregation", choices=("max", "mean_adjacent"), default="max")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--out", help="directory for verify.txt")
    v.add_argument("--only", help="comma-separated check numbers")
    v.add_argument("--tolerance", action="append", metavar="KEY=VALUE", help="override a tolerance")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen-data", help="write a synthetic biased dataset CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=4000)
    g.add_argument("--d-in", type=int, default=8)
    g.add_argument("--K", type=int, default=2)
    g.add_argument("--bias", type=float, default=0.9)
    g.add_argument("--group-props", type=_float_list)
    g.add_argument("--leak-scale", type=float, default=SyntheticConfig.leak_scale)
    g.add_argument("--label-coupling", type=float, default=SyntheticConfig.label_coupling)
    g.add_argument("--annotate", type=float, default=0.05, help="fraction of rows keeping the attribute")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "buckets", 100) < 2:
        print("error: --buckets must be >= 2", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
