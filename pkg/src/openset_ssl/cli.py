"""Command-line surface.

Subcommands cover the pipeline end to end and stage by stage:

    generate   write a synthetic benchmark from the generator flags
    pretrain   contrastive pretraining -> pretrained.ckpt
    detect     prototypes, scores, threshold, split -> scored.csv
    label      soft-labels and top-k pseudo-labels -> manifests
    train      open-set fine-tuning -> checkpoints, train_trace.csv
    run        the full pipeline -> report.json
    sweep      one run per value of an axis -> sweep.csv
    eval       recompute metrics from persisted manifests
    report     plot-ready accuracy-vs-value CSV from a sweep directory

Flags mirror the experiment config; a --config JSON file overrides flags.
All randomness derives from --seed.  Exit status is nonzero on any stage
error.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from . import harness
from .data import read_benchmark


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--dataset-dir", default=None)
    parser.add_argument("--config", default=None, help="JSON config file; overrides flags")


def _add_benchmark(parser):
    parser.add_argument("--dim", type=int, default=None)
    parser.add_argument("--in-classes", type=int, default=None)
    parser.add_argument("--out-classes", type=int, default=None)
    parser.add_argument("--separation", type=float, default=None)
    parser.add_argument("--within-sigma", type=float, default=None)
    parser.add_argument("--correlation-mode", choices=("independent", "related"), default=None)
    parser.add_argument("--total-unlabeled", type=int, default=None)
    parser.add_argument("--proportion", type=float, default=None)
    parser.add_argument("--labels-per-class", type=int, default=None)
    parser.add_argument("--test-per-class", type=int, default=None)


def _add_training(parser):
    parser.add_argument("--pretrain-steps", type=int, default=None)
    parser.add_argument("--tau-con", type=float, default=None)
    parser.add_argument("--steps", type=int, default=None, help="fine-tuning steps")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--pretrain-lr", type=float, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--tau-sl", type=float, default=None)
    parser.add_argument("--k-fraction", type=float, default=None)
    parser.add_argument("--eta", type=float, default=None)
    parser.add_argument("--backend", choices=("consistency", "hard-pseudo"), default=None)
    parser.add_argument("--checkpoint-interval", type=int, default=None)
    parser.add_argument("--checkpoint-count", type=int, default=None)
    for toggle in ("detect", "aux-loss", "aux-bn", "topk-pl"):
        dest = toggle.replace("-", "_")
        parser.add_argument(f"--{toggle}", dest=dest, action="store_true", default=None)
        parser.add_argument(f"--no-{toggle}", dest=dest, action="store_false", default=None)


def build_config(args):
    """Defaults, then flags, then the --config file on top."""
    cfg = harness.default_config()

    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    if args.dataset_dir is not None:
        cfg = replace(cfg, dataset_dir=args.dataset_dir)

    bench_flags = {
        "dim": getattr(args, "dim", None),
        "in_classes": getattr(args, "in_classes", None),
        "out_classes": getattr(args, "out_classes", None),
        "separation": getattr(args, "separation", None),
        "within_sigma": getattr(args, "within_sigma", None),
        "correlation_mode": getattr(args, "correlation_mode", None),
        "total_unlabeled": getattr(args, "total_unlabeled", None),
        "out_proportion": getattr(args, "proportion", None),
        "labels_per_class": getattr(args, "labels_per_class", None),
        "test_per_class": getattr(args, "test_per_class", None),
    }
    bench_flags = {k: v for k, v in bench_flags.items() if v is not None}
    if bench_flags:
        cfg = replace(cfg, benchmark=replace(cfg.benchmark, **bench_flags))

    con_flags = {}
    if getattr(args, "pretrain_steps", None) is not None:
        con_flags["steps"] = args.pretrain_steps
    if getattr(args, "tau_con", None) is not None:
        con_flags["tau_con"] = args.tau_con
    if getattr(args, "pretrain_lr", None) is not None:
        con_flags["lr"] = args.pretrain_lr
    if getattr(args, "batch_size", None) is not None:
        con_flags["batch_size"] = args.batch_size
    if con_flags:
        cfg = replace(cfg, contrastive=replace(cfg.contrastive, **con_flags))

    ssl_flags = {}
    for name in ("steps", "lr", "beta", "lam", "backend", "batch_size"):
        value = getattr(args, name, None)
        if value is not None:
            ssl_flags[name] = value
    for name in ("detect", "aux_loss", "aux_bn", "topk_pl"):
        value = getattr(args, name, None)
        if value is not None:
            ssl_flags[name] = value
    if ssl_flags:
        cfg = replace(cfg, ssl=replace(cfg.ssl, **ssl_flags))

    lab_flags = {}
    if getattr(args, "tau_sl", None) is not None:
        lab_flags["tau_sl"] = args.tau_sl
    if getattr(args, "k_fraction", None) is not None:
        lab_flags["k_fraction"] = args.k_fraction
    if lab_flags:
        cfg = replace(cfg, labeling=replace(cfg.labeling, **lab_flags))

    if getattr(args, "eta", None) is not None:
        cfg = replace(cfg, detection=replace(cfg.detection, eta=args.eta))
    if getattr(args, "checkpoint_interval", None) is not None:
        cfg = replace(cfg, checkpoint_interval=args.checkpoint_interval)
    if getattr(args, "checkpoint_count", None) is not None:
        cfg = replace(cfg, checkpoint_count=args.checkpoint_count)

    if args.config:
        with open(args.config) as fh:
            text = fh.read()
        merged = _deep_merge(cfg.to_dict(), json.loads(text))
        cfg = harness.ExperimentConfig.from_dict(merged, raw_text=text)
    return cfg


def _deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_bench(cfg):
    if cfg.dataset_dir:
        return read_benchmark(cfg.dataset_dir)
    return read_benchmark(os.path.join(cfg.out_dir, "dataset"))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="openset-ssl", description="open-set SSL experiment harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("generate", "pretrain", "detect", "label", "train", "run"):
        p = sub.add_parser(name)
        _add_common(p)
        _add_benchmark(p)
        _add_training(p)

    p = sub.add_parser("sweep")
    _add_common(p)
    _add_benchmark(p)
    _add_training(p)
    p.add_argument("--axis", choices=harness.SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")

    p = sub.add_parser("eval")
    _add_common(p)

    p = sub.add_parser("report")
    _add_common(p)
    p.add_argument("--sweep-dir", required=True)
    p.add_argument("--output", default=None, help="curve CSV path")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except Exception as exc:  # surface stage failures as nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args):
    if args.command == "report":
        rows = harness.collect_sweep_rows(args.sweep_dir)
        output = args.output or os.path.join(args.sweep_dir, "curve.csv")
        harness.write_curve_csv(output, rows)
        print(output)
        return 0

    cfg = build_config(args)

    if args.command == "eval":
        result = harness.recompute_metrics(cfg.out_dir, cfg.dataset_dir, median_last=cfg.median_last)
        print(json.dumps(result, indent=2, sort_keys=True))
        return 0

    os.makedirs(cfg.out_dir, exist_ok=True)

    if args.command == "generate":
        harness.prepare_benchmark(cfg)
        print(os.path.join(cfg.out_dir, "dataset") if not cfg.dataset_dir else cfg.dataset_dir)
        return 0

    if args.command == "pretrain":
        bench = _load_bench(cfg)
        harness.stage_pretrain(cfg, bench)
        print(os.path.join(cfg.out_dir, "pretrained.ckpt"))
        return 0

    if args.command == "detect":
        bench = _load_bench(cfg)
        model = harness.load_pretrained(cfg.out_dir)
        det = harness.stage_detect(cfg, bench, model)
        harness.write_detect_summary(cfg.out_dir, det, cfg)
        print(os.path.join(cfg.out_dir, "scored.csv"))
        return 0

    if args.command == "label":
        bench = _load_bench(cfg)
        model = harness.load_pretrained(cfg.out_dir)
        det = harness.load_detect_outcome(cfg.out_dir, bench)
        harness.stage_label(cfg, bench, model, det)
        print(os.path.join(cfg.out_dir, "pseudolabels.csv"))
        return 0

    if args.command == "train":
        bench = _load_bench(cfg)
        model = harness.load_pretrained(cfg.out_dir)
        det = harness.load_detect_outcome(cfg.out_dir, bench)
        lab = harness.load_label_outcome(cfg.out_dir)
        harness.stage_train(cfg, bench, model, det, lab)
        print(os.path.join(cfg.out_dir, "train_trace.csv"))
        return 0

    if args.command == "run":
        report = harness.run_experiment(cfg)
        print(os.path.join(cfg.out_dir, "report.json"))
        return 0 if report else 1

    if args.command == "sweep":
        values = [float(v) for v in args.values.split(",")]
        rows = harness.run_sweep(cfg, args.axis, values)
        failed = [r for r in rows if r["error"]]
        for row in failed:
            print(f"value {row['value']:g} failed: {row['error']}", file=sys.stderr)
        print(os.path.join(cfg.out_dir, "sweep.csv"))
        return 1 if failed else 0

    raise ValueError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
