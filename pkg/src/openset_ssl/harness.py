"""End-to-end experiment orchestration and sweeps.

A run executes: contrastive pretraining on the pooled features, prototype
construction, scoring/threshold/split of the unlabeled pool, soft- and
pseudo-label assignment, class-balancing oversampling, and open-set
fine-tuning with checkpointed test accuracy.  Every stage persists its
manifest under the run directory, and all randomness derives from the one
master seed, so identical configs reproduce byte-identical reports
(timings aside) and flipping a downstream component cannot move an
upstream artifact.
"""

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig
from .contrastive import ContrastiveConfig, pretrain
from .data import BenchmarkSpec, read_benchmark, write_benchmark
from .detect import (
    DetectionConfig,
    compute_prototypes,
    compute_threshold,
    score_samples,
    split_unlabeled,
    write_scored_manifest,
)
from .labeling import (
    LabelingConfig,
    oversample,
    select_topk,
    train_linear_eval,
    write_pseudo_label_manifest,
    write_soft_label_manifest,
    soft_label,
)
from .metrics import auroc, median_last_n, tpr_tnr
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .train import SSLConfig, init_train_state, one_hot, train

SWEEP_AXES = ("proportion", "tau_sl", "lambda", "k_fraction", "eta")


@dataclass(frozen=True)
class ModelShape:
    """Model hyperparameters that do not depend on the dataset."""

    hidden_dims: tuple = (64,)
    embed_dim: int = 32
    proj_dim: int = 16
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    def resolve(self, input_dim, num_classes):
        return ModelConfig(
            input_dim=input_dim,
            hidden_dims=tuple(self.hidden_dims),
            embed_dim=self.embed_dim,
            proj_dim=self.proj_dim,
            num_classes=num_classes,
            bn_epsilon=self.bn_epsilon,
            bn_momentum=self.bn_momentum,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "run"
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    dataset_dir: str = None  # overrides `benchmark` when set
    model: ModelShape = field(default_factory=ModelShape)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    checkpoint_interval: int = 1280  # in labeled training samples
    checkpoint_count: int = 20
    median_last: int = 5
    raw_text: str = None  # exact config file text, echoed into the report

    def resolved_steps(self):
        if self.ssl.steps is not None:
            return self.ssl.steps
        return math.ceil(
            self.checkpoint_interval * self.checkpoint_count / self.ssl.batch_size
        )

    def to_dict(self):
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "benchmark": self.benchmark.to_dict() if self.benchmark else None,
            "dataset_dir": self.dataset_dir,
            "model": {
                "hidden_dims": list(self.model.hidden_dims),
                "embed_dim": self.model.embed_dim,
                "proj_dim": self.model.proj_dim,
                "bn_epsilon": self.model.bn_epsilon,
                "bn_momentum": self.model.bn_momentum,
            },
            "contrastive": {
                "tau_con": self.contrastive.tau_con,
                "batch_size": self.contrastive.batch_size,
                "steps": self.contrastive.steps,
                "lr": self.contrastive.lr,
                "momentum": self.contrastive.momentum,
                "cosine_decay": self.contrastive.cosine_decay,
                "augment": _augment_dict(self.contrastive.augment),
            },
            "detection": {
                "eta": self.detection.eta,
                "explicit_threshold": self.detection.explicit_threshold,
            },
            "labeling": {
                "tau_sl": self.labeling.tau_sl,
                "k_fraction": self.labeling.k_fraction,
                "linear_eval_steps": self.labeling.linear_eval_steps,
                "linear_eval_lr": self.labeling.linear_eval_lr,
            },
            "ssl": {
                "backend": self.ssl.backend,
                "beta": self.ssl.beta,
                "lambda": self.ssl.lam,
                "batch_size": self.ssl.batch_size,
                "steps": self.ssl.steps,
                "lr": self.ssl.lr,
                "momentum": self.ssl.momentum,
                "cosine_decay": self.ssl.cosine_decay,
                "confidence_threshold": self.ssl.confidence_threshold,
                "detect": self.ssl.detect,
                "aux_loss": self.ssl.aux_loss,
                "aux_bn": self.ssl.aux_bn,
                "topk_pl": self.ssl.topk_pl,
                "augment": _augment_dict(self.ssl.augment),
            },
            "checkpoint_interval": self.checkpoint_interval,
            "checkpoint_count": self.checkpoint_count,
            "median_last": self.median_last,
        }

    @classmethod
    def from_dict(cls, d, raw_text=None):
        d = dict(d)
        bench = d.get("benchmark")
        model = d.get("model", {})
        con = dict(d.get("contrastive", {}))
        det = d.get("detection", {})
        lab = d.get("labeling", {})
        ssl = dict(d.get("ssl", {}))
        if "lambda" in ssl:
            ssl["lam"] = ssl.pop("lambda")
        con_aug = con.pop("augment", None)
        ssl_aug = ssl.pop("augment", None)
        return cls(
            seed=d.get("seed", 0),
            out_dir=d.get("out_dir", "run"),
            benchmark=BenchmarkSpec.from_dict(bench) if bench else BenchmarkSpec(),
            dataset_dir=d.get("dataset_dir"),
            model=ModelShape(
                hidden_dims=tuple(model.get("hidden_dims", (64,))),
                embed_dim=model.get("embed_dim", 32),
                proj_dim=model.get("proj_dim", 16),
                bn_epsilon=model.get("bn_epsilon", 1e-5),
                bn_momentum=model.get("bn_momentum", 0.1),
            ),
            contrastive=ContrastiveConfig(
                augment=_augment_from(con_aug, "pretrain.augment"), **con
            ),
            detection=DetectionConfig(**det),
            labeling=LabelingConfig(**lab),
            ssl=SSLConfig(augment=_augment_from(ssl_aug, "train.augment"), **ssl),
            checkpoint_interval=d.get("checkpoint_interval", 1280),
            checkpoint_count=d.get("checkpoint_count", 20),
            median_last=d.get("median_last", 5),
            raw_text=raw_text,
        )


def _augment_dict(aug):
    if aug is None:
        return None
    return {
        "noise_sigma": aug.noise_sigma,
        "jitter_range": list(aug.jitter_range),
        "mask_fraction": aug.mask_fraction,
        "stream": aug.stream,
    }


def _augment_from(d, default_stream):
    if d is None:
        return AugmentConfig(stream=default_stream)
    d = dict(d)
    d.setdefault("stream", default_stream)
    if "jitter_range" in d:
        d["jitter_range"] = tuple(d["jitter_range"])
    return AugmentConfig(**d)


def default_config(**overrides):
    """A fully wired config with distinct augment streams per stage."""
    cfg = ExperimentConfig(
        contrastive=ContrastiveConfig(augment=AugmentConfig(stream="pretrain.augment")),
        ssl=SSLConfig(augment=AugmentConfig(stream="train.augment")),
    )
    return replace(cfg, **overrides) if overrides else cfg


Report = dict


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------


def prepare_benchmark(config):
    """Generate (and persist) the benchmark, or read an existing one."""
    if config.dataset_dir:
        return read_benchmark(config.dataset_dir)
    from .data import generate

    bench = generate(replace(config.benchmark, seed=config.seed))
    write_benchmark(os.path.join(config.out_dir, "dataset"), bench)
    return bench


def stage_pretrain(config, bench):
    model_cfg = config.model.resolve(bench.spec.dim, bench.spec.in_classes)
    model = build_model(model_cfg, config.seed)
    pool_x = np.concatenate([bench.labeled.x, bench.unlabeled.x])
    pool_ids = np.concatenate([bench.labeled.ids, bench.unlabeled.ids])
    model, _ = pretrain(
        model,
        pool_x,
        pool_ids,
        config.contrastive,
        config.seed,
        trace_path=os.path.join(config.out_dir, "pretrain_trace.csv"),
    )
    save_checkpoint(os.path.join(config.out_dir, "pretrained.ckpt"), model)
    return model


@dataclass
class DetectOutcome:
    threshold: float
    mu: float
    sigma: float
    scored: list
    labeled_scored: list
    in_set: list
    out_set: list
    metrics: dict  # tpr/tnr/auroc vs hidden truth, or None at p = 0


def stage_detect(config, bench, model):
    protos = compute_prototypes(bench.labeled.x, bench.labeled.label, model)
    labeled_scored = score_samples(bench.labeled.ids, bench.labeled.x, protos, model)
    threshold, mu, sigma = compute_threshold(
        [s.score for s in labeled_scored], config.detection
    )
    scored = score_samples(bench.unlabeled.ids, bench.unlabeled.x, protos, model)
    write_scored_manifest(os.path.join(config.out_dir, "scored.csv"), scored, threshold)
    write_scored_manifest(
        os.path.join(config.out_dir, "scored_labeled.csv"), labeled_scored, threshold
    )
    in_set, out_set = split_unlabeled(scored, threshold)

    metrics = None
    is_out = bench.unlabeled.origin == "out"
    if is_out.any() and (~is_out).any():
        scores = np.array([s.score for s in scored])
        metrics = tpr_tnr(scores, is_out, threshold)
        metrics["auroc"] = auroc(scores, is_out)
    return DetectOutcome(
        threshold=threshold,
        mu=mu,
        sigma=sigma,
        scored=scored,
        labeled_scored=labeled_scored,
        in_set=in_set,
        out_set=out_set,
        metrics=metrics,
    )


@dataclass
class LabelOutcome:
    soft_ids: list
    soft_q: list
    pseudo: list
    pseudo_accuracy: float


def stage_label(config, bench, model, det):
    id_to_row = {int(i): r for r, i in enumerate(bench.unlabeled.ids)}

    soft_ids = [s.sample_id for s in det.out_set]
    soft_q = [soft_label(s.sims, config.labeling.tau_sl) for s in det.out_set]
    write_soft_label_manifest(
        os.path.join(config.out_dir, "softlabels.csv"), soft_ids, soft_q
    )

    pseudo, pseudo_acc = [], None
    if config.ssl.topk_pl and det.in_set:
        head = train_linear_eval(
            model,
            bench.labeled.x,
            bench.labeled.label,
            config.labeling,
            config.seed,
        )
        in_ids = [s.sample_id for s in det.in_set]
        in_x = bench.unlabeled.x[[id_to_row[i] for i in in_ids]]
        pseudo = select_topk(in_ids, in_x, head, model, config.labeling.k_fraction)
        if pseudo:
            truth = bench.unlabeled.truth
            hits = [
                truth[id_to_row[p.sample_id]] == p.assigned_class for p in pseudo
            ]
            pseudo_acc = float(np.mean(hits))
    write_pseudo_label_manifest(os.path.join(config.out_dir, "pseudolabels.csv"), pseudo)
    return LabelOutcome(
        soft_ids=soft_ids, soft_q=soft_q, pseudo=pseudo, pseudo_accuracy=pseudo_acc
    )


def stage_train(config, bench, model, det, lab):
    num_classes = bench.spec.in_classes
    id_to_row = {int(i): r for r, i in enumerate(bench.unlabeled.ids)}

    ids = list(map(int, bench.labeled.ids))
    feats = {i: bench.labeled.x[r] for r, i in enumerate(ids)}
    labels = {i: int(bench.labeled.label[r]) for r, i in enumerate(ids)}
    if config.ssl.topk_pl:
        for p in lab.pseudo:
            ids.append(p.sample_id)
            feats[p.sample_id] = bench.unlabeled.x[id_to_row[p.sample_id]]
            labels[p.sample_id] = p.assigned_class
    balanced = oversample(ids, [labels[i] for i in ids])
    labeled_x = np.stack([feats[i] for i in balanced])
    labeled_q = one_hot([labels[i] for i in balanced], num_classes)

    if config.ssl.detect:
        in_ids = [s.sample_id for s in det.in_set]
        out_ids = [s.sample_id for s in det.out_set]
    else:
        in_ids = list(map(int, bench.unlabeled.ids))
        out_ids = []
    in_x = bench.unlabeled.x[[id_to_row[i] for i in in_ids]] if in_ids else np.empty(
        (0, bench.spec.dim)
    )
    out_x = bench.unlabeled.x[[id_to_row[i] for i in out_ids]] if out_ids else np.empty(
        (0, bench.spec.dim)
    )
    out_q = np.stack(lab.soft_q) if (out_ids and lab.soft_q) else np.empty(
        (0, num_classes)
    )

    ckpt_dir = os.path.join(config.out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    ssl_cfg = replace(config.ssl, steps=config.resolved_steps())
    state = init_train_state(model, ssl_cfg)
    state = train(
        state,
        labeled_x,
        labeled_q,
        in_ids,
        in_x,
        out_ids,
        out_x,
        out_q,
        ssl_cfg,
        config.seed,
        test_x=bench.test.x,
        test_y=bench.test.label,
        checkpoint_interval=config.checkpoint_interval,
        checkpoint_dir=ckpt_dir,
        trace_path=os.path.join(config.out_dir, "train_trace.csv"),
    )
    save_checkpoint(os.path.join(config.out_dir, "final.ckpt"), model)
    return state


def run_experiment(config):
    """Full pipeline; returns the report dict (also written to report.json)."""
    os.makedirs(config.out_dir, exist_ok=True)
    timings = {}

    def timed(name, fn, *args):
        start = time.perf_counter()
        try:
            result = fn(*args)
        except Exception as exc:
            raise RuntimeError(f"stage {name!r} failed: {exc}") from exc
        timings[name] = time.perf_counter() - start
        return result

    bench = timed("generate", prepare_benchmark, config)
    model = timed("pretrain", stage_pretrain, config, bench)
    det = timed("detect", stage_detect, config, bench, model)
    lab = timed("label", stage_label, config, bench, model, det)
    state = timed("train", stage_train, config, bench, model, det, lab)

    accs = state.checkpoint_accuracies
    report = {
        "config": config.to_dict(),
        "config_text": config.raw_text
        if config.raw_text is not None
        else json.dumps(config.to_dict(), sort_keys=True),
        "split_sizes": {"in": len(det.in_set), "out": len(det.out_set)},
        "detection": {
            "mu": det.mu,
            "sigma": det.sigma,
            "eta": config.detection.eta,
            "threshold": det.threshold,
            "tpr": det.metrics["tpr"] if det.metrics else None,
            "tnr": det.metrics["tnr"] if det.metrics else None,
            "auroc": det.metrics["auroc"] if det.metrics else None,
        },
        "pseudo": {
            "count": len(lab.pseudo),
            "accuracy": lab.pseudo_accuracy,
        },
        "soft_label_count": len(lab.soft_ids),
        "checkpoint_accuracies": accs,
        "median_accuracy": median_last_n(accs, min(config.median_last, len(accs)))
        if accs
        else None,
        "best_accuracy": max(accs) if accs else None,
        "timings": timings,
    }
    write_report(os.path.join(config.out_dir, "report.json"), report)
    return report


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


def strip_timings(report):
    """Copy of a report without wall-clock noise, for byte comparisons."""
    out = dict(report)
    out.pop("timings", None)
    return out


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------


def apply_axis(config, axis, value):
    if axis == "proportion":
        return replace(config, benchmark=replace(config.benchmark, out_proportion=float(value)))
    if axis == "tau_sl":
        return replace(config, labeling=replace(config.labeling, tau_sl=float(value)))
    if axis == "lambda":
        return replace(config, ssl=replace(config.ssl, lam=float(value)))
    if axis == "k_fraction":
        return replace(config, labeling=replace(config.labeling, k_fraction=float(value)))
    if axis == "eta":
        return replace(config, detection=replace(config.detection, eta=float(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(config, axis, values):
    """One experiment per axis value, same master seed throughout.

    Per-run failures are recorded in the table and the sweep continues.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    os.makedirs(config.out_dir, exist_ok=True)
    rows = []
    for value in values:
        sub = apply_axis(config, axis, value)
        sub = replace(
            sub, out_dir=os.path.join(config.out_dir, f"{axis}_{value:g}"), raw_text=None
        )
        row = {"axis": axis, "value": value, "error": None, "report": None}
        try:
            row["report"] = run_experiment(sub)
        except Exception as exc:
            row["error"] = str(exc)
        rows.append(row)
    write_sweep_table(os.path.join(config.out_dir, "sweep.csv"), rows)
    return rows


def write_sweep_table(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "axis",
                "value",
                "median_accuracy",
                "best_accuracy",
                "auroc",
                "tpr",
                "tnr",
                "threshold",
                "in_count",
                "out_count",
                "error",
            ]
        )
        for row in rows:
            rep = row["report"]
            if rep is None:
                writer.writerow([row["axis"], f"{row['value']:g}"] + [""] * 8 + [row["error"]])
                continue
            det = rep["detection"]
            writer.writerow(
                [
                    row["axis"],
                    f"{row['value']:g}",
                    _fmt(rep["median_accuracy"]),
                    _fmt(rep["best_accuracy"]),
                    _fmt(det["auroc"]),
                    _fmt(det["tpr"]),
                    _fmt(det["tnr"]),
                    _fmt(det["threshold"]),
                    rep["split_sizes"]["in"],
                    rep["split_sizes"]["out"],
                    "",
                ]
            )


def _fmt(value):
    return "" if value is None else f"{value:.17g}"


def write_curve_csv(path, rows):
    """Plot-ready accuracy-vs-axis curve from sweep rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "median_accuracy", "best_accuracy"])
        for row in rows:
            rep = row["report"]
            if rep is not None:
                writer.writerow(
                    [
                        f"{row['value']:g}",
                        _fmt(rep["median_accuracy"]),
                        _fmt(rep["best_accuracy"]),
                    ]
                )


# ----------------------------------------------------------------------
# metric recomputation from persisted manifests
# ----------------------------------------------------------------------


def _trace_accuracies(out_dir):
    path = os.path.join(out_dir, "train_trace.csv")
    if not os.path.exists(path):
        return []
    accs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["test_accuracy"]:
                accs.append(float(row["test_accuracy"]))
    return accs


def recompute_metrics(out_dir, dataset_dir=None, median_last=None):
    """Rebuild the detection and accuracy metrics from what a run left on
    disk; byte-equal to the in-run values when nothing was touched.

    Works from report.json after a full run, or from detect.json plus the
    training trace after the stage-by-stage pipeline.
    """
    from .detect import read_scored_manifest

    report_path = os.path.join(out_dir, "report.json")
    report = read_report(report_path) if os.path.exists(report_path) else None
    if report is not None:
        eta = report["detection"]["eta"]
        explicit = report["config"]["detection"]["explicit_threshold"]
        data_dir = dataset_dir or report["config"].get("dataset_dir") or os.path.join(
            out_dir, "dataset"
        )
        accs = report["checkpoint_accuracies"]
        median_n = median_last or report["config"]["median_last"]
    else:
        with open(os.path.join(out_dir, "detect.json")) as fh:
            summary = json.load(fh)
        eta = summary["eta"]
        explicit = summary.get("explicit_threshold")
        data_dir = dataset_dir or os.path.join(out_dir, "dataset")
        accs = _trace_accuracies(out_dir)
        median_n = median_last or 5
    bench = read_benchmark(data_dir)

    labeled_scored, _ = read_scored_manifest(os.path.join(out_dir, "scored_labeled.csv"))
    det_cfg = DetectionConfig(eta=eta, explicit_threshold=explicit)
    threshold, mu, sigma = compute_threshold(
        [s.score for s in labeled_scored], det_cfg
    )

    scored, splits = read_scored_manifest(os.path.join(out_dir, "scored.csv"))
    truth_out = {int(i): o == "out" for i, o in zip(bench.unlabeled.ids, bench.unlabeled.origin)}
    scores = np.array([s.score for s in scored])
    is_out = np.array([truth_out[s.sample_id] for s in scored])
    result = {
        "threshold": threshold,
        "mu": mu,
        "sigma": sigma,
        "tpr": None,
        "tnr": None,
        "auroc": None,
        "split_sizes": {
            "in": sum(1 for v in splits.values() if v == "in"),
            "out": sum(1 for v in splits.values() if v == "out"),
        },
    }
    if is_out.any() and (~is_out).any():
        rates = tpr_tnr(scores, is_out, threshold)
        result.update(rates)
        result["auroc"] = auroc(scores, is_out)
    result["median_accuracy"] = (
        median_last_n(accs, min(median_n, len(accs))) if accs else None
    )
    result["best_accuracy"] = max(accs) if accs else None
    return result


def load_pretrained(out_dir):
    return load_checkpoint(os.path.join(out_dir, "pretrained.ckpt"))


def load_detect_outcome(out_dir, bench):
    """Rebuild a DetectOutcome from the scored manifests and detect.json."""
    from .detect import read_scored_manifest

    with open(os.path.join(out_dir, "detect.json")) as fh:
        summary = json.load(fh)
    scored, _ = read_scored_manifest(os.path.join(out_dir, "scored.csv"))
    labeled_scored, _ = read_scored_manifest(
        os.path.join(out_dir, "scored_labeled.csv")
    )
    threshold = summary["threshold"]
    in_set, out_set = split_unlabeled(scored, threshold)
    return DetectOutcome(
        threshold=threshold,
        mu=summary["mu"],
        sigma=summary["sigma"],
        scored=scored,
        labeled_scored=labeled_scored,
        in_set=in_set,
        out_set=out_set,
        metrics=summary.get("metrics"),
    )


def write_detect_summary(out_dir, det, config):
    with open(os.path.join(out_dir, "detect.json"), "w") as fh:
        json.dump(
            {
                "threshold": det.threshold,
                "mu": det.mu,
                "sigma": det.sigma,
                "eta": config.detection.eta,
                "explicit_threshold": config.detection.explicit_threshold,
                "in_count": len(det.in_set),
                "out_count": len(det.out_set),
                "metrics": det.metrics,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def load_label_outcome(out_dir):
    """Rebuild a LabelOutcome from the label manifests."""
    from .labeling import read_pseudo_label_manifest, read_soft_label_manifest

    soft_ids, soft_q = read_soft_label_manifest(os.path.join(out_dir, "softlabels.csv"))
    pseudo = read_pseudo_label_manifest(os.path.join(out_dir, "pseudolabels.csv"))
    return LabelOutcome(
        soft_ids=soft_ids, soft_q=soft_q, pseudo=pseudo, pseudo_accuracy=None
    )


def collect_sweep_rows(sweep_dir):
    """Recover sweep rows (with reports) from a sweep output directory."""
    rows = []
    with open(os.path.join(sweep_dir, "sweep.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        for entry in reader:
            axis, value = entry["axis"], float(entry["value"])
            run_dir = os.path.join(sweep_dir, f"{axis}_{value:g}")
            report = None
            path = os.path.join(run_dir, "report.json")
            if os.path.exists(path):
                report = read_report(path)
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "error": entry["error"] or None,
                    "report": report,
                }
            )
    return rows
