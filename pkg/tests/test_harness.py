"""End-to-end runs: determinism, persistence fidelity, component lattice,
and sweeps.  Configs here are miniature so the suite stays fast."""

import json
from dataclasses import replace

import pytest

from openset_ssl.augment import AugmentConfig
from openset_ssl.contrastive import ContrastiveConfig
from openset_ssl.data import BenchmarkSpec
from openset_ssl.detect import DetectionConfig
from openset_ssl.harness import (
    ExperimentConfig,
    apply_axis,
    recompute_metrics,
    run_experiment,
    run_sweep,
    strip_timings,
)
from openset_ssl.labeling import LabelingConfig
from openset_ssl.train import SSLConfig


def micro_config(out_dir, **kw):
    cfg = ExperimentConfig(
        seed=0,
        out_dir=str(out_dir),
        benchmark=BenchmarkSpec(
            dim=6,
            in_classes=2,
            out_classes=2,
            separation=6.0,
            total_unlabeled=40,
            out_proportion=0.5,
            labels_per_class=4,
            test_per_class=6,
            seed=0,
        ),
        contrastive=ContrastiveConfig(
            steps=12,
            batch_size=8,
            lr=0.05,
            augment=AugmentConfig(noise_sigma=0.3, stream="pretrain.augment"),
        ),
        detection=DetectionConfig(eta=2.0),
        labeling=LabelingConfig(k_fraction=0.2, linear_eval_steps=40),
        ssl=SSLConfig(
            steps=10,
            batch_size=4,
            lr=0.05,
            augment=AugmentConfig(noise_sigma=0.3, stream="train.augment"),
        ),
        checkpoint_interval=8,
        checkpoint_count=5,
        median_last=3,
    )
    return replace(cfg, **kw) if kw else cfg


def canonical(report):
    return json.dumps(strip_timings(report), sort_keys=True)


class TestRunExperiment:
    def test_report_fields_and_artifacts(self, tmp_path):
        cfg = micro_config(tmp_path / "run")
        report = run_experiment(cfg)
        assert set(report["split_sizes"]) == {"in", "out"}
        assert report["detection"]["threshold"] is not None
        assert 0.0 <= report["detection"]["auroc"] <= 1.0
        assert report["median_accuracy"] is not None
        assert report["best_accuracy"] >= report["median_accuracy"] - 1e-12
        assert len(report["checkpoint_accuracies"]) == 5
        for name in (
            "dataset/labeled.csv",
            "pretrain_trace.csv",
            "pretrained.ckpt",
            "scored.csv",
            "scored_labeled.csv",
            "softlabels.csv",
            "pseudolabels.csv",
            "train_trace.csv",
            "final.ckpt",
            "report.json",
        ):
            assert (tmp_path / "run" / name).exists(), name

    def test_same_config_same_seed_byte_identical(self, tmp_path):
        cfg = micro_config(tmp_path / "run")
        first = canonical(run_experiment(cfg))
        second = canonical(run_experiment(cfg))
        assert first == second

    def test_different_seed_differs(self, tmp_path):
        a = run_experiment(micro_config(tmp_path / "a", seed=0))
        b = run_experiment(micro_config(tmp_path / "b", seed=1))
        assert a["checkpoint_accuracies"] != b["checkpoint_accuracies"] or (
            a["detection"]["threshold"] != b["detection"]["threshold"]
        )

    def test_zero_proportion_reports_no_detection_metrics(self, tmp_path):
        cfg = micro_config(tmp_path / "p0")
        cfg = replace(cfg, benchmark=replace(cfg.benchmark, out_proportion=0.0))
        report = run_experiment(cfg)
        assert report["detection"]["auroc"] is None
        assert report["split_sizes"]["in"] + report["split_sizes"]["out"] == 40

    def test_persistence_fidelity(self, tmp_path):
        cfg = micro_config(tmp_path / "run")
        report = run_experiment(cfg)
        redone = recompute_metrics(cfg.out_dir)
        det = report["detection"]
        assert redone["threshold"] == det["threshold"]
        assert redone["mu"] == det["mu"]
        assert redone["sigma"] == det["sigma"]
        assert redone["tpr"] == det["tpr"]
        assert redone["tnr"] == det["tnr"]
        assert redone["auroc"] == det["auroc"]
        assert redone["median_accuracy"] == report["median_accuracy"]
        assert redone["best_accuracy"] == report["best_accuracy"]
        assert redone["split_sizes"] == report["split_sizes"]

    def test_downstream_toggle_leaves_upstream_manifests_identical(self, tmp_path):
        with_pl = micro_config(tmp_path / "pl_on")
        without_pl = micro_config(tmp_path / "pl_off")
        without_pl = replace(without_pl, ssl=replace(without_pl.ssl, topk_pl=False))
        run_experiment(with_pl)
        run_experiment(without_pl)
        for name in ("scored.csv", "scored_labeled.csv", "softlabels.csv",
                     "pretrain_trace.csv", "dataset/unlabeled.csv"):
            a = (tmp_path / "pl_on" / name).read_bytes()
            b = (tmp_path / "pl_off" / name).read_bytes()
            assert a == b, name

    def test_toggles_off_reduces_to_plain_backend(self, tmp_path):
        plain_ssl = SSLConfig(
            steps=10, batch_size=4, lr=0.05,
            detect=False, aux_loss=False, aux_bn=False, topk_pl=False,
            augment=AugmentConfig(noise_sigma=0.3, stream="train.augment"),
        )
        cfg = micro_config(tmp_path / "off", ssl=plain_ssl)
        report = run_experiment(cfg)
        assert report["pseudo"]["count"] == 0
        trace = (tmp_path / "off" / "train_trace.csv").read_text().splitlines()
        for line in trace[1:]:
            assert line.split(",")[3] == "0"  # no auxiliary term anywhere

    def test_config_echo_is_byte_equal(self, tmp_path):
        text = json.dumps({"seed": 3})
        cfg = micro_config(tmp_path / "echo", raw_text=text)
        report = run_experiment(cfg)
        assert report["config_text"] == text


class TestSweep:
    def test_single_value_equals_run_experiment(self, tmp_path):
        cfg = micro_config(tmp_path / "sweep")
        rows = run_sweep(cfg, "lambda", [0.5])
        assert len(rows) == 1
        solo = run_experiment(
            replace(apply_axis(cfg, "lambda", 0.5), out_dir=str(tmp_path / "solo"))
        )
        assert rows[0]["report"]["median_accuracy"] == solo["median_accuracy"]
        assert rows[0]["report"]["checkpoint_accuracies"] == solo["checkpoint_accuracies"]

    def test_errors_recorded_and_sweep_continues(self, tmp_path):
        cfg = micro_config(tmp_path / "sweep_err")
        cfg = replace(cfg, benchmark=replace(cfg.benchmark, out_classes=0))
        rows = run_sweep(cfg, "proportion", [0.5, 0.0])
        assert rows[0]["error"] is not None and rows[0]["report"] is None
        assert rows[1]["error"] is None and rows[1]["report"] is not None
        table = (tmp_path / "sweep_err" / "sweep.csv").read_text()
        assert "out-class" in table

    def test_eta_sweep_monotone_rates(self, tmp_path):
        # raising eta lowers t = mu - eta*sigma, so fewer samples fall
        # below it: tpr can only drop, tnr can only rise
        cfg = micro_config(tmp_path / "etas")
        rows = run_sweep(cfg, "eta", [1.0, 2.0, 3.0, 4.0])
        tprs = [r["report"]["detection"]["tpr"] for r in rows]
        tnrs = [r["report"]["detection"]["tnr"] for r in rows]
        assert all(a >= b - 1e-15 for a, b in zip(tprs, tprs[1:]))
        assert all(a <= b + 1e-15 for a, b in zip(tnrs, tnrs[1:]))
        assert tprs[0] >= tprs[-1]

    def test_proportion_axis_regenerates_mixture(self, tmp_path):
        cfg = micro_config(tmp_path / "props")
        rows = run_sweep(cfg, "proportion", [0.0, 0.5])
        assert rows[0]["report"]["split_sizes"]["in"] + rows[0]["report"][
            "split_sizes"
        ]["out"] == 40
        assert rows[0]["report"]["detection"]["auroc"] is None
        assert rows[1]["report"]["detection"]["auroc"] is not None

    def test_unknown_axis_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            apply_axis(micro_config(tmp_path), "nope", 1.0)

    def test_empty_values_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            run_sweep(micro_config(tmp_path / "x"), "eta", [])


class TestConfigRoundtrip:
    def test_to_from_dict(self, tmp_path):
        cfg = micro_config(tmp_path / "rt")
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_lambda_key_maps_to_lam(self):
        d = ExperimentConfig().to_dict()
        d["ssl"]["lambda"] = 0.25
        cfg = ExperimentConfig.from_dict(d)
        assert cfg.ssl.lam == 0.25
