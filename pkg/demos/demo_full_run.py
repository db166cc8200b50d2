#!/usr/bin/env python3
"""The whole pipeline in one call, plus a look inside the report."""

import json
import tempfile

from openset_ssl.augment import AugmentConfig
from openset_ssl.contrastive import ContrastiveConfig
from openset_ssl.data import BenchmarkSpec
from openset_ssl.detect import DetectionConfig
from openset_ssl.harness import ExperimentConfig, ModelShape, run_experiment
from openset_ssl.labeling import LabelingConfig
from openset_ssl.train import SSLConfig

out_dir = tempfile.mkdtemp(prefix="openset_run_")
config = ExperimentConfig(
    seed=0,
    out_dir=out_dir,
    benchmark=BenchmarkSpec(
        dim=16, in_classes=8, out_classes=8, separation=4.0,
        correlation_mode="related", total_unlabeled=1500, out_proportion=0.8,
        labels_per_class=25, test_per_class=125, seed=0,
    ),
    model=ModelShape(hidden_dims=(64, 64), embed_dim=64, proj_dim=32),
    contrastive=ContrastiveConfig(
        tau_con=0.5, batch_size=64, steps=700, lr=0.1,
        augment=AugmentConfig(noise_sigma=0.4, mask_fraction=0.0,
                              stream="pretrain.augment"),
    ),
    detection=DetectionConfig(eta=2.0),
    labeling=LabelingConfig(tau_sl=0.1, k_fraction=0.1, linear_eval_steps=300,
                            linear_eval_lr=0.5),
    ssl=SSLConfig(
        backend="consistency", beta=4.0, lam=0.5, batch_size=64, steps=400,
        lr=0.05, cosine_decay=True,
        augment=AugmentConfig(noise_sigma=0.8, mask_fraction=0.0,
                              stream="train.augment"),
    ),
    checkpoint_interval=64 * 20,
    checkpoint_count=20,
    median_last=5,
)

report = run_experiment(config)
print(f"artifacts in {out_dir}")
print(json.dumps(
    {
        "split_sizes": report["split_sizes"],
        "detection": report["detection"],
        "pseudo": report["pseudo"],
        "median_accuracy": report["median_accuracy"],
        "best_accuracy": report["best_accuracy"],
    },
    indent=2,
))
