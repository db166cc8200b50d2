#!/usr/bin/env python3
"""Accuracy as the out-of-class fraction grows: plain SSL vs the full
pipeline at the worst mixture.

The plain backend leans on all unlabeled data, so novel-class samples
poison its consistency targets; detection plus soft/pseudo-labeling
recovers most of the lost accuracy.  This is the proportion-sweep
protocol at demo scale (one seed).
"""

import tempfile
from dataclasses import replace

from openset_ssl.augment import AugmentConfig
from openset_ssl.contrastive import ContrastiveConfig
from openset_ssl.data import BenchmarkSpec
from openset_ssl.detect import DetectionConfig
from openset_ssl.harness import ExperimentConfig, ModelShape, run_experiment
from openset_ssl.labeling import LabelingConfig
from openset_ssl.train import SSLConfig

base = ExperimentConfig(
    seed=0,
    out_dir="unused",
    benchmark=BenchmarkSpec(
        dim=16, in_classes=8, out_classes=8, separation=4.0,
        correlation_mode="related", total_unlabeled=1500, out_proportion=0.0,
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
        detect=False, aux_loss=False, aux_bn=False, topk_pl=False,
        augment=AugmentConfig(noise_sigma=0.8, mask_fraction=0.0,
                              stream="train.augment"),
    ),
    checkpoint_interval=64 * 20,
    checkpoint_count=20,
    median_last=5,
)

root = tempfile.mkdtemp(prefix="openset_sweep_")
print("proportion  plain-SSL accuracy")
for p in (0.0, 0.4, 0.8):
    cfg = replace(
        base,
        out_dir=f"{root}/plain_p{p}",
        benchmark=replace(base.benchmark, out_proportion=p),
    )
    report = run_experiment(cfg)
    print(f"   {p:.1f}       {report['median_accuracy']:.3f}")

full = replace(
    base,
    out_dir=f"{root}/full_p0.8",
    benchmark=replace(base.benchmark, out_proportion=0.8),
    ssl=replace(base.ssl, detect=True, aux_loss=True, aux_bn=True, topk_pl=True),
)
report = run_experiment(full)
print(f"   0.8       {report['median_accuracy']:.3f}   <- full pipeline "
      f"(detect + soft-labels + aux BN + pseudo-labels)")
