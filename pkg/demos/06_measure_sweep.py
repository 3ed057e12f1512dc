"""Sweeping star counts across all three measures with the CLI.

The ``ursa sweep`` command trains a fresh model for every (measure, star
count, run) cell and reports mean and standard deviation of the test
accuracy per cell. This script generates a synthetic 8-class shape
dataset, writes it in the binary cloud-archive format, and drives the
command exactly as a shell user would; set URSA_THREADS to parallelize
across cells.
"""
import tempfile
from pathlib import Path

from ursa import Rng, make_synthetic_dataset, save_cloud_archive
from ursa.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    train_set, test_set = make_synthetic_dataset(
        Rng(3), class_count=8, train_per_class=12, test_per_class=4,
        points=256, dim=3)
    save_cloud_archive(tmp / "train.ursa", train_set)
    save_cloud_archive(tmp / "test.ursa", test_set)
    print(f"archived {train_set.count} training / {test_set.count} test clouds\n")

    code = main([
        "sweep", str(tmp / "train.ursa"), str(tmp / "test.ursa"),
        "--m-list", "8,32", "--runs", "2", "--epochs", "4",
        "--batch", "16", "--seed", "0", "--out", str(tmp / "sweep.csv"),
    ])
    print(f"\nsweep exit code: {code}")
