"""Watching the stars migrate during training.

The constellation starts as uniform noise in [-1, 1]^2 and is pulled
around by the gradients until the stars cover the regions where digit
strokes live. Snapshot CSVs record the positions at chosen epochs; if
matplotlib is available the script also renders the drift to an SVG.

Snapshots use the same CSV layout the ``ursa train --snapshot-dir``
command writes, so this doubles as a reader/writer example.
"""
from pathlib import Path

import numpy as np

from ursa import (
    LabeledCloudSet,
    Rng,
    TrainConfig,
    init_model,
    read_constellation_snapshot,
    train,
)

try:
    from sklearn.datasets import load_digits
except ImportError:
    raise SystemExit("this demo needs scikit-learn (pip install scikit-learn)")

POINTS = 64
OUTPUT = Path(__file__).parent / "output"
OUTPUT.mkdir(exist_ok=True)


def to_cloud(image, rng):
    rows, cols = np.nonzero(image > 8)
    pts = np.stack([cols / 3.5 - 1.0, 1.0 - rows / 3.5], axis=1)
    if len(pts) < POINTS:
        extra = rng.generator.integers(0, len(pts), size=POINTS - len(pts))
        pts = np.concatenate([pts, pts[extra]])
    return pts.astype(np.float32)


digits = load_digits()
rng = Rng(0)
clouds = np.stack([to_cloud(img, rng) for img in digits.images])
train_set = LabeledCloudSet(clouds=clouds[:1437], labels=digits.target[:1437],
                            class_count=10)

config = TrainConfig(measure="minimum", stars=64, epochs=30, seed=0,
                     snapshot_epochs=(0, 5, 15, 30))
model = init_model(Rng(0), config.stars, 2, 10, config.measure,
                   dropout_rate=config.dropout_rate)
print("training with snapshots at epochs", config.snapshot_epochs)
model, _report = train(model, train_set, None, config, snapshot_dir=OUTPUT)

snapshots = []
for epoch in config.snapshot_epochs:
    path = OUTPUT / f"constellation_epoch_{epoch:04d}.csv"
    snap_epoch, stars = read_constellation_snapshot(path)
    snapshots.append((snap_epoch, stars))
    print(f"epoch {snap_epoch:>3}: star spread "
          f"x [{stars[:, 0].min():+.2f}, {stars[:, 0].max():+.2f}] "
          f"y [{stars[:, 1].min():+.2f}, {stars[:, 1].max():+.2f}]")

start = snapshots[0][1]
for epoch, stars in snapshots[1:]:
    moved = np.linalg.norm(stars - start, axis=1).mean()
    print(f"mean displacement from initialization by epoch {epoch}: {moved:.3f}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping the SVG render")
else:
    fig, axes = plt.subplots(1, len(snapshots), figsize=(3 * len(snapshots), 3))
    for ax, (epoch, stars) in zip(axes, snapshots):
        ax.scatter(stars[:, 0], stars[:, 1], s=12)
        ax.set_title(f"epoch {epoch}")
        ax.set_xlim(-1.3, 1.3)
        ax.set_ylim(-1.3, 1.3)
        ax.set_aspect("equal")
    fig.tight_layout()
    out = OUTPUT / "star_migration.svg"
    fig.savefig(out)
    print(f"wrote {out}")
