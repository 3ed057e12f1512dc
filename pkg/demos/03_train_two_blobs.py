"""The smallest complete training run.

Two classes of point clouds, one scattered around (-0.5, -0.5) and one
around (+0.5, +0.5), are about the easiest problem the network can face.
Watching it train end to end shows the moving parts working together:
minibatch shuffling, the constellation forward/backward, batch norm,
dropout, and the Adam update. The stars drift from their random start
toward where the data lives.
"""
import numpy as np

from ursa import (
    AugmentConfig,
    LabeledCloudSet,
    Rng,
    TrainConfig,
    evaluate,
    init_model,
    train,
)


def blob_set(seed, samples_per_class=20):
    rng = Rng(seed)
    centers = np.array([[-0.5, -0.5], [0.5, 0.5]])
    clouds = np.empty((2 * samples_per_class, 32, 2), dtype=np.float32)
    labels = np.empty(2 * samples_per_class, dtype=np.int64)
    for i in range(len(labels)):
        labels[i] = i % 2
        clouds[i] = centers[i % 2] + 0.15 * rng.generator.standard_normal((32, 2))
    clouds /= np.linalg.norm(clouds, axis=2).max() * 1.0001
    return LabeledCloudSet(clouds=clouds, labels=labels, class_count=2)


train_set = blob_set(0)
test_set = blob_set(1, samples_per_class=8)

config = TrainConfig(measure="gaussian", stars=8, sigma=0.3, batch_size=8,
                     epochs=15, seed=0, hidden=(16, 8), learning_rate=0.01,
                     augment=AugmentConfig(enabled=False), snapshot_epochs=())
model = init_model(Rng(99), config.stars, 2, 2, config.measure, sigma=config.sigma,
                   hidden=config.hidden, dropout_rate=config.dropout_rate)
start = model.constellation.stars.copy()

model, report = train(model, train_set, test_set, config,
                      progress=lambda r: print(
                          f"epoch {r.epoch[-1]:>2}  loss {r.train_loss[-1]:.4f}  "
                          f"train acc {r.train_acc[-1]:.3f}  "
                          f"test acc {r.test_acc[-1]:.3f}"))

print(f"\nfinal train-set accuracy: {evaluate(model, train_set):.3f}")
moved = np.linalg.norm(model.constellation.stars - start, axis=1)
print(f"mean star displacement since initialization: {moved.mean():.3f}")
print("star positions after training:")
print(np.round(model.constellation.stars, 3))
