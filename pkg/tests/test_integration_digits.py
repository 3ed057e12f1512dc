"""End-to-end learning on a real dataset that ships with scikit-learn.

The 8x8 handwritten digits are converted to point clouds the same way
larger images would be (threshold, map to [-1, 1]^2, pad by repetition),
then classified by the constellation network. This exercises the whole
training stack on real data even where the larger MNIST files are not
available.
"""
import numpy as np
import pytest

from ursa import LabeledCloudSet, Rng, TrainConfig, init_model, train

sklearn_datasets = pytest.importorskip("sklearn.datasets")

POINTS = 64
BRIGHT = 8  # pixel values run 0..16 here


def digit_cloud(image, rng):
    rows, cols = np.nonzero(image > BRIGHT)
    pts = np.stack([cols / 3.5 - 1.0, 1.0 - rows / 3.5], axis=1)
    if len(pts) < POINTS:
        extra = rng.generator.integers(0, len(pts), size=POINTS - len(pts))
        pts = np.concatenate([pts, pts[extra]])
    return pts.astype(np.float32)


@pytest.fixture(scope="module")
def digit_sets():
    digits = sklearn_datasets.load_digits()
    rng = Rng(0)
    clouds = np.stack([digit_cloud(img, rng) for img in digits.images])
    split = 1437
    train_set = LabeledCloudSet(clouds=clouds[:split], labels=digits.target[:split],
                                class_count=10)
    test_set = LabeledCloudSet(clouds=clouds[split:], labels=digits.target[split:],
                               class_count=10, split="test")
    return train_set, test_set


def test_gaussian_classifier_learns_real_digits(digit_sets):
    train_set, test_set = digit_sets
    config = TrainConfig(measure="gaussian", stars=64, sigma=0.3, epochs=12,
                         seed=0, hidden=(128, 64))
    model = init_model(Rng(0), 64, 2, 10, "gaussian", sigma=0.3, hidden=(128, 64))
    model, report = train(model, train_set, test_set, config)
    assert report.test_acc[-1] >= 0.75, report.test_acc
    print(f"digits gaussian test accuracy: {report.test_acc[-1]:.4f}")


@pytest.mark.parametrize("measure", ["gaussian", "exponential", "minimum"])
def test_every_measure_beats_chance_quickly(digit_sets, measure):
    train_set, test_set = digit_sets
    config = TrainConfig(measure=measure, stars=64, sigma=0.3, epochs=6,
                         seed=1, hidden=(128, 64))
    model = init_model(Rng(1), 64, 2, 10, measure, sigma=0.3, hidden=(128, 64))
    model, report = train(model, train_set, test_set, config)
    assert report.test_acc[-1] >= 0.6, (measure, report.test_acc)
