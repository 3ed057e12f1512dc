"""End-to-end acceptance suite.

Each test prints one ``ACCEPTANCE`` line on success (run with ``-s`` or
``-rA`` to see them); the MNIST-backed checks skip with instructions when
the IDX files cannot be found or fetched (see ``conftest.py``).
"""
import time

import numpy as np
import pytest

from ursa import (
    Constellation,
    Rng,
    TrainConfig,
    evaluate,
    forward,
    gradient_check,
    init_model,
    load_cloud_archive,
    load_idx,
    make_synthetic_dataset,
    parameter_count,
    read_constellation_snapshot,
    save_cloud_archive,
    summary,
    train,
)
from ursa.data import BRIGHTNESS_THRESHOLD, CLOUD_POINTS, convert_images
from ursa.training import make_gradcheck_model

MEASURES = ("gaussian", "exponential", "minimum")


# ---------------------------------------------------------------------------
# 1. analytic gradients of the full network match finite differences
# ---------------------------------------------------------------------------

def test_1_full_model_gradients_match_finite_differences():
    started = time.perf_counter()
    gen = np.random.default_rng(1001)
    checked = 0
    excluded = 0
    worst = 0.0
    for measure in MEASURES:
        for _ in range(100):
            n = int(gen.integers(1, 9))
            m = int(gen.integers(1, 5))
            d = int(gen.choice([2, 3]))
            # moderate widths keep gradients inside the range where a
            # central difference carries information
            sigma = float(gen.uniform(0.3, 1.0))
            lam = float(gen.uniform(1.0, 4.0))
            model = make_gradcheck_model(Rng(int(gen.integers(1 << 62))), measure,
                                         star_count=m, dim=d, class_count=3,
                                         hidden=(6, 5), sigma=sigma, lam=lam)
            cloud = gen.uniform(-1, 1, size=(n, d))
            label = int(gen.integers(0, 3))
            report = gradient_check(model, cloud, label, tolerance=1e-4, step=1e-5)
            assert report.passed, f"{measure}: {report.format()}"
            checked += 1
            excluded += report.excluded_total
            worst = max(worst, max(b.max_rel_err for b in report.blocks))
    elapsed = time.perf_counter() - started
    assert elapsed < 120
    print(f"ACCEPTANCE 1 gradient-correctness: PASS "
          f"({checked} instances, worst rel err {worst:.2e}, "
          f"{excluded} coords excluded, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2. output is invariant to the ordering of the input points
# ---------------------------------------------------------------------------

def test_2_permutation_invariance_bulk():
    started = time.perf_counter()
    gen = np.random.default_rng(2002)
    for trial in range(1000):
        n = int(gen.integers(1, 129))
        m = int(gen.integers(1, 33))
        d = int(gen.choice([2, 3]))
        points64 = gen.uniform(-1, 1, size=(n, d))
        stars64 = gen.uniform(-1, 1, size=(m, d))
        perm = gen.permutation(n)
        for dtype, tol in ((np.float32, 1e-5), (np.float64, 1e-10)):
            points = points64.astype(dtype)
            stars = stars64.astype(dtype)
            for measure in ("gaussian", "exponential"):
                c = Constellation(stars=stars, measure=measure)
                diff = np.abs(forward(points, c) - forward(points[perm], c)).max()
                assert diff <= tol, (trial, measure, dtype, diff)
            c = Constellation(stars=stars, measure="minimum")
            np.testing.assert_array_equal(forward(points, c), forward(points[perm], c))
    elapsed = time.perf_counter() - started
    assert elapsed < 30
    print(f"ACCEPTANCE 2 permutation-invariance: PASS (1000 triples, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 3. reference model size: 512 stars, 3-D, 40 classes
# ---------------------------------------------------------------------------

def test_3_parameter_count_512_stars():
    model = init_model(Rng(0), 512, 3, 40, "gaussian")
    reported = parameter_count(model)
    # independent count from the architecture arithmetic
    m, d, h1, h2, k = 512, 3, 512, 256, 40
    expected = m * d + (m * h1 + h1) + (h1 * h2 + h2) + (h2 * k + k) + 2 * (h1 + h2)
    assert expected == 407_336
    assert reported == expected
    assert 400_000 <= reported <= 415_000
    assert f"total trainable parameters: {expected}" in summary(model)
    print(f"ACCEPTANCE 3 parameter-count: PASS ({reported} parameters)")


# ---------------------------------------------------------------------------
# 4 + 6. MNIST end to end (skips when the IDX files are unavailable)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def mnist_clouds(mnist_paths):
    train_images, train_labels = load_idx(mnist_paths["train_images"],
                                          mnist_paths["train_labels"])
    test_images, test_labels = load_idx(mnist_paths["test_images"],
                                        mnist_paths["test_labels"])
    bright_counts = (train_images > BRIGHTNESS_THRESHOLD).sum(axis=(1, 2))
    assert bright_counts.max() == CLOUD_POINTS  # the padding target is the set maximum
    train_set = convert_images(train_images, train_labels, Rng(11), split="train")
    test_set = convert_images(test_images, test_labels, Rng(12), split="test")
    return train_set, test_set


@pytest.fixture(scope="session")
def mnist_gaussian_run(mnist_clouds, tmp_path_factory):
    train_set, test_set = mnist_clouds
    snapshot_dir = tmp_path_factory.mktemp("mnist_snapshots")
    config = TrainConfig(measure="gaussian", stars=256, epochs=50,
                         snapshot_epochs=(0, 10, 100, 200), seed=0)
    model = init_model(Rng(config.seed), config.stars, train_set.dim,
                       train_set.class_count, config.measure,
                       dropout_rate=config.dropout_rate, dtype=config.dtype)
    init_stars = model.constellation.stars.copy()
    model, report = train(model, train_set, test_set, config,
                          snapshot_dir=snapshot_dir,
                          progress=lambda r: print(
                              f"  mnist epoch {r.epoch[-1]}: test_acc={r.test_acc[-1]:.4f}"),
                          stop_when=lambda r: r.test_acc[-1] >= 0.975)
    return {"model": model, "report": report, "init_stars": init_stars,
            "snapshot_dir": snapshot_dir, "config": config}


@pytest.mark.slow
def test_4_mnist_reaches_975_within_50_epochs(mnist_gaussian_run):
    report = mnist_gaussian_run["report"]
    best = max(report.test_acc)
    assert len(report.epoch) <= 50
    assert best >= 0.975, f"best test accuracy {best:.4f} after {report.epoch[-1]} epochs"
    print(f"ACCEPTANCE 4 mnist-accuracy: PASS ({best:.4f} at epoch {report.epoch[-1]})")


@pytest.mark.slow
def test_6_star_migration_snapshots(mnist_gaussian_run):
    run = mnist_gaussian_run
    config = run["config"]
    epochs_run = len(run["report"].epoch)
    expected_epochs = sorted(e for e in config.snapshot_epochs if e <= epochs_run)
    init_stars = run["init_stars"]
    displacement_at = {}
    for epoch in expected_epochs:
        path = run["snapshot_dir"] / f"constellation_epoch_{epoch:04d}.csv"
        snap_epoch, stars = read_constellation_snapshot(path)
        assert snap_epoch == epoch
        assert stars.shape == (config.stars, 2)  # exactly one row per star
        displacement_at[epoch] = float(
            np.linalg.norm(stars - init_stars, axis=1).mean())
    # mean displacement must be material by epoch 100 (or by the end of a
    # run that stopped earlier, using its last written snapshot)
    measured_epoch = max(e for e in expected_epochs if e <= 100)
    assert displacement_at[measured_epoch] > 0.05, displacement_at
    final = float(np.linalg.norm(
        run["model"].constellation.stars - init_stars, axis=1).mean())
    assert final > 0.05
    print(f"ACCEPTANCE 6 star-migration: PASS "
          f"(displacement {displacement_at[measured_epoch]:.3f} at epoch "
          f"{measured_epoch}, {final:.3f} at the end)")


# ---------------------------------------------------------------------------
# 5. accuracy grows from 32 to 128 stars for every measure
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_5_star_count_sweep_trend(mnist_clouds):
    from ursa import LabeledCloudSet

    started = time.perf_counter()
    train_full, test_full = mnist_clouds
    train_sub = LabeledCloudSet(clouds=train_full.clouds[:5000],
                                labels=train_full.labels[:5000], class_count=10)
    test_sub = LabeledCloudSet(clouds=test_full.clouds[:2000],
                               labels=test_full.labels[:2000], class_count=10,
                               split="test")
    means = {}
    for measure in MEASURES:
        for stars in (32, 128):
            accs = []
            for seed in range(3):
                config = TrainConfig(measure=measure, stars=stars, epochs=6, seed=seed)
                model = init_model(Rng(seed), stars, 2, 10, measure,
                                   dropout_rate=config.dropout_rate, dtype=config.dtype)
                model, _ = train(model, train_sub, None, config)
                accs.append(evaluate(model, test_sub))
            means[measure, stars] = float(np.mean(accs))
            print(f"  sweep {measure} m={stars}: mean={means[measure, stars]:.4f}")
    for measure in MEASURES:
        assert means[measure, 128] > means[measure, 32], means
    elapsed = time.perf_counter() - started
    assert elapsed < 7200
    print(f"ACCEPTANCE 5 sweep-trend: PASS ({elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# 7. synthetic 40-class archive round trip and training smoke run
# ---------------------------------------------------------------------------

def test_7_synthetic_archive_round_trip_and_smoke(tmp_path):
    started = time.perf_counter()
    train_set, test_set = make_synthetic_dataset(Rng(7), class_count=40,
                                                 train_per_class=6, test_per_class=2,
                                                 points=2048, dim=3)
    path = tmp_path / "synthetic.ursa"
    save_cloud_archive(path, train_set)
    loaded = load_cloud_archive(path)
    np.testing.assert_array_equal(loaded.clouds, train_set.clouds)
    np.testing.assert_array_equal(loaded.labels, train_set.labels)
    assert loaded.class_count == 40
    assert loaded.points_per_cloud == 2048 and loaded.dim == 3

    config = TrainConfig(measure="gaussian", stars=64, epochs=3, batch_size=16, seed=1)
    model = init_model(Rng(1), 64, 3, 40, "gaussian",
                       dropout_rate=config.dropout_rate, dtype=config.dtype)
    model, report = train(model, loaded, test_set, config)
    acc = report.test_acc[-1]
    assert np.isfinite(report.train_loss).all()
    assert acc > 0.05, f"smoke accuracy {acc:.4f} not above chance"
    elapsed = time.perf_counter() - started
    assert elapsed < 1200
    print(f"ACCEPTANCE 7 synthetic-40-class: PASS (accuracy {acc:.4f}, {elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# 8. duplicated points: exact for minimum, additive for gaussian
# ---------------------------------------------------------------------------

def test_8_duplicate_point_invariance():
    started = time.perf_counter()
    gen = np.random.default_rng(8008)
    for trial in range(100):
        n = int(gen.integers(2, 65))
        m = int(gen.integers(1, 17))
        d = int(gen.choice([2, 3]))
        points = gen.uniform(-1, 1, size=(n, d))
        stars = gen.uniform(-1, 1, size=(m, d))
        row = int(gen.integers(0, n))
        dup = np.concatenate([points, points[row:row + 1]])

        minimum = Constellation(stars=stars, measure="minimum")
        np.testing.assert_array_equal(forward(dup, minimum), forward(points, minimum))

        gaussian = Constellation(stars=stars, measure="gaussian")
        contribution = np.exp(-((points[row] - stars) ** 2).sum(axis=1)
                              / (2 * gaussian.sigma ** 2))
        np.testing.assert_allclose(forward(dup, gaussian),
                                   forward(points, gaussian) + contribution,
                                   rtol=1e-12, atol=1e-15)
    elapsed = time.perf_counter() - started
    assert elapsed < 10
    print(f"ACCEPTANCE 8 duplicate-points: PASS ({elapsed:.1f}s)")
